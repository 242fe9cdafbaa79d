//! Synthetic benchmark generators, embedded Kepler tables and CSV I/O.
//!
//! Generators draw every input row first and then one standard normal per
//! row from the same seeded stream, so datasets that differ only in noise
//! level share both `X` and the underlying noise draws.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::{Factor, FeatureTerm, History, Variable};
use crate::error::{LcenError, Result};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Inputs, target and column names of a regression problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub feature_names: Vec<String>,
    pub target_name: String,
}

impl Dataset {
    /// Builds a dataset with default names `X0..` and `y`.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let feature_names = (0..x.ncols()).map(|k| format!("X{k}")).collect();
        let d = Dataset {
            x,
            y,
            feature_names,
            target_name: "y".to_string(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn with_names(mut self, feature_names: &[&str], target_name: &str) -> Result<Self> {
        self.feature_names = feature_names.iter().map(|s| s.to_string()).collect();
        self.target_name = target_name.to_string();
        self.validate()?;
        Ok(self)
    }

    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.y.len() != self.x.nrows() {
            return Err(LcenError::DimensionMismatch {
                expected: self.x.nrows(),
                got: self.y.len(),
            });
        }
        if self.feature_names.len() != self.x.ncols() {
            return Err(LcenError::DimensionMismatch {
                expected: self.x.ncols(),
                got: self.feature_names.len(),
            });
        }
        if self.y.len() < 2 {
            return Err(LcenError::InsufficientData("need at least 2 rows".into()));
        }
        if self.x.iter().chain(self.y.iter()).any(|v| !v.is_finite()) {
            return Err(LcenError::Data("dataset contains non-finite values".into()));
        }
        Ok(())
    }

    /// Rows `range` as a new dataset.
    pub fn slice_rows(&self, start: usize, len: usize) -> Dataset {
        Dataset {
            x: self.x.rows(start, len).into_owned(),
            y: self.y.rows(start, len).into_owned(),
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
        }
    }

    /// The last `depth` rows as forecasting history.
    pub fn tail_history(&self, depth: usize) -> History {
        History::from_series(&self.x, &self.y, self.nrows(), depth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseAmount {
    /// Noise standard deviation as a percentage of the noiseless target's
    /// standard deviation.
    Level(f64),
    /// Noise variance in target units.
    Variance(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub amount: NoiseAmount,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none(seed: u64) -> Self {
        NoiseSpec {
            amount: NoiseAmount::Level(0.0),
            seed,
        }
    }

    pub fn level(percent: f64, seed: u64) -> Self {
        NoiseSpec {
            amount: NoiseAmount::Level(percent),
            seed,
        }
    }

    pub fn variance(variance: f64, seed: u64) -> Self {
        NoiseSpec {
            amount: NoiseAmount::Variance(variance),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let v = match self.amount {
            NoiseAmount::Level(v) | NoiseAmount::Variance(v) => v,
        };
        if !(v.is_finite() && v >= 0.0) {
            return Err(LcenError::InvalidConfig(format!(
                "noise amount must be finite and >= 0, got {v}"
            )));
        }
        Ok(())
    }

    /// Noise standard deviation for a signal with the given values.
    fn scale(&self, signal: &[f64]) -> f64 {
        match self.amount {
            NoiseAmount::Level(p) => p / 100.0 * population_std(signal),
            NoiseAmount::Variance(v) => v.sqrt(),
        }
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

fn population_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

fn standard_normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn add_noise(clean: &[f64], z: &[f64], scale: f64) -> DVector<f64> {
    DVector::from_iterator(clean.len(), clean.iter().zip(z).map(|(c, e)| c + scale * e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMeta {
    pub generator: String,
    pub parameters: BTreeMap<String, f64>,
    pub seed: u64,
}

/// A generated dataset together with the model that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub data: Dataset,
    /// Target before noise was added.
    pub noiseless_y: DVector<f64>,
    pub true_support: Vec<FeatureTerm>,
    pub true_coefficients: Vec<f64>,
    pub true_intercept: f64,
    pub meta: GeneratorMeta,
}

/// JSON sidecar written next to a generated CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub meta: GeneratorMeta,
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub true_support: Vec<FeatureTerm>,
    pub true_coefficients: Vec<f64>,
    pub true_intercept: f64,
}

impl GeneratedDataset {
    pub fn sidecar(&self) -> Sidecar {
        Sidecar {
            meta: self.meta.clone(),
            feature_names: self.data.feature_names.clone(),
            target_name: self.data.target_name.clone(),
            true_support: self.true_support.clone(),
            true_coefficients: self.true_coefficients.clone(),
            true_intercept: self.true_intercept,
        }
    }

    /// Evaluates the true model on every row of `X`.
    pub fn true_values(&self) -> Result<Vec<f64>> {
        evaluate_truth(
            &self.true_support,
            &self.true_coefficients,
            self.true_intercept,
            &self.data.x,
        )
    }

    /// Writes `path` as CSV and `path` with a `.json` extension as sidecar.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_csv(path, &self.data)?;
        let sidecar = serde_json::to_string_pretty(&self.sidecar())?;
        std::fs::write(path.with_extension("json"), sidecar + "\n")?;
        Ok(())
    }
}

pub(crate) fn evaluate_truth(
    terms: &[FeatureTerm],
    coefs: &[f64],
    intercept: f64,
    x: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    (0..x.nrows())
        .map(|i| {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            let values = crate::basis::evaluate_terms(terms, &row, &History::default())?;
            Ok(intercept + values.iter().zip(coefs).map(|(v, c)| v * c).sum::<f64>())
        })
        .collect()
}

fn check_n(n: usize) -> Result<()> {
    if n < 10 {
        return Err(LcenError::InvalidConfig(format!("need n >= 10, got {n}")));
    }
    Ok(())
}

fn linear_term(k: usize) -> FeatureTerm {
    FeatureTerm::new(vec![Factor::power(Variable::Input(k), 0, 1)]).expect("well-formed")
}

pub const LINEAR5_COEFFICIENTS: [f64; 5] = [-2.8, -2.7, -5.3, 4.3, 9.0];

/// `y = -2.8 X0 - 2.7 X1 - 5.3 X2 + 4.3 X3 + 9.0 X4 + e` with `X ~ U(1, 10)^5`.
pub fn gen_linear5(n: usize, noise: NoiseSpec) -> Result<GeneratedDataset> {
    check_n(n)?;
    noise.validate()?;
    let mut rng = noise.rng();
    let mut x = DMatrix::zeros(n, 5);
    for i in 0..n {
        for k in 0..5 {
            x[(i, k)] = rng.random_range(1.0..10.0);
        }
    }
    let clean: Vec<f64> = (0..n)
        .map(|i| (0..5).map(|k| LINEAR5_COEFFICIENTS[k] * x[(i, k)]).sum())
        .collect();
    let z = standard_normals(&mut rng, n);
    let y = add_noise(&clean, &z, noise.scale(&clean));
    Ok(GeneratedDataset {
        data: Dataset::new(x, y)?,
        noiseless_y: DVector::from_vec(clean),
        true_support: (0..5).map(linear_term).collect(),
        true_coefficients: LINEAR5_COEFFICIENTS.to_vec(),
        true_intercept: 0.0,
        meta: meta("linear5", &[("n", n as f64)], &noise),
    })
}

/// `X1 = X0 + e1`, `y = 2 X0 + 2 X1 + e2` with `X0 ~ U(1, 10)`. A level
/// for `e1` is relative to the standard deviation of `X0`; a level for `e2`
/// is relative to the noiseless target. `X0` and `e1` come from `eps1`'s
/// seed, `e2` from `eps2`'s.
pub fn gen_multicollinear(n: usize, eps1: NoiseSpec, eps2: NoiseSpec) -> Result<GeneratedDataset> {
    check_n(n)?;
    eps1.validate()?;
    eps2.validate()?;
    let mut rng = eps1.rng();
    let x0: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..10.0)).collect();
    let z1 = standard_normals(&mut rng, n);
    let s1 = eps1.scale(&x0);
    let x1: Vec<f64> = x0.iter().zip(&z1).map(|(a, e)| a + s1 * e).collect();
    let clean: Vec<f64> = x0.iter().zip(&x1).map(|(a, b)| 2.0 * a + 2.0 * b).collect();
    let z2 = standard_normals(&mut eps2.rng(), n);
    let y = add_noise(&clean, &z2, eps2.scale(&clean));
    let x = DMatrix::from_fn(n, 2, |i, k| if k == 0 { x0[i] } else { x1[i] });
    let mut m = meta(
        "multicollinear",
        &[("n", n as f64), ("eps2_seed", eps2.seed as f64)],
        &eps1,
    );
    insert_noise(&mut m.parameters, "eps2_", &eps2);
    Ok(GeneratedDataset {
        data: Dataset::new(x, y)?,
        noiseless_y: DVector::from_vec(clean),
        true_support: vec![linear_term(0), linear_term(1)],
        true_coefficients: vec![2.0, 2.0],
        true_intercept: 0.0,
        meta: m,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MassRange {
    UpTo10,
    UpTo100,
}

impl MassRange {
    pub fn max(self) -> f64 {
        match self {
            MassRange::UpTo10 => 10.0,
            MassRange::UpTo100 => 100.0,
        }
    }

    pub fn from_max(max: f64) -> Result<Self> {
        match max {
            m if m == 10.0 => Ok(MassRange::UpTo10),
            m if m == 100.0 => Ok(MassRange::UpTo100),
            m => Err(LcenError::InvalidConfig(format!(
                "mass range maximum must be 10 or 100, got {m}"
            ))),
        }
    }
}

/// Relativistic energy `E^2 = c^4 m^2 + c^2 m^2 v^2` with `m ~ U(1, max)`
/// and `v ~ U(5e7, 2.5e8)` m/s. Columns are named `m` and `v`.
pub fn gen_relativistic(n: usize, mass: MassRange, noise: NoiseSpec) -> Result<GeneratedDataset> {
    check_n(n)?;
    noise.validate()?;
    let mut rng = noise.rng();
    let mut x = DMatrix::zeros(n, 2);
    for i in 0..n {
        x[(i, 0)] = rng.random_range(1.0..mass.max());
        x[(i, 1)] = rng.random_range(5e7..2.5e8);
    }
    let c2 = SPEED_OF_LIGHT * SPEED_OF_LIGHT;
    let coefs = vec![c2 * c2, c2];
    let clean: Vec<f64> = (0..n)
        .map(|i| {
            let (m, v) = (x[(i, 0)], x[(i, 1)]);
            coefs[0] * m * m + coefs[1] * m * m * v * v
        })
        .collect();
    let z = standard_normals(&mut rng, n);
    let y = add_noise(&clean, &z, noise.scale(&clean));
    let m2 = Factor::power(Variable::Input(0), 0, 2);
    let v2 = Factor::power(Variable::Input(1), 0, 2);
    Ok(GeneratedDataset {
        data: Dataset::new(x, y)?.with_names(&["m", "v"], "E2")?,
        noiseless_y: DVector::from_vec(clean),
        true_support: vec![FeatureTerm::new(vec![m2])?, FeatureTerm::new(vec![m2, v2])?],
        true_coefficients: coefs,
        true_intercept: 0.0,
        meta: meta("relativistic", &[("n", n as f64), ("mass_max", mass.max())], &noise),
    })
}

pub const QUARTIC_COEFFICIENTS: [f64; 4] = [1.0, 0.5, 0.1, 0.05];

/// `y = X + 0.5 X^2 + 0.1 X^3 + 0.05 X^4 + e` with `X ~ N(0, 5)` (variance
/// 5). Returns `(train, test)`; both carry noise from the same spec.
pub fn gen_quartic(n_train: usize, n_test: usize, noise: NoiseSpec) -> Result<(GeneratedDataset, GeneratedDataset)> {
    noise.validate()?;
    if n_train < 2 || n_test < 1 {
        return Err(LcenError::InvalidConfig(
            "need at least 2 training and 1 test point".into(),
        ));
    }
    let mut rng = noise.rng();
    let sd = 5f64.sqrt();
    let xs: Vec<f64> = (0..n_train + n_test)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let z = standard_normals(&mut rng, n_train + n_test);
    let clean: Vec<f64> = xs
        .iter()
        .map(|&x| {
            QUARTIC_COEFFICIENTS
                .iter()
                .enumerate()
                .map(|(p, c)| c * x.powi(p as i32 + 1))
                .sum()
        })
        .collect();
    let scale = noise.scale(&clean[..n_train]);
    let support: Vec<FeatureTerm> = (1..=4)
        .map(|b| FeatureTerm::new(vec![Factor::power(Variable::Input(0), 0, b)]).expect("well-formed"))
        .collect();
    let part = |range: std::ops::Range<usize>, role: f64| -> Result<GeneratedDataset> {
        let len = range.len();
        let x = DMatrix::from_iterator(len, 1, xs[range.clone()].iter().copied());
        let y = add_noise(&clean[range.clone()], &z[range.clone()], scale);
        Ok(GeneratedDataset {
            data: Dataset::new(x, y)?,
            noiseless_y: DVector::from_column_slice(&clean[range]),
            true_support: support.clone(),
            true_coefficients: QUARTIC_COEFFICIENTS.to_vec(),
            true_intercept: 0.0,
            meta: meta(
                "quartic",
                &[
                    ("n_train", n_train as f64),
                    ("n_test", n_test as f64),
                    ("test_split", role),
                ],
                &noise,
            ),
        })
    };
    Ok((part(0..n_train, 0.0)?, part(n_train..n_train + n_test, 1.0)?))
}

fn meta(generator: &str, params: &[(&str, f64)], noise: &NoiseSpec) -> GeneratorMeta {
    let mut parameters: BTreeMap<String, f64> = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    insert_noise(&mut parameters, "", noise);
    GeneratorMeta {
        generator: generator.to_string(),
        parameters,
        seed: noise.seed,
    }
}

fn insert_noise(parameters: &mut BTreeMap<String, f64>, prefix: &str, noise: &NoiseSpec) {
    let (key, v) = match noise.amount {
        NoiseAmount::Level(v) => ("noise_level_percent", v),
        NoiseAmount::Variance(v) => ("noise_variance", v),
    };
    parameters.insert(format!("{prefix}{key}"), v);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeplerVersion {
    Original1619,
    Modern,
}

/// Semi-major axis (AU) and sidereal period (days), Mercury to Neptune.
/// J2000 mean orbital elements (Standish, JPL "Keplerian Elements for
/// Approximate Positions of the Major Planets") and NASA planetary fact
/// sheet sidereal periods.
const KEPLER_MODERN: [(f64, f64); 8] = [
    (0.38709927, 87.969),
    (0.72333566, 224.701),
    (1.00000261, 365.256),
    (1.52371034, 686.980),
    (5.20288700, 4332.589),
    (9.53667594, 10759.22),
    (19.18916464, 30685.4),
    (30.06992276, 60189.0),
];

/// The six planets known in 1619, Mercury to Saturn, as tabulated in
/// Harmonices Mundi book V (republished in Stephenson, "Kepler's Physical
/// Astronomy").
const KEPLER_1619: [(f64, f64); 6] = [
    (0.388, 87.97),
    (0.724, 224.70),
    (1.000, 365.26),
    (1.524, 686.98),
    (5.200, 4332.62),
    (9.510, 10759.2),
];

/// Planetary orbits with input `a` (AU) and target `T` (days). The true
/// model is `T = k a^1.5`.
pub fn kepler_data(version: KeplerVersion) -> GeneratedDataset {
    let (table, k): (&[(f64, f64)], f64) = match version {
        KeplerVersion::Modern => (&KEPLER_MODERN, 365.25),
        KeplerVersion::Original1619 => (&KEPLER_1619, 365.15),
    };
    let x = DMatrix::from_iterator(table.len(), 1, table.iter().map(|r| r.0));
    let y = DVector::from_iterator(table.len(), table.iter().map(|r| r.1));
    let noiseless_y = x.column(0).map(|a| k * a.powf(1.5));
    let name = match version {
        KeplerVersion::Modern => "kepler_modern",
        KeplerVersion::Original1619 => "kepler_1619",
    };
    GeneratedDataset {
        data: Dataset::new(x, y)
            .and_then(|d| d.with_names(&["a"], "T"))
            .expect("embedded table is valid"),
        noiseless_y,
        true_support: vec![FeatureTerm::new(vec![Factor::half_power(Variable::Input(0), 0, 2)]).expect("well-formed")],
        true_coefficients: vec![k],
        true_intercept: 0.0,
        meta: GeneratorMeta {
            generator: name.to_string(),
            parameters: BTreeMap::from([("n".to_string(), table.len() as f64)]),
            seed: 0,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvOptions {
    pub delimiter: u8,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions { delimiter: b',' }
    }
}

/// Reads a numeric CSV with a header row. Every column other than
/// `target_column` becomes a feature, in file order. Row order is kept.
pub fn load_csv(path: &Path, target_column: &str, options: &CsvOptions) -> Result<Dataset> {
    let file = File::open(path)?;
    read_csv(file, target_column, options)
}

pub fn read_csv(reader: impl std::io::Read, target_column: &str, options: &CsvOptions) -> Result<Dataset> {
    let (headers, rows) = read_table(reader, options)?;
    let target = headers.iter().position(|h| h == target_column).ok_or_else(|| {
        LcenError::Data(format!(
            "target column '{target_column}' not found in header {headers:?}"
        ))
    })?;
    let features: Vec<usize> = (0..headers.len()).filter(|&c| c != target).collect();
    let x = DMatrix::from_fn(rows.len(), features.len(), |i, j| rows[i][features[j]]);
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r[target]));
    let d = Dataset {
        x,
        y,
        feature_names: features.iter().map(|&c| headers[c].clone()).collect(),
        target_name: headers[target].clone(),
    };
    d.validate()?;
    Ok(d)
}

/// Reads the named feature columns, in the given order, plus the target
/// column when the file has one. Used to score data against a saved model.
pub fn load_inputs(
    path: &Path,
    feature_names: &[String],
    target_column: &str,
    options: &CsvOptions,
) -> Result<(DMatrix<f64>, Option<DVector<f64>>)> {
    let (headers, rows) = read_table(File::open(path)?, options)?;
    let column = |name: &str| headers.iter().position(|h| h == name);
    let features = feature_names
        .iter()
        .map(|f| {
            column(f).ok_or_else(|| LcenError::Data(format!("feature column '{f}' not found in header {headers:?}")))
        })
        .collect::<Result<Vec<usize>>>()?;
    let x = DMatrix::from_fn(rows.len(), features.len(), |i, j| rows[i][features[j]]);
    let y = column(target_column).map(|t| DVector::from_iterator(rows.len(), rows.iter().map(|r| r[t])));
    if x.iter().chain(y.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(LcenError::Data("input contains non-finite values".into()));
    }
    Ok((x, y))
}

fn read_table(reader: impl std::io::Read, options: &CsvOptions) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(LcenError::Data("CSV is empty (no header row)".into()));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let line = r + 2;
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { len, expected_len, .. } => {
                LcenError::Data(format!("line {line}: expected {expected_len} fields, found {len}"))
            }
            _ => LcenError::Csv(e),
        })?;
        let row = record
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.trim().parse::<f64>().map_err(|_| {
                    LcenError::Data(format!(
                        "line {line}, column '{}': '{cell}' is not a number",
                        headers[c]
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(LcenError::Data("CSV has a header but no data rows".into()));
    }
    Ok((headers, rows))
}

/// Writes features then target. Values use the shortest representation
/// that parses back to the same `f64`.
pub fn write_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    let mut header = data.feature_names.clone();
    header.push(data.target_name.clone());
    w.write_record(&header)?;
    for i in 0..data.nrows() {
        let mut rec: Vec<String> = data.x.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(data.y[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a single-column CSV of values under `header`.
pub fn write_column(mut out: impl Write, header: &str, values: &[f64]) -> Result<()> {
    writeln!(out, "{header}")?;
    for v in values {
        writeln!(out, "{v}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear5_examples() {
        let g = gen_linear5(20, NoiseSpec::none(1)).unwrap();
        assert_eq!(g.data.x.shape(), (20, 5));
        assert!(g.data.x.iter().all(|&v| (1.0..10.0).contains(&v)));
        assert_eq!(g.data.y, g.noiseless_y);
        let ones = DMatrix::from_element(1, 5, 1.0);
        let y = evaluate_truth(&g.true_support, &g.true_coefficients, 0.0, &ones).unwrap();
        assert!((y[0] - 2.5).abs() < 1e-12);
        assert!(gen_linear5(9, NoiseSpec::none(1)).is_err());
        assert!(gen_linear5(20, NoiseSpec::level(-1.0, 1)).is_err());
    }

    #[test]
    fn noise_levels_share_inputs_and_draws() {
        let a = gen_linear5(50, NoiseSpec::level(10.0, 3)).unwrap();
        let b = gen_linear5(50, NoiseSpec::level(20.0, 3)).unwrap();
        assert_eq!(a.data.x, b.data.x);
        for i in 0..50 {
            let (ea, eb) = (a.data.y[i] - a.noiseless_y[i], b.data.y[i] - b.noiseless_y[i]);
            assert!((eb - 2.0 * ea).abs() <= 1e-9 * eb.abs().max(1.0));
        }
    }

    #[test]
    fn relativistic_point() {
        let c2 = SPEED_OF_LIGHT * SPEED_OF_LIGHT;
        let g = gen_relativistic(10, MassRange::UpTo10, NoiseSpec::none(0)).unwrap();
        let x = DMatrix::from_row_slice(1, 2, &[5.0, 1e8]);
        let e2 = evaluate_truth(&g.true_support, &g.true_coefficients, 0.0, &x).unwrap()[0];
        let expected = 25.0 * c2 * c2 + 25.0 * 1e16 * c2;
        assert!((e2 - expected).abs() <= 1e-12 * expected);
        assert_eq!(MassRange::from_max(100.0).unwrap(), MassRange::UpTo100);
        assert!(MassRange::from_max(50.0).is_err());
    }

    #[test]
    fn quartic_pair() {
        let (train, test) = gen_quartic(30, 1000, NoiseSpec::variance(0.0, 4)).unwrap();
        assert_eq!((train.data.nrows(), test.data.nrows()), (30, 1000));
        let x = DMatrix::from_element(1, 1, 2.0);
        let y = evaluate_truth(&train.true_support, &train.true_coefficients, 0.0, &x).unwrap()[0];
        assert!((y - 5.6).abs() < 1e-12);
        assert_eq!(train.true_support, test.true_support);
    }

    #[test]
    fn kepler_tables() {
        let modern = kepler_data(KeplerVersion::Modern);
        assert_eq!(modern.data.nrows(), 8);
        let earth = modern.data.y[2] / modern.data.x[(2, 0)].powf(1.5);
        assert!((earth - 365.25).abs() < 0.01);
        let old = kepler_data(KeplerVersion::Original1619);
        assert_eq!(old.data.nrows(), 6);
        assert_eq!(old.true_support[0].display(), "X0^1.5");
    }

    #[test]
    fn csv_errors() {
        let opts = CsvOptions::default();
        let ok = read_csv("a,b,y\n1,2,3\n4,5,6\n".as_bytes(), "y", &opts).unwrap();
        assert_eq!(ok.x.shape(), (2, 2));
        assert_eq!(ok.feature_names, vec!["a", "b"]);
        let err = read_csv("a,b\n1,2\n".as_bytes(), "y", &opts).unwrap_err();
        assert!(err.to_string().contains("'y'"));
        assert!(read_csv("a,y\n1,2\n3\n".as_bytes(), "y", &opts).is_err());
        let err = read_csv("a,y\n1,x\n".as_bytes(), "y", &opts).unwrap_err();
        assert!(err.to_string().contains("'y'"));
        assert!(read_csv("".as_bytes(), "y", &opts).is_err());
        assert!(read_csv("a,y\n".as_bytes(), "y", &opts).is_err());
    }
}
