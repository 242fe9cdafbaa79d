//! K-fold cross-validation over expansion and penalty hyperparameters.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{expand_raw, mean_std, ExpansionConfig, FeatureTerm, RawDesign};
use crate::datagen::Dataset;
use crate::enet::{solve_gram, EnetConfig, Gram};
use crate::error::{LcenError, Result};

/// `n` values evenly spaced in log10 between `10^start` and `10^stop`.
pub fn logspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![10f64.powf(start)],
        _ => (0..n)
            .map(|i| 10f64.powf(start + (stop - start) * i as f64 / (n - 1) as f64))
            .collect(),
    }
}

/// Search space and fixed hyperparameters of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub alphas: Vec<f64>,
    pub l1_ratios: Vec<f64>,
    pub degrees: Vec<usize>,
    pub lags: Vec<usize>,
    pub cutoff: f64,
    pub folds: usize,
}

impl Default for HyperGrid {
    fn default() -> Self {
        let mut alphas = vec![0.0];
        alphas.extend(logspace(-4.3, 0.0, 20));
        HyperGrid {
            alphas,
            l1_ratios: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.97, 0.99],
            degrees: vec![1, 2, 3],
            lags: vec![0],
            cutoff: 5e-2,
            folds: 5,
        }
    }
}

impl HyperGrid {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(LcenError::InvalidConfig(msg.to_string()));
        if self.alphas.is_empty() || self.l1_ratios.is_empty() || self.degrees.is_empty() || self.lags.is_empty() {
            return bad("hyperparameter lists must be non-empty");
        }
        if self.alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return bad("alphas must be finite and >= 0");
        }
        if self.l1_ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad("l1_ratios must lie in [0, 1]");
        }
        if self.degrees.contains(&0) {
            return bad("degrees must be >= 1");
        }
        if !(self.cutoff >= 0.0) {
            return bad("cutoff must be >= 0");
        }
        if self.folds < 2 {
            return bad("folds must be >= 2");
        }
        Ok(())
    }
}

/// Everything a pipeline fit needs besides the data and the stage layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub grid: HyperGrid,
    /// Family set, domain guard and lag-interaction policy; degree and lag
    /// are taken from the grid.
    pub expansion: ExpansionConfig,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            grid: HyperGrid::default(),
            expansion: ExpansionConfig::default(),
            tol: 1e-6,
            max_iter: 10_000,
            seed: 0,
        }
    }
}

impl FitSettings {
    pub fn enet_config(&self, alpha: f64, l1_ratio: f64) -> EnetConfig {
        EnetConfig {
            alpha,
            l1_ratio,
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        for &d in &self.grid.degrees {
            self.expansion.with_degree_lag(d, 0).validate()?;
        }
        self.enet_config(0.0, 1.0).validate()
    }
}

/// Assigns each of `n` samples to one of `k` folds. The first `n % k` folds
/// receive one extra sample. `ordered` keeps contiguous blocks (for time
/// series); otherwise positions are shuffled with `seed`.
pub fn kfold_split(n: usize, k: usize, ordered: bool, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(LcenError::InvalidConfig("need at least 2 folds".into()));
    }
    if n < k {
        return Err(LcenError::InsufficientData(format!(
            "{n} samples cannot fill {k} folds"
        )));
    }
    let (base, extra) = (n / k, n % k);
    let mut by_position = Vec::with_capacity(n);
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        by_position.extend(std::iter::repeat_n(fold, size));
    }
    if ordered {
        return Ok(by_position);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n];
    for (pos, &sample) in order.iter().enumerate() {
        assignment[sample] = by_position[pos];
    }
    Ok(assignment)
}

/// One grid cell of a cross-validation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRecord {
    pub alpha: f64,
    pub l1_ratio: f64,
    pub degree: usize,
    pub lag: usize,
    /// Mean validation MSE across folds, in target units.
    pub mean_mse: Option<f64>,
    pub fold_mse: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub records: Vec<CvRecord>,
    /// Index of the chosen record.
    pub best: usize,
    pub folds: usize,
    pub seed: u64,
}

impl CvResult {
    pub fn chosen(&self) -> &CvRecord {
        &self.records[self.best]
    }

    pub fn min_mse(&self) -> Option<f64> {
        self.records
            .iter()
            .filter_map(|r| r.mean_mse)
            .min_by(|a, b| a.total_cmp(b))
    }
}

/// Lower MSE wins; exact ties go to larger alpha, then smaller degree, then
/// smaller lag, then larger l1_ratio.
fn preference(a: &CvRecord, b: &CvRecord) -> Ordering {
    let (ma, mb) = (a.mean_mse.unwrap_or(f64::INFINITY), b.mean_mse.unwrap_or(f64::INFINITY));
    ma.total_cmp(&mb)
        .then(b.alpha.total_cmp(&a.alpha))
        .then(a.degree.cmp(&b.degree))
        .then(a.lag.cmp(&b.lag))
        .then(b.l1_ratio.total_cmp(&a.l1_ratio))
}

/// The part of the grid one cross-validation run covers.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub alphas: Vec<f64>,
    pub l1_ratios: Vec<f64>,
    pub degrees: Vec<usize>,
    pub lags: Vec<usize>,
    /// Restrict the design to these terms (all must exist in the expansion).
    pub support: Option<Vec<FeatureTerm>>,
}

impl SearchSpace {
    /// Every (alpha, degree, lag) of the grid with the given l1 ratios.
    pub fn full(grid: &HyperGrid, l1_ratios: Vec<f64>) -> Self {
        SearchSpace {
            alphas: grid.alphas.clone(),
            l1_ratios,
            degrees: grid.degrees.clone(),
            lags: grid.lags.clone(),
            support: None,
        }
    }

    /// (alpha, l1_ratio) at a fixed expansion restricted to `support`.
    pub fn restricted(
        grid: &HyperGrid,
        l1_ratios: Vec<f64>,
        degree: usize,
        lag: usize,
        support: Vec<FeatureTerm>,
    ) -> Self {
        SearchSpace {
            alphas: grid.alphas.clone(),
            l1_ratios,
            degrees: vec![degree],
            lags: vec![lag],
            support: Some(support),
        }
    }
}

/// Column indices of `terms` within `available`.
pub(crate) fn locate_terms(available: &[FeatureTerm], terms: &[FeatureTerm]) -> Result<Vec<usize>> {
    terms
        .iter()
        .map(|t| {
            available
                .iter()
                .position(|a| a == t)
                .ok_or_else(|| LcenError::Data(format!("term {t} is not part of the expansion")))
        })
        .collect()
}

pub(crate) fn raw_design(
    data: &Dataset,
    settings: &FitSettings,
    degree: usize,
    lag: usize,
    support: Option<&[FeatureTerm]>,
) -> Result<RawDesign> {
    let cfg = settings.expansion.with_degree_lag(degree, lag);
    let y = (lag > 0).then_some(&data.y);
    let mut raw = expand_raw(&data.x, y, &cfg)?;
    raw.target = Some(data.y.rows(lag, data.y.len() - lag).into_owned());
    if let Some(support) = support {
        let cols = locate_terms(&raw.terms, support)?;
        raw.values = raw.values.select_columns(&cols);
        raw.terms = support.to_vec();
    }
    Ok(raw)
}

/// Sufficient statistics of one fold's rows on the globally standardized
/// design.
struct Block {
    rows: Vec<usize>,
    sum: DVector<f64>,
    cross: DMatrix<f64>,
    zy: DVector<f64>,
    y_sum: f64,
    yy: f64,
}

/// A design standardized once over all rows, with per-fold statistics.
/// Each training Gram is the total minus the held-out block, re-centered
/// and re-scaled with the training rows' own moments.
struct FoldStats {
    z: DMatrix<f64>,
    zy: DVector<f64>,
    /// Global target standard deviation; converts MSE back to raw units.
    y_scale: f64,
    blocks: Vec<Block>,
}

/// Variance below which a training column counts as constant.
const CONSTANT_VARIANCE: f64 = 1e-13;

fn fold_stats(raw: RawDesign, assignment: &[usize], k: usize) -> FoldStats {
    let y = raw.target.expect("cv designs carry a target");
    let mut z = raw.values;
    for j in 0..z.ncols() {
        let (mu, sd) = mean_std(z.column(j).iter());
        let sd = if sd > 0.0 { sd } else { 1.0 };
        z.column_mut(j).apply(|v| *v = (*v - mu) / sd);
    }
    let (y_mu, y_sd) = mean_std(y.iter());
    let y_scale = if y_sd > 0.0 { y_sd } else { 1.0 };
    let zy = y.map(|v| (v - y_mu) / y_scale);
    let blocks = (0..k)
        .map(|f| {
            let rows: Vec<usize> = (0..assignment.len()).filter(|&i| assignment[i] == f).collect();
            let zb = z.select_rows(&rows);
            let yb = DVector::from_iterator(rows.len(), rows.iter().map(|&i| zy[i]));
            Block {
                sum: DVector::from_iterator(zb.ncols(), zb.column_iter().map(|c| c.sum())),
                cross: zb.tr_mul(&zb),
                zy: zb.tr_mul(&yb),
                y_sum: yb.sum(),
                yy: yb.norm_squared(),
                rows,
            }
        })
        .collect();
    FoldStats { z, zy, y_scale, blocks }
}

/// Training Gram of one fold plus what is needed to score its held-out rows.
struct FoldProblem {
    gram: Gram,
    val_x: DMatrix<f64>,
    val_y: DVector<f64>,
    mean: DVector<f64>,
    std: DVector<f64>,
    y_mean: f64,
    y_std: f64,
    y_scale: f64,
}

fn fold_problem(stats: &FoldStats, fold: usize) -> Result<FoldProblem> {
    let p = stats.z.ncols();
    let held = &stats.blocks[fold];
    let n_t = stats.z.nrows() - held.rows.len();
    if n_t < 2 {
        return Err(LcenError::InsufficientData(
            "a training fold has fewer than 2 rows".into(),
        ));
    }
    let nf = n_t as f64;
    let mut sum = DVector::zeros(p);
    let mut cross = DMatrix::zeros(p, p);
    let mut zy = DVector::zeros(p);
    let (mut y_sum, mut yy) = (0.0, 0.0);
    for (b, block) in stats.blocks.iter().enumerate() {
        if b != fold {
            sum += &block.sum;
            cross += &block.cross;
            zy += &block.zy;
            y_sum += block.y_sum;
            yy += block.yy;
        }
    }
    let mean = sum / nf;
    let y_mean = y_sum / nf;
    let y_var = (yy / nf - y_mean * y_mean).max(0.0);
    let y_std = if y_var > CONSTANT_VARIANCE { y_var.sqrt() } else { 1.0 };
    let var: Vec<f64> = (0..p).map(|j| cross[(j, j)] / nf - mean[j] * mean[j]).collect();
    let live: Vec<bool> = var.iter().map(|&v| v > CONSTANT_VARIANCE).collect();
    let std = DVector::from_fn(p, |j, _| if live[j] { var[j].sqrt() } else { 1.0 });
    let g = DMatrix::from_fn(p, p, |i, j| {
        if live[i] && live[j] {
            (cross[(i, j)] / nf - mean[i] * mean[j]) / (std[i] * std[j])
        } else {
            0.0
        }
    });
    let c = DVector::from_fn(p, |j, _| {
        if live[j] {
            (zy[j] / nf - mean[j] * y_mean) / (std[j] * y_std)
        } else {
            0.0
        }
    });
    Ok(FoldProblem {
        gram: Gram {
            g,
            c,
            yy: y_var / (y_std * y_std),
            n: n_t,
        },
        val_x: stats.z.select_rows(&held.rows),
        val_y: DVector::from_iterator(held.rows.len(), held.rows.iter().map(|&i| stats.zy[i])),
        mean,
        std,
        y_mean,
        y_std,
        y_scale: stats.y_scale,
    })
}

impl FoldProblem {
    /// Held-out MSE in raw target units for coefficients fitted on the
    /// fold-standardized training rows.
    fn score(&self, beta: &DVector<f64>) -> f64 {
        let adjusted = beta.component_div(&self.std);
        let offset = self.mean.dot(&adjusted);
        let pred = (&self.val_x * &adjusted).map(|v| self.y_mean + self.y_std * (v - offset));
        let mse = (pred - &self.val_y).norm_squared() / self.val_y.len() as f64;
        mse * self.y_scale * self.y_scale
    }
}

/// Validation MSE for every (l1_ratio, alpha) pair of one fold, indexed
/// `[l1][alpha]`. Alphas are visited in descending order with warm starts.
fn fold_scores(problem: &FoldProblem, settings: &FitSettings, space: &SearchSpace) -> Vec<Vec<Result<f64>>> {
    let mut order: Vec<usize> = (0..space.alphas.len()).collect();
    order.sort_by(|&a, &b| space.alphas[b].total_cmp(&space.alphas[a]));
    space
        .l1_ratios
        .iter()
        .map(|&rho| {
            let mut out: Vec<Result<f64>> = (0..space.alphas.len()).map(|_| Ok(f64::NAN)).collect();
            let mut warm: Option<DVector<f64>> = None;
            for &ai in &order {
                let cfg = settings.enet_config(space.alphas[ai], rho);
                out[ai] = solve_gram(&problem.gram, &cfg, warm.as_ref()).map(|(beta, _, _)| {
                    let mse = problem.score(&beta);
                    warm = Some(beta);
                    mse
                });
            }
            out
        })
        .collect()
}

type CellScores = Result<Vec<Result<Vec<Vec<Result<f64>>>>>>;

/// Scores of every fold at one (degree, lag) cell.
fn cell_scores(data: &Dataset, settings: &FitSettings, space: &SearchSpace, degree: usize, lag: usize) -> CellScores {
    let k = settings.grid.folds;
    let raw = raw_design(data, settings, degree, lag, space.support.as_deref())?;
    let assignment = kfold_split(raw.values.nrows(), k, lag > 0, settings.seed)?;
    let stats = fold_stats(raw, &assignment, k);
    Ok((0..k)
        .into_par_iter()
        .map(|f| fold_problem(&stats, f).map(|problem| fold_scores(&problem, settings, space)))
        .collect())
}

/// Cross-validates every combination of `space` and returns the full table
/// with the preferred combination marked. Folds are contiguous when the lag
/// is positive and shuffled with `settings.seed` otherwise.
pub fn cv_search(data: &Dataset, settings: &FitSettings, space: &SearchSpace) -> Result<CvResult> {
    settings.validate()?;
    if space.alphas.is_empty() || space.l1_ratios.is_empty() || space.degrees.is_empty() || space.lags.is_empty() {
        return Err(LcenError::InvalidConfig("empty search space".into()));
    }
    let k = settings.grid.folds;
    let cells: Vec<(usize, usize)> = space
        .degrees
        .iter()
        .flat_map(|&d| space.lags.iter().map(move |&l| (d, l)))
        .collect();

    let scores: Vec<CellScores> = cells
        .par_iter()
        .map(|&(d, l)| cell_scores(data, settings, space, d, l))
        .collect();

    let mut records = Vec::new();
    for (c, &(degree, lag)) in cells.iter().enumerate() {
        for (ri, &l1_ratio) in space.l1_ratios.iter().enumerate() {
            for (ai, &alpha) in space.alphas.iter().enumerate() {
                let mut record = CvRecord {
                    alpha,
                    l1_ratio,
                    degree,
                    lag,
                    mean_mse: None,
                    fold_mse: vec![],
                    error: None,
                };
                match &scores[c] {
                    Err(e) => record.error = Some(e.to_string()),
                    Ok(fold_results) => {
                        let mut folds = Vec::with_capacity(k);
                        for fr in fold_results {
                            match fr {
                                Err(e) => record.error = Some(e.to_string()),
                                Ok(grid) => match &grid[ri][ai] {
                                    Ok(v) if v.is_finite() => folds.push(*v),
                                    Ok(v) => record.error = Some(format!("non-finite validation error {v}")),
                                    Err(e) => record.error = Some(e.to_string()),
                                },
                            }
                        }
                        if record.error.is_none() {
                            record.mean_mse = Some(folds.iter().sum::<f64>() / folds.len() as f64);
                        }
                        record.fold_mse = folds;
                    }
                }
                records.push(record);
            }
        }
    }

    let best = (0..records.len())
        .filter(|&i| records[i].mean_mse.is_some())
        .min_by(|&a, &b| preference(&records[a], &records[b]))
        .ok_or_else(|| {
            let reason = records.iter().find_map(|r| r.error.clone()).unwrap_or_default();
            LcenError::AllCombinationsFailed(reason)
        })?;
    Ok(CvResult {
        records,
        best,
        folds: k,
        seed: settings.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes(assign: &[usize], k: usize) -> Vec<usize> {
        (0..k).map(|f| assign.iter().filter(|&&a| a == f).count()).collect()
    }

    #[test]
    fn fold_sizes() {
        assert_eq!(sizes(&kfold_split(10, 5, false, 1).unwrap(), 5), vec![2; 5]);
        assert_eq!(sizes(&kfold_split(11, 5, false, 1).unwrap(), 5), vec![3, 2, 2, 2, 2]);
        assert_eq!(kfold_split(7, 3, true, 0).unwrap(), vec![0, 0, 0, 1, 1, 2, 2]);
        assert!(kfold_split(3, 5, false, 0).is_err());
        assert!(kfold_split(10, 1, false, 0).is_err());
    }

    #[test]
    fn folds_are_seeded() {
        let a = kfold_split(50, 5, false, 42).unwrap();
        assert_eq!(a, kfold_split(50, 5, false, 42).unwrap());
        assert_ne!(a, kfold_split(50, 5, false, 43).unwrap());
        assert_ne!(a, kfold_split(50, 5, true, 42).unwrap());
    }

    #[test]
    fn default_grid_matches_reference_lists() {
        let g = HyperGrid::default();
        assert_eq!(g.alphas.len(), 21);
        assert_eq!(g.alphas[0], 0.0);
        assert!((g.alphas[1] - 10f64.powf(-4.3)).abs() < 1e-18);
        assert!((g.alphas[20] - 1.0).abs() < 1e-15);
        assert_eq!(g.l1_ratios.len(), 13);
        assert!(g.validate().is_ok());
        let bad = HyperGrid {
            folds: 1,
            ..HyperGrid::default()
        };
        assert!(bad.validate().is_err());
        let bad = HyperGrid {
            cutoff: -1.0,
            ..HyperGrid::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn tie_breaking_prefers_simpler_models() {
        let rec = |alpha, degree, lag, l1_ratio| CvRecord {
            alpha,
            l1_ratio,
            degree,
            lag,
            mean_mse: Some(1.0),
            fold_mse: vec![],
            error: None,
        };
        assert_eq!(preference(&rec(0.1, 2, 0, 0.5), &rec(0.01, 1, 0, 0.5)), Ordering::Less);
        assert_eq!(preference(&rec(0.1, 1, 0, 0.5), &rec(0.1, 2, 0, 0.5)), Ordering::Less);
        assert_eq!(preference(&rec(0.1, 1, 0, 0.5), &rec(0.1, 1, 1, 0.5)), Ordering::Less);
        assert_eq!(preference(&rec(0.1, 1, 0, 0.9), &rec(0.1, 1, 0, 0.5)), Ordering::Less);
        let mut worse = rec(1.0, 1, 0, 1.0);
        worse.mean_mse = Some(2.0);
        assert_eq!(preference(&rec(0.0, 3, 0, 0.0), &worse), Ordering::Less);
    }
}
