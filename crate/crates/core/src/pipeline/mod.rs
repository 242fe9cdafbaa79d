//! LASSO, clip, elastic-net pipelines and the fitted-model type.
//!
//! A pipeline runs a first cross-validated stage over (alpha, degree, lag),
//! optionally zeroes standardized coefficients below `cutoff`, then refits a
//! second cross-validated stage over (alpha, l1_ratio) on the surviving
//! terms only, and optionally clips again. LCEN is `lasso, clip, enet, clip`.

pub mod cv;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{evaluate_terms, DesignMatrix, FeatureTerm, History, ScalingInfo};
use crate::datagen::Dataset;
use crate::diagnostics::{metrics, Metrics};
use crate::enet::{fit_enet, unscale, Coefficients};
use crate::error::{LcenError, Result};

pub use cv::{cv_search, kfold_split, logspace, CvRecord, CvResult, FitSettings, HyperGrid, SearchSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Lasso,
    Enet,
}

/// Ordered stage layout of a pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub first_stage: Stage,
    pub clip_after_first: bool,
    pub second_stage: Option<Stage>,
    pub clip_after_second: bool,
}

impl PipelineSpec {
    pub const LCEN: PipelineSpec = PipelineSpec::new(Stage::Lasso, true, Some(Stage::Enet), true);
    pub const LC: PipelineSpec = PipelineSpec::new(Stage::Lasso, true, None, false);
    pub const ENC: PipelineSpec = PipelineSpec::new(Stage::Enet, true, None, false);
    pub const LEN: PipelineSpec = PipelineSpec::new(Stage::Lasso, false, Some(Stage::Enet), false);
    pub const LCL: PipelineSpec = PipelineSpec::new(Stage::Lasso, true, Some(Stage::Lasso), true);
    pub const ENCEN: PipelineSpec = PipelineSpec::new(Stage::Enet, true, Some(Stage::Enet), true);

    pub const NAMED: [(&'static str, PipelineSpec); 6] = [
        ("LCEN", Self::LCEN),
        ("LC", Self::LC),
        ("ENC", Self::ENC),
        ("LEN", Self::LEN),
        ("LCL", Self::LCL),
        ("ENCEN", Self::ENCEN),
    ];

    pub const fn new(
        first_stage: Stage,
        clip_after_first: bool,
        second_stage: Option<Stage>,
        clip_after_second: bool,
    ) -> Self {
        PipelineSpec {
            first_stage,
            clip_after_first,
            second_stage,
            clip_after_second,
        }
    }

    pub fn name(&self) -> String {
        Self::NAMED
            .iter()
            .find(|(_, s)| s == self)
            .map(|(n, _)| n.to_string())
            .unwrap_or_else(|| "custom".to_string())
    }
}

impl FromStr for PipelineSpec {
    type Err = LcenError;

    fn from_str(s: &str) -> Result<Self> {
        Self::NAMED
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(s.trim()))
            .map(|(_, spec)| *spec)
            .ok_or_else(|| {
                LcenError::InvalidConfig(format!(
                    "unknown pipeline '{s}' (expected LCEN, LC, ENC, LEN, LCL or ENCEN)"
                ))
            })
    }
}

impl fmt::Display for PipelineSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

fn stage_l1_ratios(stage: Stage, grid: &HyperGrid) -> Vec<f64> {
    match stage {
        Stage::Lasso => vec![1.0],
        Stage::Enet => grid.l1_ratios.clone(),
    }
}

/// Zeroes every coefficient with magnitude below `cutoff`. The intercept is
/// left untouched.
pub fn clip(coefs: &Coefficients, cutoff: f64) -> Coefficients {
    let mut out = coefs.clone();
    out.beta.apply(|b| {
        if b.abs() < cutoff {
            *b = 0.0
        }
    });
    out
}

/// A linear model over symbolic terms in raw units; the prediction path of
/// every fitted pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermModel {
    pub terms: Vec<FeatureTerm>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Rows of history consumed before the first prediction.
    pub lag: usize,
}

impl TermModel {
    pub fn new(terms: Vec<FeatureTerm>, coefficients: Vec<f64>, intercept: f64) -> Result<Self> {
        if terms.len() != coefficients.len() {
            return Err(LcenError::DimensionMismatch {
                expected: terms.len(),
                got: coefficients.len(),
            });
        }
        let lag = terms.iter().map(FeatureTerm::max_lag).max().unwrap_or(0);
        Ok(TermModel {
            terms,
            coefficients,
            intercept,
            lag,
        })
    }

    pub fn predict_row(&self, row: &[f64], history: &History) -> Result<f64> {
        let values = evaluate_terms(&self.terms, row, history)?;
        Ok(self.intercept + values.iter().zip(&self.coefficients).map(|(v, c)| v * c).sum::<f64>())
    }

    /// One-step predictions for rows `lag..n`, using observed outputs as
    /// lagged values.
    pub fn predict(&self, x: &DMatrix<f64>, y: Option<&DVector<f64>>) -> Result<Vec<f64>> {
        let n = x.nrows();
        if self.lag > 0 {
            let y =
                y.ok_or_else(|| LcenError::InvalidConfig("a lagged model needs the observed output series".into()))?;
            if y.len() != n {
                return Err(LcenError::DimensionMismatch {
                    expected: n,
                    got: y.len(),
                });
            }
            if n <= self.lag {
                return Err(LcenError::InsufficientData(format!(
                    "need more than {} rows of history",
                    self.lag
                )));
            }
        }
        let empty = DVector::zeros(n);
        let y = y.unwrap_or(&empty);
        (self.lag..n)
            .map(|t| {
                let row: Vec<f64> = x.row(t).iter().copied().collect();
                let history = if self.lag > 0 {
                    History::from_series(x, y, t, self.lag)
                } else {
                    History::default()
                };
                self.predict_row(&row, &history)
            })
            .collect()
    }

    /// Recursive multi-step forecast: each prediction is appended to the
    /// history as the next lagged output. Models that use current or lagged
    /// inputs need `future_inputs` with one row per step.
    pub fn forecast(
        &self,
        history: &History,
        horizon: usize,
        future_inputs: Option<&DMatrix<f64>>,
    ) -> Result<Vec<f64>> {
        if horizon < 1 {
            return Err(LcenError::InvalidConfig("forecast horizon must be at least 1".into()));
        }
        if history.outputs.len() < self.lag {
            return Err(LcenError::InsufficientData(format!(
                "history holds {} outputs but the model needs {}",
                history.outputs.len(),
                self.lag
            )));
        }
        if let Some(f) = future_inputs {
            if f.nrows() < horizon {
                return Err(LcenError::InsufficientData(format!(
                    "{} future input rows for horizon {horizon}",
                    f.nrows()
                )));
            }
        }
        let mut history = history.clone();
        let mut out = Vec::with_capacity(horizon);
        for h in 0..horizon {
            let row: Vec<f64> = future_inputs
                .map(|f| f.row(h).iter().copied().collect())
                .unwrap_or_default();
            let pred = self.predict_row(&row, &history)?;
            history.push(row, pred);
            out.push(pred);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub alpha: f64,
    pub l1_ratio: f64,
    pub degree: usize,
    pub lag: usize,
    pub cutoff: f64,
    pub first_stage_alpha: f64,
    pub first_stage_l1_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvTables {
    pub first: CvResult,
    pub second: Option<CvResult>,
}

/// Result of a pipeline fit. Serializes to the model JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub pipeline: String,
    pub spec: PipelineSpec,
    /// Surviving terms (intercept excluded).
    pub terms: Vec<FeatureTerm>,
    pub unscaled_beta: Vec<f64>,
    pub intercept: f64,
    pub scaled_beta: Vec<f64>,
    /// Standardization statistics of the surviving columns.
    pub scaling: ScalingInfo,
    pub hyperparameters: Hyperparameters,
    pub cv_table: CvTables,
    /// Terms that entered the second stage.
    pub first_stage_support: Vec<FeatureTerm>,
    pub train_metrics: Metrics,
    pub n_features_selected: usize,
    /// Set when every term was clipped and only the intercept remains.
    pub degenerate: bool,
    pub warnings: Vec<String>,
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub settings: FitSettings,
    pub seed: u64,
    pub library_version: String,
}

impl FittedModel {
    pub fn term_model(&self) -> TermModel {
        TermModel {
            terms: self.terms.clone(),
            coefficients: self.unscaled_beta.clone(),
            intercept: self.intercept,
            lag: self.hyperparameters.lag,
        }
    }

    pub fn lag(&self) -> usize {
        self.hyperparameters.lag
    }

    /// Predictions for rows `lag..n` of `x` (all rows when the lag is 0).
    pub fn predict(&self, x: &DMatrix<f64>, y: Option<&DVector<f64>>) -> Result<Vec<f64>> {
        if x.ncols() != self.feature_names.len() {
            return Err(LcenError::DimensionMismatch {
                expected: self.feature_names.len(),
                got: x.ncols(),
            });
        }
        self.term_model().predict(x, y)
    }

    pub fn forecast(
        &self,
        history: &History,
        horizon: usize,
        future_inputs: Option<&DMatrix<f64>>,
    ) -> Result<Vec<f64>> {
        if self.lag() == 0 {
            return Err(LcenError::InvalidConfig(
                "forecasting requires a model fitted with lag > 0".into(),
            ));
        }
        self.term_model().forecast(history, horizon, future_inputs)
    }

    /// `y = c0 + c1*t1 + ...` using the data's column names.
    pub fn equation(&self) -> String {
        let mut out = format!("{} = {}", self.target_name, fmt_sig(self.intercept, 6));
        for (t, c) in self.terms.iter().zip(&self.unscaled_beta) {
            let sign = if *c < 0.0 { "-" } else { "+" };
            out.push_str(&format!(
                " {sign} {}*{}",
                fmt_sig(c.abs(), 6),
                t.display_named(&self.feature_names, &self.target_name)
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Formats with `sig` significant digits.
pub fn fmt_sig(v: f64, sig: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-4..15).contains(&exp) {
        format!("{:.*e}", sig - 1, v)
    } else {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        format!("{v:.decimals$}")
    }
}

/// Standardized design over the whole dataset at one (degree, lag).
pub(crate) fn full_design(data: &Dataset, settings: &FitSettings, degree: usize, lag: usize) -> Result<DesignMatrix> {
    Ok(cv::raw_design(data, settings, degree, lag, None)?.standardize())
}

fn fit_stage(design: &DesignMatrix, settings: &FitSettings, record: &CvRecord) -> Result<Coefficients> {
    let y = design.standardized_target().expect("pipeline designs carry a target");
    fit_enet(design, &y, &settings.enet_config(record.alpha, record.l1_ratio))
}

fn nonzero_columns(coefs: &Coefficients) -> Vec<usize> {
    (0..coefs.beta.len()).filter(|&j| coefs.beta[j] != 0.0).collect()
}

struct Outcome {
    design: DesignMatrix,
    coefs: Coefficients,
    first: CvResult,
    second: Option<CvResult>,
    first_support: Vec<FeatureTerm>,
    hyper: Hyperparameters,
    warnings: Vec<String>,
}

fn assemble(data: &Dataset, settings: &FitSettings, spec: &PipelineSpec, o: Outcome) -> Result<FittedModel> {
    let keep = nonzero_columns(&o.coefs);
    let design = o.design.select_columns(&keep);
    let coefs = Coefficients {
        beta: o.coefs.beta.select_rows(&keep),
        intercept: o.coefs.intercept,
        n_iters: o.coefs.n_iters,
        converged: o.coefs.converged,
    };
    let (unscaled, intercept) = unscale(&coefs, &design.scaling)?;
    let degenerate = keep.is_empty();
    let mut warnings = o.warnings;
    if degenerate {
        warnings.push("all terms were clipped; the model is intercept-only".to_string());
    }
    if !o.coefs.converged {
        warnings.push(format!(
            "final fit stopped after {} sweeps without converging",
            o.coefs.n_iters
        ));
    }
    let mut model = FittedModel {
        pipeline: spec.name(),
        spec: *spec,
        terms: design.terms.clone(),
        unscaled_beta: unscaled.iter().copied().collect(),
        intercept,
        scaled_beta: coefs.beta.iter().copied().collect(),
        scaling: design.scaling.clone(),
        hyperparameters: o.hyper,
        cv_table: CvTables {
            first: o.first,
            second: o.second,
        },
        first_stage_support: o.first_support,
        train_metrics: Metrics::default(),
        n_features_selected: keep.len(),
        degenerate,
        warnings,
        feature_names: data.feature_names.clone(),
        target_name: data.target_name.clone(),
        settings: settings.clone(),
        seed: settings.seed,
        library_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let pred = model.predict(&data.x, Some(&data.y))?;
    let lag = model.lag();
    model.train_metrics = metrics(&data.y.as_slice()[lag..], &pred)?;
    Ok(model)
}

/// Fits a pipeline: cross-validated first stage over (alpha, degree, lag),
/// optional clip, cross-validated second stage over (alpha, l1_ratio) on the
/// surviving terms at the recorded degree and lag, optional final clip.
pub fn fit_pipeline(data: &Dataset, settings: &FitSettings, spec: &PipelineSpec) -> Result<FittedModel> {
    data.validate()?;
    settings.validate()?;
    let grid = &settings.grid;
    let cutoff = grid.cutoff;

    let first = cv_search(
        data,
        settings,
        &SearchSpace::full(grid, stage_l1_ratios(spec.first_stage, grid)),
    )?;
    let best = first.chosen().clone();
    let design = full_design(data, settings, best.degree, best.lag)?;
    let mut coefs = fit_stage(&design, settings, &best)?;
    if spec.clip_after_first {
        coefs = clip(&coefs, cutoff);
    }
    let survivors = nonzero_columns(&coefs);
    let first_support: Vec<FeatureTerm> = survivors.iter().map(|&j| design.terms[j].clone()).collect();
    let mut hyper = Hyperparameters {
        alpha: best.alpha,
        l1_ratio: best.l1_ratio,
        degree: best.degree,
        lag: best.lag,
        cutoff,
        first_stage_alpha: best.alpha,
        first_stage_l1_ratio: best.l1_ratio,
    };
    let mut warnings = Vec::new();

    let Some(second_stage) = spec.second_stage else {
        let outcome = Outcome {
            design,
            coefs,
            first,
            second: None,
            first_support,
            hyper,
            warnings,
        };
        return assemble(data, settings, spec, outcome);
    };
    if survivors.is_empty() {
        warnings.push("no term survived the first stage".to_string());
        let outcome = Outcome {
            design,
            coefs,
            first,
            second: None,
            first_support,
            hyper,
            warnings,
        };
        return assemble(data, settings, spec, outcome);
    }

    let reduced = design.select_columns(&survivors);
    let space = SearchSpace::restricted(
        grid,
        stage_l1_ratios(second_stage, grid),
        best.degree,
        best.lag,
        first_support.clone(),
    );
    let second = cv_search(data, settings, &space)?;
    let best2 = second.chosen().clone();
    let mut coefs2 = fit_stage(&reduced, settings, &best2)?;
    if spec.clip_after_second {
        coefs2 = clip(&coefs2, cutoff);
    }
    hyper.alpha = best2.alpha;
    hyper.l1_ratio = best2.l1_ratio;
    let outcome = Outcome {
        design: reduced,
        coefs: coefs2,
        first,
        second: Some(second),
        first_support,
        hyper,
        warnings,
    };
    assemble(data, settings, spec, outcome)
}

/// Re-sparsifies a fitted model at each cutoff in turn. Every step clips the
/// previous model's standardized coefficients; when that removes terms and
/// the pipeline has a second stage, the survivors are refit by
/// cross-validation and clipped again. Feature counts never increase.
pub fn sparsify(model: &FittedModel, data: &Dataset, cutoffs: &[f64]) -> Result<Vec<FittedModel>> {
    if cutoffs.windows(2).any(|w| w[1] < w[0]) {
        return Err(LcenError::InvalidConfig("cutoffs must be ascending".into()));
    }
    if cutoffs.first().is_some_and(|&c| c < model.hyperparameters.cutoff) {
        return Err(LcenError::InvalidConfig(
            "cutoffs must not be below the model's cutoff".into(),
        ));
    }
    let mut current = model.clone();
    let mut out = Vec::with_capacity(cutoffs.len());
    for &cutoff in cutoffs {
        let keep: Vec<usize> = (0..current.terms.len())
            .filter(|&j| current.scaled_beta[j].abs() >= cutoff)
            .collect();
        let mut settings = current.settings.clone();
        settings.grid.cutoff = cutoff;
        let next = if keep.len() == current.terms.len() {
            let mut same = current.clone();
            same.hyperparameters.cutoff = cutoff;
            same.settings = settings;
            same
        } else {
            refit_support(&current, data, &settings, &keep)?
        };
        out.push(next.clone());
        current = next;
    }
    Ok(out)
}

fn refit_support(model: &FittedModel, data: &Dataset, settings: &FitSettings, keep: &[usize]) -> Result<FittedModel> {
    let hp = &model.hyperparameters;
    let full = full_design(data, settings, hp.degree, hp.lag)?;
    let support: Vec<FeatureTerm> = keep.iter().map(|&j| model.terms[j].clone()).collect();
    let cols = cv::locate_terms(&full.terms, &support)?;
    let reduced = full.select_columns(&cols);
    let mut hyper = hp.clone();
    hyper.cutoff = settings.grid.cutoff;

    let (coefs, second) = match (model.spec.second_stage, support.is_empty()) {
        (Some(stage), false) => {
            let space = SearchSpace::restricted(
                &settings.grid,
                stage_l1_ratios(stage, &settings.grid),
                hp.degree,
                hp.lag,
                support.clone(),
            );
            let cv = cv_search(data, settings, &space)?;
            let best = cv.chosen().clone();
            let mut c = fit_stage(&reduced, settings, &best)?;
            if model.spec.clip_after_second {
                c = clip(&c, settings.grid.cutoff);
            }
            hyper.alpha = best.alpha;
            hyper.l1_ratio = best.l1_ratio;
            (c, Some(cv))
        }
        _ => {
            let beta = DVector::from_iterator(keep.len(), keep.iter().map(|&j| model.scaled_beta[j]));
            let y = reduced.standardized_target().expect("pipeline designs carry a target");
            let intercept = y.mean() - DVector::from_fn(cols.len(), |j, _| reduced.values.column(j).mean()).dot(&beta);
            (
                Coefficients {
                    beta,
                    intercept,
                    n_iters: 0,
                    converged: true,
                },
                model.cv_table.second.clone(),
            )
        }
    };
    let outcome = Outcome {
        design: reduced,
        coefs,
        first: model.cv_table.first.clone(),
        second,
        first_support: model.first_stage_support.clone(),
        hyper,
        warnings: Vec::new(),
    };
    assemble(data, settings, &model.spec, outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_examples() {
        let c = Coefficients {
            beta: DVector::from_vec(vec![0.5, 1e-4, -0.02]),
            intercept: 3.0,
            n_iters: 1,
            converged: true,
        };
        assert_eq!(clip(&c, 0.0), c);
        let out = clip(&c, 1e-3);
        assert_eq!(out.beta.as_slice(), &[0.5, 0.0, -0.02]);
        assert_eq!(out.intercept, 3.0);
        let all = clip(&c, 10.0);
        assert!(all.beta.iter().all(|&b| b == 0.0));
        assert_eq!(all.intercept, 3.0);
    }

    #[test]
    fn pipeline_names_round_trip() {
        for (name, spec) in PipelineSpec::NAMED {
            assert_eq!(spec.name(), name);
            assert_eq!(name.parse::<PipelineSpec>().unwrap(), spec);
        }
        assert_eq!("lcen".parse::<PipelineSpec>().unwrap(), PipelineSpec::LCEN);
        assert!("LCENX".parse::<PipelineSpec>().is_err());
        assert_eq!(PipelineSpec::new(Stage::Enet, false, None, false).name(), "custom");
    }

    #[test]
    fn term_model_predictions() {
        let constant = TermModel::new(vec![], vec![], 4.5).unwrap();
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        assert_eq!(constant.predict(&x, None).unwrap(), vec![4.5; 3]);

        let double = TermModel::new(vec!["X0".parse().unwrap()], vec![2.0], 0.0).unwrap();
        assert_eq!(double.predict_row(&[3.0], &History::default()).unwrap(), 6.0);
    }

    #[test]
    fn ar1_geometric_rollout() {
        let m = TermModel::new(vec!["y[t-1]".parse().unwrap()], vec![0.5], 0.0).unwrap();
        let h = History::new(vec![vec![]], vec![8.0]);
        assert_eq!(m.forecast(&h, 4, None).unwrap(), vec![4.0, 2.0, 1.0, 0.5]);
        let one = m.forecast(&h, 1, None).unwrap();
        assert_eq!(one[0], m.predict_row(&[], &h).unwrap());
        assert!(m.forecast(&h, 0, None).is_err());
        assert!(m.forecast(&History::default(), 2, None).is_err());
    }

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(fmt_sig(365.2512, 6), "365.251");
        assert_eq!(fmt_sig(8.0776e33, 6), "8.07760e33");
        assert_eq!(fmt_sig(-0.001234567, 3), "-0.00123");
        assert_eq!(fmt_sig(0.0, 6), "0");
    }
}
