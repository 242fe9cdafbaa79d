//! Collinearity and prediction-error diagnostics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{LcenError, Result};

/// Variance inflation factor of every column: `1 / (1 - R^2)` where `R^2`
/// comes from regressing the column on all others with an intercept.
/// Perfectly explained columns get `f64::INFINITY`.
pub fn vif(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    let (n, p) = x.shape();
    if p < 2 {
        return Err(LcenError::InvalidConfig("VIF needs at least 2 columns".into()));
    }
    if n <= p {
        return Err(LcenError::InsufficientData(format!(
            "VIF on {p} columns needs more than {p} rows, got {n}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LcenError::Data("VIF input contains non-finite values".into()));
    }
    (0..p)
        .map(|j| {
            let target = x.column(j).into_owned();
            let others: Vec<usize> = (0..p).filter(|&k| k != j).collect();
            let mut design = DMatrix::from_element(n, p, 1.0);
            for (c, &k) in others.iter().enumerate() {
                design.set_column(c + 1, &x.column(k));
            }
            let centered = target.add_scalar(-target.mean());
            let tss = centered.norm_squared();
            if tss == 0.0 {
                return Ok(f64::INFINITY);
            }
            let rss = residual_ss(&design, &target);
            let r2 = 1.0 - rss / tss;
            Ok(if r2 >= 1.0 - 1e-12 {
                f64::INFINITY
            } else {
                1.0 / (1.0 - r2)
            })
        })
        .collect()
}

fn residual_ss(design: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let svd = design.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let tol = max_sv * design.nrows().max(design.ncols()) as f64 * f64::EPSILON;
    let beta = svd.solve(y, tol).expect("both factors were computed");
    (y - design * beta).norm_squared()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mse: f64,
    /// Mean of `100 |y - yhat| / |y|` over rows with non-zero `y`, in
    /// percent; `None` when every target is zero.
    pub mean_relative_error: Option<f64>,
}

pub fn metrics(y: &[f64], pred: &[f64]) -> Result<Metrics> {
    if y.len() != pred.len() {
        return Err(LcenError::DimensionMismatch {
            expected: y.len(),
            got: pred.len(),
        });
    }
    if y.is_empty() {
        return Err(LcenError::InsufficientData("no rows to score".into()));
    }
    let mse = y.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64;
    let rel: Vec<f64> = y
        .iter()
        .zip(pred)
        .filter(|(a, _)| **a != 0.0)
        .map(|(a, b)| 100.0 * ((a - b) / a).abs())
        .collect();
    let mean_relative_error = (!rel.is_empty()).then(|| rel.iter().sum::<f64>() / rel.len() as f64);
    Ok(Metrics {
        rmse: mse.sqrt(),
        mse,
        mean_relative_error,
    })
}

/// Mean relative error, failing when no row has a non-zero target.
pub fn mean_relative_error(y: &[f64], pred: &[f64]) -> Result<f64> {
    metrics(y, pred)?
        .mean_relative_error
        .ok_or_else(|| LcenError::Data("mean relative error is undefined when every target is zero".into()))
}
