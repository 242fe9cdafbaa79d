//! Elastic-net estimation by cyclic coordinate descent.
//!
//! Minimizes
//!
//! ```text
//! (1/2n) ||y - X b||^2 + alpha * (rho * ||b||_1 + (1 - rho)/2 * ||b||_2^2)
//! ```
//!
//! with `rho = l1_ratio`. All work happens on the Gram form
//! `G = X'X/n`, `c = X'y/n`, so one Gram matrix serves a whole alpha path.
//! `alpha = 0` (least squares) and `rho = 0` (ridge) are solved directly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{DesignMatrix, ScalingInfo};
use crate::error::{LcenError, Result};

/// Ridge added to the Gram diagonal when the least-squares system is singular.
pub const RANK_JITTER: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnetConfig {
    pub alpha: f64,
    pub l1_ratio: f64,
    /// Convergence threshold on the largest coefficient change in a sweep.
    pub tol: f64,
    /// Cap on coordinate sweeps.
    pub max_iter: usize,
}

impl Default for EnetConfig {
    fn default() -> Self {
        EnetConfig {
            alpha: 1.0,
            l1_ratio: 0.5,
            tol: 1e-6,
            max_iter: 10_000,
        }
    }
}

impl EnetConfig {
    pub fn new(alpha: f64, l1_ratio: f64) -> Self {
        EnetConfig {
            alpha,
            l1_ratio,
            ..Default::default()
        }
    }

    pub fn lasso(alpha: f64) -> Self {
        Self::new(alpha, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(LcenError::InvalidConfig(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.l1_ratio) {
            return Err(LcenError::InvalidConfig(format!(
                "l1_ratio must lie in [0, 1], got {}",
                self.l1_ratio
            )));
        }
        if !(self.tol > 0.0) {
            return Err(LcenError::InvalidConfig(format!("tol must be > 0, got {}", self.tol)));
        }
        Ok(())
    }

    fn l1(&self) -> f64 {
        self.alpha * self.l1_ratio
    }

    fn l2(&self) -> f64 {
        self.alpha * (1.0 - self.l1_ratio)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    /// One entry per design column (standardized units when fitted on a
    /// [`DesignMatrix`]).
    pub beta: DVector<f64>,
    pub intercept: f64,
    pub n_iters: usize,
    pub converged: bool,
}

/// `sign(z) * max(|z| - t, 0)`.
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Sufficient statistics of a least-squares problem.
#[derive(Debug, Clone)]
pub struct Gram {
    /// `X'X / n`
    pub g: DMatrix<f64>,
    /// `X'y / n`
    pub c: DVector<f64>,
    /// `y'y / n`
    pub yy: f64,
    pub n: usize,
}

impl Gram {
    pub fn new(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(LcenError::DimensionMismatch {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if x.nrows() == 0 {
            return Err(LcenError::InsufficientData("empty design".into()));
        }
        let n = x.nrows() as f64;
        let g = x.tr_mul(x) / n;
        let c = x.tr_mul(y) / n;
        Ok(Gram {
            g,
            c,
            yy: y.dot(y) / n,
            n: x.nrows(),
        })
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// Penalized objective at `beta`.
    pub fn objective(&self, beta: &DVector<f64>, cfg: &EnetConfig) -> f64 {
        let quad = 0.5 * (self.yy - 2.0 * self.c.dot(beta) + beta.dot(&(&self.g * beta)));
        quad + cfg.l1() * beta.lp_norm(1) + 0.5 * cfg.l2() * beta.norm_squared()
    }

    /// `(1/n) X'(y - X beta)` for every column.
    pub fn correlations(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.c - &self.g * beta
    }
}

/// Cyclic coordinate descent with covariance updates. Sweeps alternate
/// between the full coordinate set and the current nonzero set, in index
/// order; convergence is declared only after a full sweep, or earlier when
/// a direct solve on a stable support satisfies the optimality conditions.
pub struct CoordinateDescent<'a> {
    gram: &'a Gram,
    cfg: EnetConfig,
    beta: DVector<f64>,
    /// `G * beta`, kept in sync with `beta`.
    g_beta: DVector<f64>,
    sweeps: usize,
    converged: bool,
    full_next: bool,
}

impl<'a> CoordinateDescent<'a> {
    pub fn new(gram: &'a Gram, cfg: EnetConfig, warm: Option<&DVector<f64>>) -> Self {
        let beta = match warm {
            Some(b) if b.len() == gram.dim() => b.clone(),
            _ => DVector::zeros(gram.dim()),
        };
        let g_beta = &gram.g * &beta;
        CoordinateDescent {
            gram,
            cfg,
            beta,
            g_beta,
            sweeps: 0,
            converged: false,
            full_next: true,
        }
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    fn update(&mut self, j: usize) -> f64 {
        let gjj = self.gram.g[(j, j)];
        let old = self.beta[j];
        let denom = gjj + self.cfg.l2();
        let new = if denom > 0.0 {
            let z = self.gram.c[j] - self.g_beta[j] + gjj * old;
            soft_threshold(z, self.cfg.l1()) / denom
        } else {
            0.0
        };
        let delta = new - old;
        if delta != 0.0 {
            self.beta[j] = new;
            self.g_beta.axpy(delta, &self.gram.g.column(j), 1.0);
        }
        delta.abs()
    }

    /// Runs one sweep and returns the largest coefficient change.
    pub fn sweep(&mut self) -> f64 {
        let full = self.full_next;
        let mut max_change = 0.0f64;
        for j in 0..self.beta.len() {
            if full || self.beta[j] != 0.0 {
                max_change = max_change.max(self.update(j));
            }
        }
        self.sweeps += 1;
        if max_change < self.cfg.tol {
            if full {
                self.converged = true;
            } else {
                self.full_next = true;
            }
        } else {
            self.full_next = false;
        }
        max_change
    }

    /// Finishes from the current iterate with feature-sign search: solve
    /// the stationarity equations on the active set and sign pattern, line
    /// search over sign changes, and admit the worst optimality violator
    /// until every condition holds. Returns `false` (leaving the iterate
    /// untouched) if an active-set system is numerically singular.
    pub fn try_exact(&mut self) -> bool {
        let (l1, l2) = (self.cfg.l1(), self.cfg.l2());
        let p = self.beta.len();
        let bound = l1 + 1e-10;
        let mut beta = self.beta.clone();
        let mut g_beta = self.g_beta.clone();
        let mut active: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
        let mut sign: Vec<f64> = beta.iter().map(|b| b.signum()).collect();
        for _ in 0..(20 * p + 100) {
            let corr = &self.gram.c - &g_beta;
            let stationary = active
                .iter()
                .all(|&j| (corr[j] - l1 * sign[j] - l2 * beta[j]).abs() <= 1e-10);
            if stationary {
                let worst = (0..p)
                    .filter(|&j| beta[j] == 0.0)
                    .max_by(|&a, &b| corr[a].abs().total_cmp(&corr[b].abs()));
                match worst {
                    Some(j) if corr[j].abs() > bound => {
                        active.push(j);
                        active.sort_unstable();
                        sign[j] = corr[j].signum();
                    }
                    _ => {
                        self.beta = beta;
                        self.g_beta = g_beta;
                        self.converged = true;
                        return true;
                    }
                }
            }
            if active.is_empty() {
                continue;
            }
            let g = self.gram.g.select_rows(&active).select_columns(&active);
            let rhs = DVector::from_fn(active.len(), |k, _| self.gram.c[active[k]] - l1 * sign[active[k]]);
            let Some(target) = cholesky_solve(&g, &rhs, l2) else {
                return false;
            };
            let start = DVector::from_fn(active.len(), |k, _| beta[active[k]]);
            let c_active = DVector::from_fn(active.len(), |k, _| self.gram.c[active[k]]);
            let objective = |b: &DVector<f64>| {
                0.5 * b.dot(&(&g * b)) - c_active.dot(b) + l1 * b.lp_norm(1) + 0.5 * l2 * b.norm_squared()
            };
            let mut best = target.clone();
            let mut best_obj = objective(&target);
            for k in 0..active.len() {
                let (a, b) = (start[k], target[k]);
                if a != 0.0 && a.signum() != b.signum() {
                    let t = a / (a - b);
                    let mut point = &start + (&target - &start) * t;
                    point[k] = 0.0;
                    let obj = objective(&point);
                    if obj < best_obj {
                        best_obj = obj;
                        best = point;
                    }
                }
            }
            beta.fill(0.0);
            for (k, &j) in active.iter().enumerate() {
                beta[j] = best[k];
                sign[j] = best[k].signum();
            }
            active.retain(|&j| beta[j] != 0.0);
            g_beta = &self.gram.g * &beta;
        }
        false
    }

    pub fn run(mut self) -> (DVector<f64>, usize, bool) {
        while !self.converged && self.sweeps < self.cfg.max_iter {
            self.sweep();
            if self.converged {
                break;
            }
            if self.sweeps == 20 || self.sweeps.is_multiple_of(500) {
                self.try_exact();
            }
        }
        (self.beta, self.sweeps, self.converged)
    }
}

/// Cholesky solve of `(G + ridge I) b = c`.
fn cholesky_solve(g: &DMatrix<f64>, c: &DVector<f64>, ridge: f64) -> Option<DVector<f64>> {
    let mut a = g.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += ridge;
    }
    let chol = a.cholesky()?;
    let l = chol.l_dirty();
    let diag: Vec<f64> = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    // pivots this small mean the factorization is dominated by rounding
    if !(min > max * 1e-14) {
        return None;
    }
    let sol = chol.solve(c);
    sol.iter().all(|v| v.is_finite()).then_some(sol)
}

/// Least squares from the Gram form; falls back to a jittered ridge solve
/// when the system is rank deficient.
fn least_squares(gram: &Gram) -> Result<DVector<f64>> {
    if gram.dim() == 0 {
        return Ok(DVector::zeros(0));
    }
    if let Some(b) = cholesky_solve(&gram.g, &gram.c, 0.0) {
        return Ok(b);
    }
    let scale = (0..gram.dim())
        .map(|i| gram.g[(i, i)])
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut jitter = RANK_JITTER * scale;
    for _ in 0..8 {
        let mut a = gram.g.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += jitter;
        }
        if let Some(chol) = a.cholesky() {
            let sol = chol.solve(&gram.c);
            if sol.iter().all(|v| v.is_finite()) {
                return Ok(sol);
            }
        }
        jitter *= 100.0;
    }
    Err(LcenError::Numerical(
        "least-squares system could not be factorized".into(),
    ))
}

/// Solves the penalized problem on precomputed statistics.
pub fn solve_gram(gram: &Gram, cfg: &EnetConfig, warm: Option<&DVector<f64>>) -> Result<(DVector<f64>, usize, bool)> {
    cfg.validate()?;
    if cfg.alpha == 0.0 {
        return Ok((least_squares(gram)?, 0, true));
    }
    if cfg.l1_ratio == 0.0 {
        let b = cholesky_solve(&gram.g, &gram.c, cfg.alpha)
            .or_else(|| {
                gram.g
                    .clone()
                    .add_diagonal_ridge(cfg.alpha)
                    .cholesky()
                    .map(|ch| ch.solve(&gram.c))
            })
            .ok_or_else(|| LcenError::Numerical("ridge system could not be factorized".into()))?;
        return Ok((b, 0, true));
    }
    Ok(CoordinateDescent::new(gram, *cfg, warm).run())
}

trait AddRidge {
    fn add_diagonal_ridge(self, r: f64) -> Self;
}

impl AddRidge for DMatrix<f64> {
    fn add_diagonal_ridge(mut self, r: f64) -> Self {
        for i in 0..self.nrows().min(self.ncols()) {
            self[(i, i)] += r;
        }
        self
    }
}

/// Fits on an arbitrary matrix without an intercept. The objective is
/// exactly the one in the module docs; columns need not be standardized.
pub fn fit_enet_matrix(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &EnetConfig) -> Result<Coefficients> {
    let gram = Gram::new(x, y)?;
    let (beta, n_iters, converged) = solve_gram(&gram, cfg, None)?;
    Ok(Coefficients {
        beta,
        intercept: 0.0,
        n_iters,
        converged,
    })
}

/// Centers columns and target, returning means alongside the statistics.
pub(crate) fn centered_gram(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(Gram, DVector<f64>, f64)> {
    if x.nrows() != y.len() {
        return Err(LcenError::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    if x.nrows() < 2 {
        return Err(LcenError::InsufficientData("need at least 2 rows".into()));
    }
    let means = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.mean()));
    let y_mean = y.mean();
    let mut xc = x.clone();
    for (j, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    let yc = y.add_scalar(-y_mean);
    Ok((Gram::new(&xc, &yc)?, means, y_mean))
}

/// Fits an elastic net with an unpenalized intercept on a design matrix.
/// `y` is expected in the design's standardized target units.
pub fn fit_enet(design: &DesignMatrix, y: &DVector<f64>, cfg: &EnetConfig) -> Result<Coefficients> {
    let (gram, means, y_mean) = centered_gram(&design.values, y)?;
    let (beta, n_iters, converged) = solve_gram(&gram, cfg, None)?;
    let intercept = y_mean - means.dot(&beta);
    Ok(Coefficients {
        beta,
        intercept,
        n_iters,
        converged,
    })
}

/// Converts standardized-unit coefficients to raw feature units and returns
/// `(beta, intercept)`.
pub fn unscale(coefs: &Coefficients, scaling: &ScalingInfo) -> Result<(DVector<f64>, f64)> {
    let p = coefs.beta.len();
    if scaling.mean.len() != p || scaling.std.len() != p {
        return Err(LcenError::DimensionMismatch {
            expected: p,
            got: scaling.mean.len(),
        });
    }
    let beta = DVector::from_fn(p, |j, _| coefs.beta[j] * scaling.y_std / scaling.std[j]);
    let shift: f64 = (0..p).map(|j| beta[j] * scaling.mean[j]).sum();
    let intercept = scaling.y_mean + scaling.y_std * coefs.intercept - shift;
    Ok((beta, intercept))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn soft_threshold_cases() {
        assert!((soft_threshold(0.7, 0.2) - 0.5).abs() < 1e-15);
        assert_eq!(soft_threshold(-0.1, 0.2), 0.0);
        for z in [-3.0, -0.5, 0.0, 1e-9, 2.5] {
            assert_eq!(soft_threshold(z, 0.0), z);
        }
        assert!((soft_threshold(-0.7, 0.2) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_target_gives_zero_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(30, 4, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::zeros(30);
        for cfg in [
            EnetConfig::lasso(0.1),
            EnetConfig::new(0.1, 0.5),
            EnetConfig::new(0.0, 1.0),
            EnetConfig::new(0.3, 0.0),
        ] {
            let c = fit_enet_matrix(&x, &y, &cfg).unwrap();
            assert!(c.beta.iter().all(|&b| b == 0.0));
            assert_eq!(c.intercept, 0.0);
        }
    }

    #[test]
    fn config_validation() {
        assert!(EnetConfig::new(-1.0, 0.5).validate().is_err());
        assert!(EnetConfig::new(1.0, 1.5).validate().is_err());
        assert!(EnetConfig {
            tol: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        let x = DMatrix::zeros(3, 2);
        assert!(matches!(
            fit_enet_matrix(&x, &DVector::zeros(4), &EnetConfig::lasso(0.1)),
            Err(LcenError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rank_deficient_least_squares_is_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = DMatrix::from_fn(20, 2, |_, _| rng.random_range(-1.0..1.0));
        let x = DMatrix::from_fn(20, 3, |i, j| if j < 2 { base[(i, j)] } else { base[(i, 0)] });
        let y = DVector::from_fn(20, |i, _| base[(i, 0)] * 2.0 - base[(i, 1)]);
        let c = fit_enet_matrix(&x, &y, &EnetConfig::new(0.0, 1.0)).unwrap();
        assert!(c.beta.iter().all(|v| v.is_finite()));
        // the duplicated pair is only identified through its sum
        assert!((c.beta[0] + c.beta[2] - 2.0).abs() < 1e-6);
        assert!(c.beta[0] > 0.5 && c.beta[2] > 0.5);
        assert!((&x * &c.beta - &y).amax() < 1e-6);
        assert!((c.beta[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn objective_is_monotone_over_sweeps() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z = DMatrix::from_fn(50, 6, |_, _| rng.random_range(-1.0..1.0));
        // correlated columns slow coordinate descent down
        let x = DMatrix::from_fn(50, 6, |i, j| z[(i, j)] + 0.9 * z[(i, 0)]);
        let y = DVector::from_fn(50, |i, _| x[(i, 0)] - 2.0 * x[(i, 3)] + 0.1 * z[(i, 5)]);
        let gram = Gram::new(&x, &y).unwrap();
        for cfg in [EnetConfig::lasso(0.01), EnetConfig::new(0.05, 0.3)] {
            let mut cd = CoordinateDescent::new(&gram, cfg, None);
            let mut last = gram.objective(cd.beta(), &cfg);
            while !cd.converged() && cd.sweeps() < 5000 {
                cd.sweep();
                let now = gram.objective(cd.beta(), &cfg);
                assert!(now <= last + 1e-14 * last.abs().max(1.0));
                last = now;
            }
            assert!(cd.converged());
        }
    }

    #[test]
    fn lasso_kkt_certificate() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = DMatrix::from_fn(80, 10, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(80, |i, _| 3.0 * x[(i, 2)] - x[(i, 7)] + rng.random_range(-0.1..0.1));
        let gram = Gram::new(&x, &y).unwrap();
        for alpha in [0.5, 0.1, 0.01, 0.001] {
            let cfg = EnetConfig::lasso(alpha);
            let (beta, _, converged) = solve_gram(&gram, &cfg, None).unwrap();
            assert!(converged);
            let r = gram.correlations(&beta);
            for j in 0..beta.len() {
                if beta[j] == 0.0 {
                    assert!(r[j].abs() <= alpha + 10.0 * cfg.tol);
                } else {
                    assert!((r[j] - alpha * beta[j].signum()).abs() <= 10.0 * cfg.tol * gram.g[(j, j)].max(1.0));
                }
            }
        }
    }

    #[test]
    fn warm_start_reaches_same_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = DMatrix::from_fn(60, 8, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(60, |i, _| x[(i, 1)] + 0.5 * x[(i, 4)] + rng.random_range(-0.2..0.2));
        let gram = Gram::new(&x, &y).unwrap();
        let tight = EnetConfig {
            tol: 1e-10,
            ..EnetConfig::new(0.02, 0.7)
        };
        let (cold, _, _) = solve_gram(&gram, &tight, None).unwrap();
        let (start, _, _) = solve_gram(&gram, &EnetConfig::new(0.2, 0.7), None).unwrap();
        let (warm, _, _) = solve_gram(&gram, &tight, Some(&start)).unwrap();
        assert!((cold - warm).amax() < 1e-8);
    }

    #[test]
    fn unscale_identity_and_shift() {
        let coefs = Coefficients {
            beta: DVector::from_vec(vec![0.5, -1.0]),
            intercept: 0.0,
            n_iters: 0,
            converged: true,
        };
        let id = ScalingInfo {
            mean: vec![0.0, 0.0],
            std: vec![1.0, 1.0],
            y_mean: 0.0,
            y_std: 1.0,
            dropped_constant_columns: vec![],
            dropped_nonfinite_columns: vec![],
        };
        let (b, i) = unscale(&coefs, &id).unwrap();
        assert_eq!(b, coefs.beta);
        assert_eq!(i, 0.0);

        let one = Coefficients {
            beta: DVector::from_vec(vec![0.8]),
            intercept: 0.0,
            n_iters: 0,
            converged: true,
        };
        let s = ScalingInfo {
            mean: vec![3.0],
            std: vec![2.0],
            y_mean: 10.0,
            y_std: 5.0,
            ..id
        };
        let (b, i) = unscale(&one, &s).unwrap();
        assert!((b[0] - 0.8 / 2.0 * 5.0).abs() < 1e-15);
        assert!((i - (10.0 - 2.0 * 3.0)).abs() < 1e-12);
    }
}
