//! Nonlinear basis expansion.
//!
//! Raw inputs (and, for dynamic models, lagged inputs and outputs) are mapped
//! into a dictionary of candidate terms: polynomial monomials with
//! interactions, powers of the logarithm, half-integer powers, inverse powers
//! and log-over-power ratios. Each term carries a symbolic [`FeatureTerm`]
//! so fitted models can be printed and re-evaluated on new data.
//!
//! Term display grammar (one factor per `*`-separated token):
//!
//! ```text
//! X0        X0^2        ln(X1)     ln(X1)^3
//! X2^0.5    X2^1.5      1/X0       1/X0^2
//! ln(X0)/X0            ln(X0)^2/X0^3
//! X0[t-1]   y[t-3]      ln(y[t-2])
//! ```
//!
//! The intercept is displayed as `1`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{LcenError, Result};

/// A variable a factor refers to: a raw input column or the model output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Input(usize),
    Output,
}

/// Transform families of the expansion dictionary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// `x^b`; the only family that forms cross-variable interactions.
    Power,
    /// `ln(x)^a`
    LogPower,
    /// `x^((2b-1)/2)`
    HalfPower,
    /// `x^(-b)`
    InversePower,
    /// `ln(x)^a / x^b`
    LogOverPower,
}

impl Transform {
    pub const ALL: [Transform; 5] = [
        Transform::Power,
        Transform::LogPower,
        Transform::HalfPower,
        Transform::InversePower,
        Transform::LogOverPower,
    ];

    pub fn requires_positive(self) -> bool {
        !matches!(self, Transform::Power)
    }

    pub fn name(self) -> &'static str {
        match self {
            Transform::Power => "power",
            Transform::LogPower => "log_power",
            Transform::HalfPower => "half_power",
            Transform::InversePower => "inverse_power",
            Transform::LogOverPower => "log_over_power",
        }
    }
}

impl FromStr for Transform {
    type Err = LcenError;

    fn from_str(s: &str) -> Result<Self> {
        Transform::ALL
            .into_iter()
            .find(|t| t.name() == s.trim())
            .ok_or_else(|| LcenError::InvalidConfig(format!("unknown transform family '{s}'")))
    }
}

/// One factor of a product term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Factor {
    pub variable: Variable,
    pub lag: usize,
    pub transform: Transform,
    /// Log exponent.
    pub a: u32,
    /// Power exponent; for [`Transform::HalfPower`] the exponent is `(2b-1)/2`.
    pub b: u32,
}

impl Factor {
    pub fn power(variable: Variable, lag: usize, b: u32) -> Self {
        Factor {
            variable,
            lag,
            transform: Transform::Power,
            a: 0,
            b,
        }
    }

    pub fn log_power(variable: Variable, lag: usize, a: u32) -> Self {
        Factor {
            variable,
            lag,
            transform: Transform::LogPower,
            a,
            b: 0,
        }
    }

    pub fn half_power(variable: Variable, lag: usize, b: u32) -> Self {
        Factor {
            variable,
            lag,
            transform: Transform::HalfPower,
            a: 0,
            b,
        }
    }

    pub fn inverse_power(variable: Variable, lag: usize, b: u32) -> Self {
        Factor {
            variable,
            lag,
            transform: Transform::InversePower,
            a: 0,
            b,
        }
    }

    pub fn log_over_power(variable: Variable, lag: usize, a: u32, b: u32) -> Self {
        Factor {
            variable,
            lag,
            transform: Transform::LogOverPower,
            a,
            b,
        }
    }

    fn key(&self) -> (Variable, usize) {
        (self.variable, self.lag)
    }

    fn is_well_formed(&self) -> bool {
        match self.transform {
            Transform::Power | Transform::HalfPower | Transform::InversePower => self.a == 0 && self.b >= 1,
            Transform::LogPower => self.a >= 1 && self.b == 0,
            Transform::LogOverPower => self.a >= 1 && self.b >= 1,
        }
    }

    pub fn degree(&self) -> u32 {
        match self.transform {
            Transform::Power | Transform::HalfPower | Transform::InversePower => self.b,
            Transform::LogPower => self.a,
            Transform::LogOverPower => self.a + self.b,
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        let b = self.b as i32;
        match self.transform {
            Transform::Power => x.powi(b),
            Transform::LogPower => x.ln().powi(self.a as i32),
            Transform::HalfPower => x.powi(b - 1) * x.sqrt(),
            Transform::InversePower => 1.0 / x.powi(b),
            Transform::LogOverPower => x.ln().powi(self.a as i32) / x.powi(b),
        }
    }

    fn write_with(&self, f: &mut impl fmt::Write, names: &dyn Fn(Variable, usize) -> String) -> fmt::Result {
        let v = names(self.variable, self.lag);
        match self.transform {
            Transform::Power if self.b == 1 => write!(f, "{v}"),
            Transform::Power => write!(f, "{v}^{}", self.b),
            Transform::LogPower if self.a == 1 => write!(f, "ln({v})"),
            Transform::LogPower => write!(f, "ln({v})^{}", self.a),
            Transform::HalfPower => write!(f, "{v}^{}.5", self.b - 1),
            Transform::InversePower if self.b == 1 => write!(f, "1/{v}"),
            Transform::InversePower => write!(f, "1/{v}^{}", self.b),
            Transform::LogOverPower => {
                if self.a == 1 {
                    write!(f, "ln({v})/")?;
                } else {
                    write!(f, "ln({v})^{}/", self.a)?;
                }
                if self.b == 1 {
                    write!(f, "{v}")
                } else {
                    write!(f, "{v}^{}", self.b)
                }
            }
        }
    }
}

/// Default variable naming: `X3`, `X3[t-2]`, `y[t-1]`.
pub fn canonical_variable_name(variable: Variable, lag: usize) -> String {
    let base = match variable {
        Variable::Input(k) => format!("X{k}"),
        Variable::Output => "y".to_string(),
    };
    if lag == 0 {
        base
    } else {
        format!("{base}[t-{lag}]")
    }
}

/// Symbolic description of one expanded feature: a product of transformed
/// variables. The empty product is the intercept.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "TermRecord", into = "TermRecord")]
pub struct FeatureTerm {
    factors: Vec<Factor>,
}

#[derive(Serialize, Deserialize)]
struct TermRecord {
    display: String,
    factors: Vec<Factor>,
}

impl From<FeatureTerm> for TermRecord {
    fn from(term: FeatureTerm) -> Self {
        TermRecord {
            display: term.display(),
            factors: term.factors,
        }
    }
}

impl TryFrom<TermRecord> for FeatureTerm {
    type Error = LcenError;

    fn try_from(record: TermRecord) -> Result<Self> {
        let term = FeatureTerm::new(record.factors)?;
        if term.display() != record.display {
            return Err(LcenError::TermParse {
                input: record.display,
                reason: format!("display does not match factors (expected '{}')", term.display()),
            });
        }
        Ok(term)
    }
}

impl FeatureTerm {
    pub fn intercept() -> Self {
        FeatureTerm { factors: Vec::new() }
    }

    /// Builds a term from factors, sorting them by (variable, lag). Rejects
    /// malformed exponents and repeated (variable, lag) pairs.
    pub fn new(mut factors: Vec<Factor>) -> Result<Self> {
        if let Some(bad) = factors.iter().find(|f| !f.is_well_formed()) {
            return Err(LcenError::InvalidConfig(format!("malformed factor {bad:?}")));
        }
        factors.sort_by_key(|f| f.key());
        if factors.windows(2).any(|w| w[0].key() == w[1].key()) {
            return Err(LcenError::InvalidConfig(
                "a term may not contain two factors on the same variable and lag".into(),
            ));
        }
        Ok(FeatureTerm { factors })
    }

    fn single(factor: Factor) -> Self {
        FeatureTerm { factors: vec![factor] }
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn is_intercept(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn max_lag(&self) -> usize {
        self.factors.iter().map(|f| f.lag).max().unwrap_or(0)
    }

    /// Highest raw input index referenced by the term, if any.
    pub fn max_input(&self) -> Option<usize> {
        self.factors
            .iter()
            .filter_map(|f| match f.variable {
                Variable::Input(k) => Some(k),
                Variable::Output => None,
            })
            .max()
    }

    pub fn display(&self) -> String {
        self.display_with(&canonical_variable_name)
    }

    /// Renders the term using caller-provided variable names.
    pub fn display_with(&self, names: &dyn Fn(Variable, usize) -> String) -> String {
        if self.factors.is_empty() {
            return "1".to_string();
        }
        let mut out = String::new();
        for (i, factor) in self.factors.iter().enumerate() {
            if i > 0 {
                out.push('*');
            }
            factor
                .write_with(&mut out, names)
                .expect("writing to a String cannot fail");
        }
        out
    }

    /// Renders the term with named input columns (`a^1.5` instead of `X0^1.5`).
    pub fn display_named(&self, feature_names: &[String], target_name: &str) -> String {
        self.display_with(&|variable, lag| {
            let base = match variable {
                Variable::Input(k) => feature_names.get(k).cloned().unwrap_or_else(|| format!("X{k}")),
                Variable::Output => target_name.to_string(),
            };
            if lag == 0 {
                base
            } else {
                format!("{base}[t-{lag}]")
            }
        })
    }

    /// Evaluates the product given a lookup from (variable, lag) to value.
    pub fn evaluate_with(&self, mut value_of: impl FnMut(Variable, usize) -> f64) -> f64 {
        self.factors
            .iter()
            .map(|f| f.apply(value_of(f.variable, f.lag)))
            .product()
    }
}

impl fmt::Display for FeatureTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display())
    }
}

impl FromStr for FeatureTerm {
    type Err = LcenError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "1" {
            return Ok(FeatureTerm::intercept());
        }
        let factors = s
            .split('*')
            .map(|tok| {
                parse_factor(tok).map_err(|reason| LcenError::TermParse {
                    input: s.to_string(),
                    reason,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let term = FeatureTerm::new(factors)?;
        if term.display() != s {
            return Err(LcenError::TermParse {
                input: s.to_string(),
                reason: format!("not in canonical form (expected '{}')", term.display()),
            });
        }
        Ok(term)
    }
}

fn parse_variable(s: &str) -> std::result::Result<(Variable, usize), String> {
    let (base, lag) = match s.find('[') {
        Some(open) => {
            let inner = s[open..]
                .strip_prefix("[t-")
                .and_then(|r| r.strip_suffix(']'))
                .ok_or_else(|| format!("bad lag suffix in '{s}'"))?;
            let lag: usize = inner.parse().map_err(|_| format!("bad lag '{inner}'"))?;
            if lag == 0 {
                return Err("lag suffix must be positive".into());
            }
            (&s[..open], lag)
        }
        None => (s, 0),
    };
    let variable = if base == "y" {
        if lag == 0 {
            return Err("the output can only appear lagged".into());
        }
        Variable::Output
    } else {
        let idx = base
            .strip_prefix('X')
            .and_then(|d| d.parse::<usize>().ok())
            .ok_or_else(|| format!("unknown variable '{base}'"))?;
        Variable::Input(idx)
    };
    Ok((variable, lag))
}

fn parse_exponent(s: &str) -> std::result::Result<u32, String> {
    s.parse::<u32>().map_err(|_| format!("bad exponent '{s}'"))
}

/// Splits `VAR` or `VAR^EXP` into its parts.
fn split_power(s: &str) -> (&str, Option<&str>) {
    match s.rfind('^') {
        Some(i) if !s[i..].contains(']') => (&s[..i], Some(&s[i + 1..])),
        _ => (s, None),
    }
}

fn parse_factor(tok: &str) -> std::result::Result<Factor, String> {
    if let Some(rest) = tok.strip_prefix("1/") {
        let (var, exp) = split_power(rest);
        let (variable, lag) = parse_variable(var)?;
        let b = exp.map(parse_exponent).transpose()?.unwrap_or(1);
        return Ok(Factor::inverse_power(variable, lag, b));
    }
    if let Some(rest) = tok.strip_prefix("ln(") {
        let close = rest.find(')').ok_or("unclosed ln(")?;
        let (variable, lag) = parse_variable(&rest[..close])?;
        let after = &rest[close + 1..];
        let (log_exp, denom) = match after.find('/') {
            Some(i) => (&after[..i], Some(&after[i + 1..])),
            None => (after, None),
        };
        let a = match log_exp.strip_prefix('^') {
            Some(e) => parse_exponent(e)?,
            None if log_exp.is_empty() => 1,
            None => return Err(format!("unexpected '{log_exp}'")),
        };
        return match denom {
            None => Ok(Factor::log_power(variable, lag, a)),
            Some(d) => {
                let (var, exp) = split_power(d);
                if parse_variable(var)? != (variable, lag) {
                    return Err("log-over-power numerator and denominator differ".into());
                }
                let b = exp.map(parse_exponent).transpose()?.unwrap_or(1);
                Ok(Factor::log_over_power(variable, lag, a, b))
            }
        };
    }
    let (var, exp) = split_power(tok);
    let (variable, lag) = parse_variable(var)?;
    match exp {
        None => Ok(Factor::power(variable, lag, 1)),
        Some(e) => match e.strip_suffix(".5") {
            Some(whole) => Ok(Factor::half_power(variable, lag, parse_exponent(whole)? + 1)),
            None => Ok(Factor::power(variable, lag, parse_exponent(e)?)),
        },
    }
}

/// Effective degree of a term; zero for the intercept.
pub fn term_degree(term: &FeatureTerm) -> u32 {
    term.factors.iter().map(Factor::degree).sum()
}

/// Treatment of transform families that need strictly positive inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainGuard {
    /// Skip positivity-requiring families for variables with any value <= 0,
    /// and drop columns that evaluate to non-finite values.
    #[default]
    Auto,
    /// Error on any non-finite evaluation.
    Strict,
}

impl FromStr for DomainGuard {
    type Err = LcenError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "auto" => Ok(DomainGuard::Auto),
            "strict" => Ok(DomainGuard::Strict),
            other => Err(LcenError::InvalidConfig(format!("unknown domain guard '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionConfig {
    pub degree: usize,
    pub lag: usize,
    pub families: BTreeSet<Transform>,
    pub domain_guard: DomainGuard,
    /// Let lagged variables enter every family and degree, not only the
    /// degree-1 single-variable terms.
    pub lagged_interactions: bool,
    /// Guardrail on `degree`.
    pub max_degree: usize,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        ExpansionConfig {
            degree: 1,
            lag: 0,
            families: Transform::ALL.into_iter().collect(),
            domain_guard: DomainGuard::Auto,
            lagged_interactions: false,
            max_degree: 10,
        }
    }
}

impl ExpansionConfig {
    pub fn new(degree: usize, lag: usize) -> Self {
        ExpansionConfig {
            degree,
            lag,
            ..Default::default()
        }
    }

    pub fn with_degree_lag(&self, degree: usize, lag: usize) -> Self {
        ExpansionConfig {
            degree,
            lag,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree < 1 {
            return Err(LcenError::InvalidConfig("degree must be at least 1".into()));
        }
        if self.degree > self.max_degree {
            return Err(LcenError::InvalidConfig(format!(
                "degree {} exceeds the configured maximum of {}",
                self.degree, self.max_degree
            )));
        }
        if self.families.is_empty() {
            return Err(LcenError::InvalidConfig("no transform family enabled".into()));
        }
        Ok(())
    }
}

/// A (variable, lag) column the expansion draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Slot {
    variable: Variable,
    lag: usize,
}

fn slots(m: usize, lag: usize) -> Vec<Slot> {
    let mut out = Vec::new();
    for k in 0..m {
        for l in 0..=lag {
            out.push(Slot {
                variable: Variable::Input(k),
                lag: l,
            });
        }
    }
    for l in 1..=lag {
        out.push(Slot {
            variable: Variable::Output,
            lag: l,
        });
    }
    out
}

fn enumerate_filtered(
    m: usize,
    config: &ExpansionConfig,
    allowed: &dyn Fn(Slot, Transform) -> bool,
) -> Vec<FeatureTerm> {
    let all_slots = slots(m, config.lag);
    let full_slots: Vec<Slot> = if config.lagged_interactions {
        all_slots.clone()
    } else {
        all_slots.iter().copied().filter(|s| s.lag == 0).collect()
    };
    let fam = |t: Transform| config.families.contains(&t);

    let mut terms = vec![FeatureTerm::intercept()];
    for d in 1..=config.degree as u32 {
        let single_slots: &[Slot] = if d == 1 { &all_slots } else { &full_slots };

        if fam(Transform::Power) {
            let pool: Vec<Slot> = single_slots
                .iter()
                .copied()
                .filter(|&s| allowed(s, Transform::Power))
                .collect();
            for combo in multisets(pool.len(), d as usize) {
                let mut factors: Vec<Factor> = Vec::new();
                for idx in combo {
                    let s = pool[idx];
                    match factors.last_mut() {
                        Some(f) if f.key() == (s.variable, s.lag) => f.b += 1,
                        _ => factors.push(Factor::power(s.variable, s.lag, 1)),
                    }
                }
                terms.push(FeatureTerm { factors });
            }
        }
        let mut per_slot = |t: Transform, make: &dyn Fn(Slot) -> Factor| {
            if fam(t) {
                for &s in single_slots {
                    if allowed(s, t) {
                        terms.push(FeatureTerm::single(make(s)));
                    }
                }
            }
        };
        per_slot(Transform::LogPower, &|s| Factor::log_power(s.variable, s.lag, d));
        per_slot(Transform::HalfPower, &|s| Factor::half_power(s.variable, s.lag, d));
        per_slot(Transform::InversePower, &|s| {
            Factor::inverse_power(s.variable, s.lag, d)
        });
        for a in (1..d).rev() {
            per_slot(Transform::LogOverPower, &|s| {
                Factor::log_over_power(s.variable, s.lag, a, d - a)
            });
        }
    }
    terms
}

/// Non-decreasing index sequences of length `k` over `0..n`, lexicographic.
fn multisets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if n == 0 || k == 0 {
        return out;
    }
    let mut cur = vec![0usize; k];
    loop {
        out.push(cur.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] + 1 < n {
                let v = cur[i] + 1;
                for c in cur.iter_mut().skip(i) {
                    *c = v;
                }
                break;
            }
        }
    }
}

fn check_universe(m: usize, config: &ExpansionConfig) -> Result<()> {
    config.validate()?;
    if m == 0 && config.lag == 0 {
        return Err(LcenError::InvalidConfig(
            "need at least one input variable when lag is 0".into(),
        ));
    }
    Ok(())
}

/// Lists the candidate terms for `m` raw inputs in canonical order: the
/// intercept, then for each degree d = 1..D the degree-d monomials
/// (interactions included), `ln(x)^d`, `x^((2d-1)/2)`, `x^-d` and
/// `ln(x)^a/x^b` with `a + b = d`. With `lag > 0` the lagged inputs and
/// outputs join the degree-1 single-variable terms (all degrees when
/// `lagged_interactions` is set).
pub fn enumerate_terms(m: usize, config: &ExpansionConfig) -> Result<Vec<FeatureTerm>> {
    check_universe(m, config)?;
    Ok(enumerate_filtered(m, config, &|_, _| true))
}

/// Standardization statistics of a design matrix and its target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingInfo {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
    /// Indices into the enumerated term list of columns dropped as constant.
    pub dropped_constant_columns: Vec<usize>,
    /// Indices of columns dropped because they evaluated to non-finite values.
    #[serde(default)]
    pub dropped_nonfinite_columns: Vec<usize>,
}

/// Expanded, column-standardized design. The intercept is carried
/// symbolically and has no column in `values`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub values: DMatrix<f64>,
    pub terms: Vec<FeatureTerm>,
    pub scaling: ScalingInfo,
    /// Target aligned with the rows (raw units), when one was supplied.
    pub target: Option<DVector<f64>>,
}

impl DesignMatrix {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Intercept followed by the column terms.
    pub fn all_terms(&self) -> Vec<FeatureTerm> {
        std::iter::once(FeatureTerm::intercept())
            .chain(self.terms.iter().cloned())
            .collect()
    }

    /// Value of column `j` at row `i` before standardization.
    pub fn raw_value(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)] * self.scaling.std[j] + self.scaling.mean[j]
    }

    /// Target standardized with the stored y statistics.
    pub fn standardized_target(&self) -> Option<DVector<f64>> {
        let (m, s) = (self.scaling.y_mean, self.scaling.y_std);
        self.target.as_ref().map(|y| y.map(|v| (v - m) / s))
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> DesignMatrix {
        DesignMatrix {
            values: self.values.select_columns(columns),
            terms: columns.iter().map(|&j| self.terms[j].clone()).collect(),
            scaling: ScalingInfo {
                mean: columns.iter().map(|&j| self.scaling.mean[j]).collect(),
                std: columns.iter().map(|&j| self.scaling.std[j]).collect(),
                ..self.scaling.clone()
            },
            target: self.target.clone(),
        }
    }
}

/// Unstandardized expansion; the building block for cross-validation where
/// each fold computes its own statistics.
#[derive(Debug, Clone)]
pub struct RawDesign {
    pub values: DMatrix<f64>,
    pub terms: Vec<FeatureTerm>,
    pub target: Option<DVector<f64>>,
    pub dropped_constant: Vec<usize>,
    pub dropped_nonfinite: Vec<usize>,
}

fn slot_value(x: &DMatrix<f64>, y: Option<&DVector<f64>>, row: usize, variable: Variable, lag: usize) -> f64 {
    match variable {
        Variable::Input(k) => x[(row - lag, k)],
        Variable::Output => y.expect("lagged output requires y")[row - lag],
    }
}

pub fn expand_raw(x: &DMatrix<f64>, y: Option<&DVector<f64>>, config: &ExpansionConfig) -> Result<RawDesign> {
    let (n, m) = x.shape();
    check_universe(m, config)?;
    let lag = config.lag;
    if let Some(y) = y {
        if y.len() != n {
            return Err(LcenError::DimensionMismatch {
                expected: n,
                got: y.len(),
            });
        }
    }
    if lag > 0 && y.is_none() {
        return Err(LcenError::InvalidConfig(
            "lagged expansion requires the output series".into(),
        ));
    }
    if n < lag + 2 {
        return Err(LcenError::InsufficientData(format!(
            "{n} rows leave fewer than 2 usable rows at lag {lag}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) || y.is_some_and(|y| y.iter().any(|v| !v.is_finite())) {
        return Err(LcenError::Data("input contains non-finite values".into()));
    }
    let rows = lag..n;

    let positive = |s: Slot| rows.clone().all(|t| slot_value(x, y, t, s.variable, s.lag) > 0.0);
    let all_slots = slots(m, lag);
    let positive_slots: Vec<Slot> = all_slots.iter().copied().filter(|&s| positive(s)).collect();

    let terms = match config.domain_guard {
        DomainGuard::Auto => {
            enumerate_filtered(m, config, &|s, t| !t.requires_positive() || positive_slots.contains(&s))
        }
        DomainGuard::Strict => {
            let needs_positive = config.families.iter().any(|t| t.requires_positive());
            if needs_positive {
                if let Some(s) = all_slots.iter().find(|s| !positive_slots.contains(s)) {
                    return Err(LcenError::DomainViolation(format!(
                        "variable {} has non-positive values but log/half-power/inverse families are enabled",
                        canonical_variable_name(s.variable, s.lag)
                    )));
                }
            }
            enumerate_filtered(m, config, &|_, _| true)
        }
    };

    let n_out = n - lag;
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(terms.len());
    let mut kept_terms = Vec::with_capacity(terms.len());
    let mut dropped_constant = Vec::new();
    let mut dropped_nonfinite = Vec::new();
    for (idx, term) in terms.iter().enumerate().skip(1) {
        let col: Vec<f64> = rows
            .clone()
            .map(|t| term.evaluate_with(|v, l| slot_value(x, y, t, v, l)))
            .collect();
        if col.iter().any(|v| !v.is_finite()) {
            if config.domain_guard == DomainGuard::Strict {
                return Err(LcenError::DomainViolation(format!(
                    "term {term} evaluates to a non-finite value"
                )));
            }
            dropped_nonfinite.push(idx);
            continue;
        }
        if col.iter().all(|&v| v == col[0]) {
            dropped_constant.push(idx);
            continue;
        }
        columns.push(col);
        kept_terms.push(term.clone());
    }
    let values = DMatrix::from_fn(n_out, columns.len(), |i, j| columns[j][i]);
    let target = y.map(|y| DVector::from_iterator(n_out, rows.clone().map(|t| y[t])));
    Ok(RawDesign {
        values,
        terms: kept_terms,
        target,
        dropped_constant,
        dropped_nonfinite,
    })
}

/// Mean and population standard deviation (1/n normalization).
pub(crate) fn mean_std<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl RawDesign {
    pub fn standardize(self) -> DesignMatrix {
        let (n, p) = self.values.shape();
        let mut mean = Vec::with_capacity(p);
        let mut std = Vec::with_capacity(p);
        let mut values = self.values;
        for j in 0..p {
            let (mu, sd) = mean_std(values.column(j).iter());
            let sd = if sd > 0.0 { sd } else { 1.0 };
            for i in 0..n {
                values[(i, j)] = (values[(i, j)] - mu) / sd;
            }
            mean.push(mu);
            std.push(sd);
        }
        let (y_mean, y_std) = match &self.target {
            Some(y) => {
                let (m, s) = mean_std(y.iter());
                (m, if s > 0.0 { s } else { 1.0 })
            }
            None => (0.0, 1.0),
        };
        DesignMatrix {
            values,
            terms: self.terms,
            scaling: ScalingInfo {
                mean,
                std,
                y_mean,
                y_std,
                dropped_constant_columns: self.dropped_constant,
                dropped_nonfinite_columns: self.dropped_nonfinite,
            },
            target: self.target,
        }
    }
}

/// Expands raw inputs into a standardized design matrix. With `lag = L > 0`
/// the first `L` rows are consumed as history and `y` is required.
pub fn expand(x: &DMatrix<f64>, y: Option<&DVector<f64>>, config: &ExpansionConfig) -> Result<DesignMatrix> {
    Ok(expand_raw(x, y, config)?.standardize())
}

/// Past observations available when evaluating lagged terms, oldest first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<f64>,
}

impl History {
    pub fn new(inputs: Vec<Vec<f64>>, outputs: Vec<f64>) -> Self {
        History { inputs, outputs }
    }

    /// The `depth` most recent rows of a series ending just before `row`.
    pub fn from_series(x: &DMatrix<f64>, y: &DVector<f64>, row: usize, depth: usize) -> Self {
        let start = row.saturating_sub(depth);
        History {
            inputs: (start..row).map(|t| x.row(t).iter().copied().collect()).collect(),
            outputs: (start..row).map(|t| y[t]).collect(),
        }
    }

    pub fn push(&mut self, inputs: Vec<f64>, output: f64) {
        self.inputs.push(inputs);
        self.outputs.push(output);
    }

    fn value(&self, variable: Variable, lag: usize, current: &[f64]) -> Option<f64> {
        match (variable, lag) {
            (Variable::Input(k), 0) => current.get(k).copied(),
            (Variable::Output, 0) => None,
            (Variable::Input(k), l) => self
                .inputs
                .len()
                .checked_sub(l)
                .and_then(|i| self.inputs[i].get(k).copied()),
            (Variable::Output, l) => self.outputs.len().checked_sub(l).map(|i| self.outputs[i]),
        }
    }
}

/// Evaluates each term on one raw row, without standardization.
pub fn evaluate_terms(terms: &[FeatureTerm], row: &[f64], history: &History) -> Result<Vec<f64>> {
    terms
        .iter()
        .map(|term| {
            let mut missing = None;
            let value = term.evaluate_with(|v, l| {
                history.value(v, l, row).unwrap_or_else(|| {
                    missing = Some(canonical_variable_name(v, l));
                    f64::NAN
                })
            });
            if let Some(name) = missing {
                return Err(LcenError::InsufficientData(format!(
                    "no value for {name} when evaluating {term}"
                )));
            }
            if !value.is_finite() {
                return Err(LcenError::DomainViolation(format!(
                    "term {term} is non-finite on this row"
                )));
            }
            Ok(value)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn x(k: usize) -> Variable {
        Variable::Input(k)
    }

    #[test]
    fn degree_of_table_examples() {
        let t = FeatureTerm::new(vec![
            Factor::power(x(0), 0, 1),
            Factor::power(x(1), 0, 1),
            Factor::power(x(2), 0, 1),
        ])
        .unwrap();
        assert_eq!(term_degree(&t), 3);
        assert_eq!(term_degree(&FeatureTerm::intercept()), 0);
        let t = FeatureTerm::new(vec![Factor::log_over_power(x(0), 0, 2, 1)]).unwrap();
        assert_eq!(term_degree(&t), 3);
        let t = FeatureTerm::new(vec![Factor::half_power(x(0), 0, 2)]).unwrap();
        assert_eq!(term_degree(&t), 2);
    }

    #[test]
    fn counts() {
        assert_eq!(enumerate_terms(3, &ExpansionConfig::new(1, 0)).unwrap().len(), 13);
        assert_eq!(enumerate_terms(3, &ExpansionConfig::new(2, 0)).unwrap().len(), 31);
        let single: Vec<String> = enumerate_terms(1, &ExpansionConfig::new(1, 0))
            .unwrap()
            .iter()
            .map(|t| t.display())
            .collect();
        assert_eq!(single, ["1", "X0", "ln(X0)", "X0^0.5", "1/X0"]);
        for m in 1..8 {
            assert_eq!(
                enumerate_terms(m, &ExpansionConfig::new(1, 0)).unwrap().len(),
                1 + 4 * m
            );
        }
    }

    #[test]
    fn degree_two_listing_for_one_variable() {
        let names: Vec<String> = enumerate_terms(1, &ExpansionConfig::new(3, 0))
            .unwrap()
            .iter()
            .map(|t| t.display())
            .collect();
        assert_eq!(
            names,
            [
                "1",
                "X0",
                "ln(X0)",
                "X0^0.5",
                "1/X0",
                "X0^2",
                "ln(X0)^2",
                "X0^1.5",
                "1/X0^2",
                "ln(X0)/X0",
                "X0^3",
                "ln(X0)^3",
                "X0^2.5",
                "1/X0^3",
                "ln(X0)^2/X0",
                "ln(X0)/X0^2"
            ]
        );
    }

    #[test]
    fn invalid_configs() {
        assert!(enumerate_terms(3, &ExpansionConfig::new(0, 0)).is_err());
        assert!(enumerate_terms(3, &ExpansionConfig::new(11, 0)).is_err());
        assert!(enumerate_terms(0, &ExpansionConfig::new(1, 0)).is_err());
        let mut cfg = ExpansionConfig::new(12, 0);
        cfg.max_degree = 12;
        assert!(enumerate_terms(1, &cfg).is_ok());
    }

    #[test]
    fn lagged_terms() {
        let terms = enumerate_terms(1, &ExpansionConfig::new(1, 2)).unwrap();
        let names: Vec<String> = terms.iter().map(|t| t.display()).collect();
        for want in [
            "X0[t-1]",
            "X0[t-2]",
            "y[t-1]",
            "y[t-2]",
            "ln(y[t-2])",
            "1/X0[t-1]",
            "y[t-1]^0.5",
        ] {
            assert!(names.contains(&want.to_string()), "missing {want}");
        }
        assert_eq!(terms.len(), 1 + 4 * 5);
        // lagged variables stay out of higher-degree families by default
        let deg2 = enumerate_terms(1, &ExpansionConfig::new(2, 2)).unwrap();
        assert!(deg2.iter().filter(|t| term_degree(t) == 2).all(|t| t.max_lag() == 0));
        let mut cfg = ExpansionConfig::new(2, 1);
        cfg.lagged_interactions = true;
        let with = enumerate_terms(1, &cfg).unwrap();
        assert!(with.iter().any(|t| t.display() == "X0*X0[t-1]"));
        assert!(with.iter().any(|t| t.display() == "X0[t-1]*y[t-1]"));
    }

    #[test]
    fn expand_with_lag_consumes_history() {
        let n = 10;
        let xs = DMatrix::from_fn(n, 1, |i, _| 1.0 + i as f64);
        let ys = DVector::from_fn(n, |i, _| 2.0 + (i as f64).sin());
        let d = expand(&xs, Some(&ys), &ExpansionConfig::new(1, 2)).unwrap();
        assert_eq!(d.nrows(), 8);
        let names: Vec<String> = d.terms.iter().map(|t| t.display()).collect();
        for want in ["X0[t-1]", "X0[t-2]", "y[t-1]", "y[t-2]"] {
            assert!(names.contains(&want.to_string()));
        }
        let j = names.iter().position(|s| s == "y[t-2]").unwrap();
        assert!((d.raw_value(0, j) - ys[0]).abs() < 1e-12);
        assert!(expand(&xs, None, &ExpansionConfig::new(1, 2)).is_err());
        assert!(expand(&xs, Some(&ys), &ExpansionConfig::new(1, 9)).is_err());
    }

    #[test]
    fn constant_input_drops_every_column() {
        let xs = DMatrix::from_element(6, 5, 1.0);
        let d = expand(&xs, None, &ExpansionConfig::new(1, 0)).unwrap();
        assert_eq!(d.ncols(), 0);
        assert_eq!(d.scaling.dropped_constant_columns.len(), 20);
    }

    #[test]
    fn domain_guard_modes() {
        let xs = DMatrix::from_row_slice(4, 2, &[1.0, -1.0, 2.0, 0.5, 3.0, 2.0, 4.0, -3.0]);
        let d = expand(&xs, None, &ExpansionConfig::new(2, 0)).unwrap();
        for t in &d.terms {
            for f in t.factors() {
                if f.variable == x(1) {
                    assert_eq!(f.transform, Transform::Power);
                }
            }
        }
        assert!(d.terms.iter().any(|t| t.display() == "ln(X0)"));
        let mut strict = ExpansionConfig::new(2, 0);
        strict.domain_guard = DomainGuard::Strict;
        assert!(matches!(expand(&xs, None, &strict), Err(LcenError::DomainViolation(_))));
        strict.families = [Transform::Power].into_iter().collect();
        assert!(expand(&xs, None, &strict).is_ok());
    }

    #[test]
    fn evaluate_examples() {
        let ones = evaluate_terms(&[FeatureTerm::intercept()], &[5.0, 7.0], &History::default()).unwrap();
        assert_eq!(ones, vec![1.0]);
        let t: FeatureTerm = "X0^2*X1".parse().unwrap();
        assert_eq!(
            evaluate_terms(&[t], &[2.0, 3.0], &History::default()).unwrap(),
            vec![12.0]
        );
        let t: FeatureTerm = "X0^1.5".parse().unwrap();
        assert_eq!(evaluate_terms(&[t], &[1.0], &History::default()).unwrap(), vec![1.0]);
        let t: FeatureTerm = "ln(X0)".parse().unwrap();
        assert!(matches!(
            evaluate_terms(&[t], &[-1.0], &History::default()),
            Err(LcenError::DomainViolation(_))
        ));
        let t: FeatureTerm = "y[t-2]".parse().unwrap();
        let h = History::new(vec![], vec![4.0, 5.0]);
        assert_eq!(evaluate_terms(std::slice::from_ref(&t), &[], &h).unwrap(), vec![4.0]);
        assert!(evaluate_terms(&[t], &[], &History::new(vec![], vec![1.0])).is_err());
    }

    #[test]
    fn parse_rejects_garbage() {
        for bad in [
            "",
            "Z0",
            "X0^",
            "ln(X0",
            "ln(X0)/X1",
            "X0*X0",
            "y",
            "X1*X0",
            "X0^1",
            "y[t-0]",
        ] {
            assert!(bad.parse::<FeatureTerm>().is_err(), "accepted {bad}");
        }
    }

    #[test]
    fn json_round_trip_and_tamper_check() {
        let t: FeatureTerm = "ln(X0)^2/X0^3".parse().unwrap();
        let s = serde_json::to_string(&t).unwrap();
        assert!(s.contains("\"display\":\"ln(X0)^2/X0^3\""));
        let back: FeatureTerm = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
        let tampered = s.replace("ln(X0)^2/X0^3", "X0");
        assert!(serde_json::from_str::<FeatureTerm>(&tampered).is_err());
    }

    fn arb_factor() -> impl Strategy<Value = Factor> {
        let var = prop_oneof![(0usize..4).prop_map(Variable::Input), Just(Variable::Output)];
        (var, 0usize..4, 0usize..5, 1u32..5, 1u32..5).prop_map(|(v, lag, fam, a, b)| {
            let lag = if v == Variable::Output { lag.max(1) } else { lag };
            match fam {
                0 => Factor::power(v, lag, b),
                1 => Factor::log_power(v, lag, a),
                2 => Factor::half_power(v, lag, b),
                3 => Factor::inverse_power(v, lag, b),
                _ => Factor::log_over_power(v, lag, a, b),
            }
        })
    }

    proptest! {
        #[test]
        fn display_parse_round_trip(factors in prop::collection::vec(arb_factor(), 0..4)) {
            let mut seen = std::collections::HashSet::new();
            let factors: Vec<Factor> = factors.into_iter().filter(|f| seen.insert(f.key())).collect();
            let term = FeatureTerm::new(factors).unwrap();
            let parsed: FeatureTerm = term.display().parse().unwrap();
            prop_assert_eq!(parsed, term);
        }

        #[test]
        fn degree_nesting(m in 1usize..4, d in 2usize..5) {
            let lo = enumerate_terms(m, &ExpansionConfig::new(d - 1, 0)).unwrap();
            let hi = enumerate_terms(m, &ExpansionConfig::new(d, 0)).unwrap();
            prop_assert!(hi.len() > lo.len());
            prop_assert_eq!(&hi[..lo.len()], &lo[..]);
            prop_assert!(hi.iter().all(|t| term_degree(t) as usize <= d));
        }

        #[test]
        fn standardized_and_round_trips(seed in 0u64..1000, degree in 1usize..4) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let xs = DMatrix::from_fn(40, 2, |_, _| rng.random_range(1.0..10.0));
            let d = expand(&xs, None, &ExpansionConfig::new(degree, 0)).unwrap();
            for j in 0..d.ncols() {
                let (mu, sd) = mean_std(d.values.column(j).iter());
                prop_assert!(mu.abs() < 1e-10);
                prop_assert!((sd - 1.0).abs() < 1e-10);
            }
            for i in [0usize, 17, 39] {
                let row: Vec<f64> = xs.row(i).iter().copied().collect();
                let direct = evaluate_terms(&d.terms, &row, &History::default()).unwrap();
                for (j, v) in direct.iter().enumerate() {
                    let back = d.raw_value(i, j);
                    prop_assert!((back - v).abs() <= 1e-12 * v.abs().max(d.scaling.mean[j].abs()));
                }
            }
            let again = expand(&xs, None, &ExpansionConfig::new(degree, 0)).unwrap();
            prop_assert_eq!(again, d);
        }
    }
}
