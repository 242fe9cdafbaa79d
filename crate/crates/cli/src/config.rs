//! Flat `key = value` run configuration. Resolution order: built-in
//! defaults, then the config file, then command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use lcen::pipeline::logspace;
use lcen::{FitSettings, HyperGrid, PipelineSpec};

use crate::CliError;

/// Every recognised key with its default. `default` for the grid lists
/// means the library's reference grid.
pub const KEYS: &[(&str, &str)] = &[
    ("alphas", "default"),
    ("cutoff", "0.05"),
    ("cutoffs", ""),
    ("degrees", "1,2,3"),
    ("delimiter", ","),
    ("domain_guard", "auto"),
    ("eps1", "10"),
    ("eps2", "0"),
    ("families", "all"),
    ("folds", "5"),
    ("horizon", "1"),
    ("kepler_version", "modern"),
    ("l1_ratios", "default"),
    ("lagged_interactions", "false"),
    ("lags", "0"),
    ("mass_max", "100"),
    ("max_iter", "10000"),
    ("n", "1000"),
    ("n_test", "1000"),
    ("n_train", "30"),
    ("noise", "0"),
    ("noise_variance", ""),
    ("pipeline", "LCEN"),
    ("seed", "0"),
    ("target", "y"),
    ("test_fraction", "0"),
    ("tol", "1e-6"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with `path`, if given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
            cfg.merge_text(&text)?;
        }
        Ok(cfg)
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn merge_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Display) -> Result<(), CliError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(CliError::Usage(format!("unknown config key '{key}'"))),
        }
    }

    /// Applies a `key=value` override from `--set`.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got '{pair}'")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("key '{key}' missing from KEYS"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|_| CliError::Usage(format!("config key '{key}': cannot parse '{raw}'")))
    }

    pub fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        if self.raw(key).is_empty() {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError> {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| CliError::Usage(format!("config key '{key}': cannot parse '{s}'")))
            })
            .collect()
    }

    pub fn pipeline(&self) -> Result<PipelineSpec, CliError> {
        self.raw("pipeline")
            .parse()
            .map_err(|e: lcen::LcenError| CliError::Usage(e.to_string()))
    }

    pub fn delimiter(&self) -> Result<u8, CliError> {
        match self.raw("delimiter") {
            "tab" | "\\t" => Ok(b'\t'),
            d if d.len() == 1 => Ok(d.as_bytes()[0]),
            d => Err(CliError::Usage(format!(
                "delimiter must be one character or 'tab', got '{d}'"
            ))),
        }
    }

    pub fn fit_settings(&self) -> Result<FitSettings, CliError> {
        let reference = HyperGrid::default();
        let alphas = match self.raw("alphas") {
            "default" => reference.alphas,
            s if s.starts_with("logspace") => parse_logspace(s)?,
            _ => self.list("alphas")?,
        };
        let l1_ratios = match self.raw("l1_ratios") {
            "default" => reference.l1_ratios,
            _ => self.list("l1_ratios")?,
        };
        let mut s = FitSettings {
            grid: HyperGrid {
                alphas,
                l1_ratios,
                degrees: self.list("degrees")?,
                lags: self.list("lags")?,
                cutoff: self.get("cutoff")?,
                folds: self.get("folds")?,
            },
            tol: self.get("tol")?,
            max_iter: self.get("max_iter")?,
            seed: self.get("seed")?,
            ..FitSettings::default()
        };
        s.expansion.domain_guard = self
            .raw("domain_guard")
            .parse()
            .map_err(|e: lcen::LcenError| CliError::Usage(e.to_string()))?;
        s.expansion.lagged_interactions = self.get("lagged_interactions")?;
        if self.raw("families") != "all" {
            s.expansion.families = self.list("families")?.into_iter().collect();
        }
        s.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(s)
    }

    /// `# key=value` lines for the head of every output.
    pub fn echo(&self, command: &str) -> String {
        let mut out = format!("# lcen {} {command}\n", env!("CARGO_PKG_VERSION"));
        for (k, v) in &self.values {
            out.push_str(&format!("# {k}={v}\n"));
        }
        out
    }
}

/// `logspace(start;stop;count)`: `count` values evenly spaced in log10.
fn parse_logspace(s: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Usage(format!("cannot parse '{s}', expected logspace(start;stop;count)"));
    let inner = s
        .strip_prefix("logspace(")
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(bad)?;
    let parts: Vec<&str> = inner.split(';').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let start: f64 = parts[0].parse().map_err(|_| bad())?;
    let stop: f64 = parts[1].parse().map_err(|_| bad())?;
    let count: usize = parts[2].parse().map_err(|_| bad())?;
    Ok(logspace(start, stop, count))
}
