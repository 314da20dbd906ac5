//! Run configuration: defaults, then a `key = value` file, then flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::numerics::GridSpec;
use crate::report::Format;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected 'key = value', got '{text}'")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("{key}: cannot parse '{value}': {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub grid_h: f64,
    pub horizon: usize,
    pub reps: usize,
    pub seed: u64,
    pub tol_xi: f64,
    pub max_lag: usize,
    /// Length of each stationary chain for the covariance-series estimator.
    pub series_chain_len: usize,
    /// Length of the single run for the regenerative estimator.
    pub regen_len: usize,
    pub cache_dir: PathBuf,
    pub output_format: Format,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid_h: 1e-3,
            horizon: 100,
            reps: 10_000,
            seed: 1,
            tol_xi: 1e-9,
            max_lag: 40,
            series_chain_len: 2_000,
            regen_len: 1_000_000,
            cache_dir: PathBuf::from(".altseq-cache"),
            output_format: Format::Json,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "grid_h",
        "horizon",
        "reps",
        "seed",
        "tol_xi",
        "max_lag",
        "series_chain_len",
        "regen_len",
        "cache_dir",
        "output_format",
    ];

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "grid_h" => self.grid_h = parse(key, value)?,
            "horizon" => self.horizon = parse(key, value)?,
            "reps" => self.reps = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "tol_xi" => self.tol_xi = parse(key, value)?,
            "max_lag" => self.max_lag = parse(key, value)?,
            "series_chain_len" => self.series_chain_len = parse(key, value)?,
            "regen_len" => self.regen_len = parse(key, value)?,
            "cache_dir" => self.cache_dir = PathBuf::from(value),
            "output_format" => self.output_format = parse(key, value)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line: 0,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Applies a `key = value` document; `#` starts a comment.
    pub fn apply_str(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| match e {
                ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { line: i + 1, key },
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigFileError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigFileError::Io(path.to_path_buf(), e))?;
        let mut c = Self::default();
        c.apply_str(&text).map_err(ConfigFileError::Parse)?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.grid_h > 0.0 && self.grid_h <= 1e-2) {
            return Err(ConfigError::Invalid(format!("grid_h = {} outside (0, 0.01]", self.grid_h)));
        }
        self.grid()?;
        if self.horizon < 1 {
            return Err(ConfigError::Invalid("horizon must be at least 1".into()));
        }
        if self.reps < 1 {
            return Err(ConfigError::Invalid("reps must be at least 1".into()));
        }
        if self.tol_xi.is_nan() || self.tol_xi <= 0.0 {
            return Err(ConfigError::Invalid(format!("tol_xi = {} must be positive", self.tol_xi)));
        }
        if self.series_chain_len <= self.max_lag {
            return Err(ConfigError::Invalid("series_chain_len must exceed max_lag".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec, ConfigError> {
        GridSpec::new(self.grid_h).map_err(|e| ConfigError::Invalid(format!("grid_h: {e}")))
    }
}

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("cannot read config {0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error(transparent)]
    Parse(ConfigError),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_defaults() {
        let mut c = RunConfig::default();
        c.apply_str("# reference run\ngrid_h = 1e-4\nreps=500000 # trailing\n\nseed = 7\noutput_format = csv\n")
            .unwrap();
        assert_eq!(c.grid_h, 1e-4);
        assert_eq!(c.reps, 500_000);
        assert_eq!(c.seed, 7);
        assert_eq!(c.output_format, Format::Csv);
        assert_eq!(c.horizon, RunConfig::default().horizon);
        c.validate().unwrap();
    }

    #[test]
    fn errors_name_the_line() {
        let mut c = RunConfig::default();
        assert_eq!(
            c.apply_str("reps = 3\nbogus = 1"),
            Err(ConfigError::UnknownKey { line: 2, key: "bogus".into() })
        );
        assert!(matches!(c.apply_str("reps"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(c.apply_str("reps = many"), Err(ConfigError::Value { .. })));
    }

    #[test]
    fn validation() {
        let bad = |f: fn(&mut RunConfig)| {
            let mut c = RunConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.grid_h = 0.05));
        assert!(bad(|c| c.grid_h = 3e-3));
        assert!(bad(|c| c.horizon = 0));
        assert!(bad(|c| c.reps = 0));
        assert!(bad(|c| c.tol_xi = 0.0));
        assert!(!bad(|c| c.grid_h = 1e-2));
    }

    #[test]
    fn every_key_is_settable() {
        let mut c = RunConfig::default();
        for k in RunConfig::KEYS {
            let v = match *k {
                "cache_dir" => "x",
                "output_format" => "text",
                "grid_h" | "tol_xi" => "0.001",
                _ => "5",
            };
            c.set(k, v).unwrap();
        }
    }
}
