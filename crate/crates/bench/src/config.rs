//! Experiment configuration, loaded from JSON or assembled from CLI flags.

use std::path::{Path, PathBuf};

use ncdecomp::examples::{Algorithm, AlgorithmParams, ExampleError, Variant};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MAX_ITERS: usize = 10;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("unknown example {0}; expected 1 to 6")]
    UnknownExample(u8),
    #[error("{0} has no tuned parameters for this example")]
    NoTuning(Algorithm),
    #[error("{field} must be positive")]
    NotPositive { field: &'static str },
    #[error("max_iters must be at least 10 for the convergence test")]
    TooFewIterations,
    #[error(transparent)]
    Example(#[from] ExampleError),
}

/// Partial parameter overrides; anything left out keeps its tuned value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    pub tau: Option<f64>,
    pub tau_y: Option<f64>,
    pub gamma0: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub epsilon: Option<f64>,
    pub gamma_in0: Option<f64>,
    pub beta_in: Option<f64>,
    pub sigma: Option<f64>,
    pub inner_steps: Option<usize>,
    pub curvature_l: Option<f64>,
}

impl ParamOverrides {
    pub fn apply(&self, mut p: AlgorithmParams) -> AlgorithmParams {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { p.$f = v; })* };
        }
        set!(tau, tau_y, gamma0, alpha, beta, epsilon, gamma_in0, beta_in, sigma, inner_steps, curvature_l);
        p
    }
}

fn default_true() -> bool {
    true
}
fn default_one() -> usize {
    1
}
fn default_iters() -> usize {
    DEFAULT_MAX_ITERS
}

/// Field names double as the JSON schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub example: u8,
    pub algorithm: Algorithm,
    pub blocks: usize,
    pub samples: usize,
    pub inits: usize,
    pub seed: u64,
    #[serde(default)]
    pub params: ParamOverrides,
    #[serde(default = "default_iters")]
    pub max_iters: usize,
    pub out: PathBuf,
    #[serde(default = "default_one")]
    pub parallelism: usize,
    /// When false the time column is written as `NA`, making the file reproducible.
    #[serde(default = "default_true")]
    pub timing: bool,
    /// Directory for per-trial `iteration objective` files.
    #[serde(default)]
    pub plot_dir: Option<PathBuf>,
}

/// A config that passed validation, with the effective parameters resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidConfig {
    pub config: RunConfig,
    pub variant: Variant,
    pub params: AlgorithmParams,
}

impl RunConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })
    }

    pub fn validate(self) -> Result<ValidConfig, ConfigError> {
        let variant = Variant::from_number(self.example).ok_or(ConfigError::UnknownExample(self.example))?;
        self.algorithm.check(variant)?;
        for (field, v) in [("blocks", self.blocks), ("samples", self.samples), ("inits", self.inits), ("parallelism", self.parallelism)] {
            if v == 0 {
                return Err(ConfigError::NotPositive { field });
            }
        }
        if self.max_iters < DEFAULT_MAX_ITERS {
            return Err(ConfigError::TooFewIterations);
        }
        let tuned = AlgorithmParams::tuned(self.algorithm, variant).ok_or(ConfigError::NoTuning(self.algorithm))?;
        let params = self.params.apply(tuned);
        params.schedule().map_err(ExampleError::from)?;
        params.inner().map_err(ExampleError::from)?;
        Ok(ValidConfig { config: self, variant, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RunConfig {
        RunConfig::from_json(
            r#"{"example": 4, "algorithm": "dd", "blocks": 10, "samples": 2, "inits": 3, "seed": 7, "out": "r.csv"}"#,
            Path::new("x.json"),
        )
        .unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let c = base();
        assert_eq!(c.max_iters, 10);
        assert_eq!(c.parallelism, 1);
        assert!(c.timing);
        let v = c.validate().unwrap();
        assert_eq!(v.params, AlgorithmParams::tuned(Algorithm::Dd, Variant::Ex4).unwrap());
    }

    #[test]
    fn inapplicable_pair_is_rejected() {
        let c = RunConfig { example: 1, algorithm: Algorithm::Spd, ..base() };
        assert!(matches!(c.validate(), Err(ConfigError::Example(ExampleError::NotApplicable { .. }))));
    }

    #[test]
    fn overrides_apply_and_are_checked() {
        let mut c = base();
        c.params.tau = Some(3.0);
        assert_eq!(c.clone().validate().unwrap().params.tau, 3.0);
        c.params.epsilon = Some(2.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_fields_are_errors() {
        let err = RunConfig::from_json(r#"{"example": 4, "algo": "dd"}"#, Path::new("x.json")).unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }));
    }
}
