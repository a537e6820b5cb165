use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FateError, Result};
use crate::loss::{LossConfig, LossVariant, PriorSpec};
use crate::model::ArchitectureVariant;

/// Parameter initialisation scheme. Only one is implemented; it is recorded
/// so that checkpoints state how they were started.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Uniform in `(-b, b)`, `b = sqrt(6 / (fan_in + fan_out))`.
    #[default]
    XavierUniform,
}

/// Every hyperparameter of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Attention width `r_a`.
    pub r_a: usize,
    /// Attention heads `m`.
    pub m: usize,
    pub k_fraction: f64,
    /// Deviation margin.
    pub alpha: f64,
    pub learning_rate: f64,
    /// Must be even: half inliers, half outliers.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss_variant: LossVariant,
    pub focal_gamma: f64,
    pub architecture_variant: ArchitectureVariant,
    pub init: InitScheme,
    pub prior: PriorSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            r_a: 150,
            m: 5,
            k_fraction: 0.10,
            alpha: 5.0,
            learning_rate: 1e-6,
            batch_size: 16,
            epochs: 30,
            seed: 0,
            loss_variant: LossVariant::Deviation,
            focal_gamma: 2.0,
            architecture_variant: ArchitectureVariant::Full,
            init: InitScheme::XavierUniform,
            prior: PriorSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r_a == 0 {
            return Err(FateError::config("r_a", "must be positive"));
        }
        if self.m == 0 {
            return Err(FateError::config("m", "must be positive"));
        }
        if !(self.k_fraction > 0.0 && self.k_fraction <= 1.0) {
            return Err(FateError::config(
                "k_fraction",
                format!("must lie in (0, 1], got {}", self.k_fraction),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(FateError::config(
                "alpha",
                format!("must be > 0, got {}", self.alpha),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(FateError::config(
                "learning_rate",
                format!("must be > 0, got {}", self.learning_rate),
            ));
        }
        if self.batch_size == 0 || !self.batch_size.is_multiple_of(2) {
            return Err(FateError::config(
                "batch_size",
                format!("must be a positive even number, got {}", self.batch_size),
            ));
        }
        if !(self.focal_gamma >= 0.0 && self.focal_gamma.is_finite()) {
            return Err(FateError::config("focal_gamma", "must be ≥ 0"));
        }
        self.prior.validate()
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            alpha: self.alpha,
            variant: self.loss_variant,
            focal_gamma: self.focal_gamma,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| FateError::config("config", e.message().to_owned()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serialises to TOML")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FateError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            FateError::Config { field, reason } => FateError::Config {
                field,
                reason: format!("{reason} (in {})", path.display()),
            },
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()).map_err(|e| FateError::io(path, e))
    }
}
