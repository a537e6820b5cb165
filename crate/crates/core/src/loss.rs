//! Gaussian reference prior, Z-score deviation loss and the classification
//! losses used by the ablation variants.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{FateError, Result};
use crate::model::Label;

/// Lower clamp applied to probabilities before taking logarithms.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSpec {
    pub mu: f64,
    pub sigma: f64,
    /// Number of reference draws per batch.
    pub n: usize,
    /// Seed of the generator dedicated to reference draws.
    pub seed: u64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            mu: 0.0,
            sigma: 1.0,
            n: 5000,
            seed: 0,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(FateError::config("prior.mu", "must be finite"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(FateError::config(
                "prior.sigma",
                format!("must be > 0, got {}", self.sigma),
            ));
        }
        if self.n < 2 {
            return Err(FateError::config(
                "prior.n",
                format!("must be ≥ 2, got {}", self.n),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceStats {
    pub mu_r: f64,
    pub sigma_r: f64,
    pub draw_count: usize,
}

impl ReferenceStats {
    /// Sample mean and Bessel-corrected sample standard deviation.
    pub fn from_draws(draws: &[f64]) -> Result<Self> {
        let n = draws.len();
        if n < 2 {
            return Err(FateError::Precondition(format!(
                "reference statistics need at least two draws, got {n}"
            )));
        }
        let mean = draws.iter().sum::<f64>() / n as f64;
        let ss: f64 = draws.iter().map(|r| (r - mean) * (r - mean)).sum();
        let sd = (ss / (n - 1) as f64).sqrt();
        if !mean.is_finite() || !sd.is_finite() {
            return Err(FateError::numeric("reference draws", None));
        }
        if sd <= 0.0 {
            return Err(FateError::DegeneratePrior { draws: n });
        }
        Ok(Self {
            mu_r: mean,
            sigma_r: sd,
            draw_count: n,
        })
    }
}

/// Draws `n` i.i.d. values from `N(mu, sigma)` and summarises them.
pub fn sample_reference<R: Rng + ?Sized>(prior: &PriorSpec, rng: &mut R) -> Result<ReferenceStats> {
    prior.validate()?;
    let normal = Normal::new(prior.mu, prior.sigma)
        .map_err(|e| FateError::config("prior.sigma", e.to_string()))?;
    let draws: Vec<f64> = (0..prior.n).map(|_| normal.sample(rng)).collect();
    ReferenceStats::from_draws(&draws)
}

pub fn z_deviation(psi_k: f64, reference: &ReferenceStats) -> f64 {
    (psi_k - reference.mu_r) / reference.sigma_r
}

/// Inliers pay `|z|`; outliers pay the hinge `max(0, alpha - z)`.
pub fn deviation_loss(z: f64, label: Label, alpha: f64) -> f64 {
    match label {
        Label::Inlier => z.abs(),
        Label::Outlier => (alpha - z).max(0.0),
    }
}

/// Derivative of [`deviation_loss`] with respect to `z`; zero at both kinks.
pub fn deviation_loss_grad(z: f64, label: Label, alpha: f64) -> f64 {
    match label {
        Label::Inlier => {
            if z > 0.0 {
                1.0
            } else if z < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        Label::Outlier => {
            if z < alpha {
                -1.0
            } else {
                0.0
            }
        }
    }
}

/// Sum of deviation and orthogonality terms, unit weights.
pub fn total_loss(deviation: f64, orthogonality: f64) -> f64 {
    deviation + orthogonality
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    #[default]
    Deviation,
    Bce,
    Focal,
}

impl LossVariant {
    pub fn name(self) -> &'static str {
        match self {
            LossVariant::Deviation => "deviation",
            LossVariant::Bce => "bce",
            LossVariant::Focal => "focal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub variant: LossVariant,
    pub focal_gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 5.0,
            variant: LossVariant::Deviation,
            focal_gamma: 2.0,
        }
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `(p, 1 - p)` with both halves computed without cancellation.
fn probabilities(psi_k: f64) -> (f64, f64) {
    (logistic(psi_k), logistic(-psi_k))
}

fn gamma_for(cfg: &LossConfig) -> f64 {
    match cfg.variant {
        LossVariant::Focal => cfg.focal_gamma,
        _ => 0.0,
    }
}

/// Cross-entropy (`Bce`) or focal loss on `p = logistic(psi_k)`.
///
/// Returns a precondition error for the `Deviation` variant, which needs
/// reference statistics and goes through [`deviation_loss`] instead.
pub fn ablation_loss(psi_k: f64, label: Label, cfg: &LossConfig) -> Result<f64> {
    if cfg.variant == LossVariant::Deviation {
        return Err(FateError::Precondition(
            "ablation_loss called with the deviation variant".into(),
        ));
    }
    Ok(ablation_value(psi_k, label, gamma_for(cfg)))
}

pub(crate) fn ablation_value(psi_k: f64, label: Label, gamma: f64) -> f64 {
    let (p, q) = probabilities(psi_k);
    match label {
        Label::Outlier => -q.powf(gamma) * p.max(LOG_CLAMP).ln(),
        Label::Inlier => -p.powf(gamma) * q.max(LOG_CLAMP).ln(),
    }
}

/// Derivative of the ablation loss with respect to `psi_k`. Where the clamp
/// is active the logarithm is constant and contributes no gradient.
pub(crate) fn ablation_grad(psi_k: f64, label: Label, gamma: f64) -> f64 {
    let (p, q) = probabilities(psi_k);
    match label {
        Label::Outlier => {
            let ln_p = p.max(LOG_CLAMP).ln();
            let dln_p = if p > LOG_CLAMP { q } else { 0.0 };
            gamma * p * q.powf(gamma) * ln_p - q.powf(gamma) * dln_p
        }
        Label::Inlier => {
            let ln_q = q.max(LOG_CLAMP).ln();
            let dln_q = if q > LOG_CLAMP { -p } else { 0.0 };
            -gamma * q * p.powf(gamma) * ln_q - p.powf(gamma) * dln_q
        }
    }
}
