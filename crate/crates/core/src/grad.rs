//! Batch objective and its exact gradient with respect to both attention
//! matrices.
//!
//! Reverse pass for one document, in order:
//! loss → ψ_K (1/K to each selected instance) → S = hA → A, plus the
//! orthogonality term 4·A·(AᵀA − I) → column softmax → Θ2 and tanh → Θ1.

use ndarray::{Array2, Axis, Zip};

use crate::config::RunConfig;
use crate::error::{FateError, Result};
use crate::loss::{
    ablation_grad, ablation_value, deviation_loss, deviation_loss_grad, z_deviation, LossVariant,
    ReferenceStats,
};
use crate::model::{
    attention_trace, flatten_embeddings, mhsa_orthogonality_grad, mhsa_orthogonality_loss,
    topk_score, ArchitectureVariant, AttentionParams, EmbeddingSequence, InstanceScores, Label,
    LabeledExample,
};

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub d_theta1: Array2<f64>,
    pub d_theta2: Array2<f64>,
}

impl GradientBundle {
    pub fn zeros_like(params: &AttentionParams) -> Self {
        Self {
            d_theta1: Array2::zeros(params.theta1.raw_dim()),
            d_theta2: Array2::zeros(params.theta2.raw_dim()),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.d_theta1
            .iter()
            .chain(self.d_theta2.iter())
            .fold(0.0, |acc, v| acc.max(v.abs()))
    }

    fn is_finite(&self) -> bool {
        self.d_theta1
            .iter()
            .chain(self.d_theta2.iter())
            .all(|v| v.is_finite())
    }
}

/// A borrowed batch member.
#[derive(Debug, Clone, Copy)]
pub struct BatchEntry<'a> {
    pub embedding: &'a EmbeddingSequence,
    pub label: Label,
}

impl LabeledExample {
    pub fn as_entry(&self) -> BatchEntry<'_> {
        BatchEntry {
            embedding: &self.embedding,
            label: self.label,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchLoss {
    /// Batch-mean deviation (or ablation) term.
    pub deviation: f64,
    /// Batch-mean orthogonality term.
    pub orthogonality: f64,
    /// `deviation + orthogonality`.
    pub total: f64,
    pub grads: GradientBundle,
}

struct DocumentLoss {
    deviation: f64,
    orthogonality: f64,
    grads: Option<GradientBundle>,
}

fn first_term(
    psi_k: f64,
    label: Label,
    reference: Option<&ReferenceStats>,
    cfg: &RunConfig,
) -> Result<(f64, f64)> {
    match cfg.loss_variant {
        LossVariant::Deviation => {
            let reference = reference.ok_or_else(|| {
                FateError::Precondition("deviation loss requires reference statistics".into())
            })?;
            let z = z_deviation(psi_k, reference);
            Ok((
                deviation_loss(z, label, cfg.alpha),
                deviation_loss_grad(z, label, cfg.alpha) / reference.sigma_r,
            ))
        }
        LossVariant::Bce => Ok((
            ablation_value(psi_k, label, 0.0),
            ablation_grad(psi_k, label, 0.0),
        )),
        LossVariant::Focal => Ok((
            ablation_value(psi_k, label, cfg.focal_gamma),
            ablation_grad(psi_k, label, cfg.focal_gamma),
        )),
    }
}

fn document_loss(
    entry: BatchEntry<'_>,
    params: &AttentionParams,
    reference: Option<&ReferenceStats>,
    cfg: &RunConfig,
    with_grads: bool,
) -> Result<DocumentLoss> {
    let h = entry.embedding;
    if cfg.architecture_variant == ArchitectureVariant::NoMhsa {
        let top = topk_score(&flatten_embeddings(h), cfg.k_fraction)?;
        let (l1, _) = first_term(top.score, entry.label, reference, cfg)?;
        return Ok(DocumentLoss {
            deviation: l1,
            orthogonality: 0.0,
            grads: with_grads.then(|| GradientBundle::zeros_like(params)),
        });
    }

    let trace = attention_trace(h, params)?;
    let a = trace.attention.view();
    let s = h.tokens().dot(&a);
    let instances = InstanceScores::from_matrix(&s);
    let k_fraction = match cfg.architecture_variant {
        ArchitectureVariant::NoTopk => 1.0,
        _ => cfg.k_fraction,
    };
    let top = topk_score(instances.as_slice(), k_fraction)?;
    let (l1, dl1_dpsi) = first_term(top.score, entry.label, reference, cfg)?;
    let l2 = mhsa_orthogonality_loss(&trace.attention);
    if !with_grads {
        return Ok(DocumentLoss {
            deviation: l1,
            orthogonality: l2,
            grads: None,
        });
    }

    let d = h.dim();
    let per_instance = dl1_dpsi / top.selected.len() as f64;
    let mut d_s = Array2::<f64>::zeros(s.raw_dim());
    for &idx in &top.selected {
        d_s[[idx % d, idx / d]] = per_instance;
    }
    let mut d_a = h.tokens().t().dot(&d_s);
    d_a += &mhsa_orthogonality_grad(a);

    // Column softmax: dL_j = a_j ⊙ (dA_j − ⟨a_j, dA_j⟩).
    let mut d_logits = d_a;
    for (mut g, col) in d_logits.axis_iter_mut(Axis(1)).zip(a.axis_iter(Axis(1))) {
        let inner = g.dot(&col);
        Zip::from(&mut g)
            .and(&col)
            .for_each(|g, &p| *g = p * (*g - inner));
    }

    let d_theta2 = trace.hidden.t().dot(&d_logits);
    let mut d_hidden = d_logits.dot(&params.theta2.t());
    Zip::from(&mut d_hidden)
        .and(&trace.hidden)
        .for_each(|g, &t| *g *= 1.0 - t * t);
    let d_theta1 = h.tokens().dot(&d_hidden);

    let grads = GradientBundle { d_theta1, d_theta2 };
    if !grads.is_finite() {
        return Err(FateError::numeric("backward pass", Some(h.doc_id())));
    }
    Ok(DocumentLoss {
        deviation: l1,
        orthogonality: l2,
        grads: Some(grads),
    })
}

fn batch_objective(
    batch: &[BatchEntry<'_>],
    params: &AttentionParams,
    reference: Option<&ReferenceStats>,
    cfg: &RunConfig,
    with_grads: bool,
) -> Result<BatchLoss> {
    if batch.is_empty() {
        return Err(FateError::Precondition("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut deviation = 0.0;
    let mut orthogonality = 0.0;
    let mut grads = GradientBundle::zeros_like(params);
    // Reduction runs in batch order so results are reproducible bit for bit.
    for entry in batch {
        let doc = document_loss(*entry, params, reference, cfg, with_grads)?;
        deviation += doc.deviation;
        orthogonality += doc.orthogonality;
        if let Some(g) = doc.grads {
            grads.d_theta1 += &g.d_theta1;
            grads.d_theta2 += &g.d_theta2;
        }
    }
    deviation *= scale;
    orthogonality *= scale;
    grads.d_theta1 *= scale;
    grads.d_theta2 *= scale;
    let total = deviation + orthogonality;
    if !total.is_finite() {
        return Err(FateError::numeric("batch loss", None));
    }
    Ok(BatchLoss {
        deviation,
        orthogonality,
        total,
        grads,
    })
}

/// Batch-mean objective and its gradient. `reference` may be `None` for the
/// cross-entropy and focal variants.
pub fn loss_and_gradients(
    batch: &[BatchEntry<'_>],
    params: &AttentionParams,
    reference: Option<&ReferenceStats>,
    cfg: &RunConfig,
) -> Result<BatchLoss> {
    batch_objective(batch, params, reference, cfg, true)
}

/// Batch-mean objective without the backward pass.
pub fn batch_loss(
    batch: &[BatchEntry<'_>],
    params: &AttentionParams,
    reference: Option<&ReferenceStats>,
    cfg: &RunConfig,
) -> Result<f64> {
    batch_objective(batch, params, reference, cfg, false).map(|l| l.total)
}
