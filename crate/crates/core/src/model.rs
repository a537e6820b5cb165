//! Forward computation of the anomaly scorer.
//!
//! A document arrives as a `d × N` matrix of token embeddings. The attention
//! layer produces `m` heads over the `N` positions, each head pools the tokens
//! into a `d`-vector, and the `d·m` pooled entries form the bag of instance
//! scores from which the top-K mean is taken.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FateError, Result};

/// Token embeddings for one document, stored as `d × N` (dimension × tokens).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    doc_id: String,
    tokens: Array2<f64>,
}

impl EmbeddingSequence {
    pub fn new(doc_id: impl Into<String>, tokens: Array2<f64>) -> Result<Self> {
        let doc_id = doc_id.into();
        let (d, n) = tokens.dim();
        if d == 0 || n == 0 {
            return Err(FateError::shape(
                format!("embedding sequence `{doc_id}`"),
                "d ≥ 1 and N ≥ 1",
                format!("{d}×{n}"),
            ));
        }
        if tokens.iter().any(|v| !v.is_finite()) {
            return Err(FateError::numeric("embedding input", Some(&doc_id)));
        }
        Ok(Self { doc_id, tokens })
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn tokens(&self) -> ArrayView2<'_, f64> {
        self.tokens.view()
    }

    /// Embedding dimension `d`.
    pub fn dim(&self) -> usize {
        self.tokens.nrows()
    }

    /// Token count `N`.
    pub fn len(&self) -> usize {
        self.tokens.ncols()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// The two trainable matrices: `theta1` is `d × r_a`, `theta2` is `r_a × m`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub theta1: Array2<f64>,
    pub theta2: Array2<f64>,
}

impl AttentionParams {
    pub fn new(theta1: Array2<f64>, theta2: Array2<f64>) -> Result<Self> {
        if theta1.ncols() != theta2.nrows() {
            return Err(FateError::shape(
                "attention parameters",
                format!("theta2 with {} rows", theta1.ncols()),
                format!("{}×{}", theta2.nrows(), theta2.ncols()),
            ));
        }
        if theta1.is_empty() || theta2.is_empty() {
            return Err(FateError::shape(
                "attention parameters",
                "non-empty matrices",
                format!("{:?} and {:?}", theta1.dim(), theta2.dim()),
            ));
        }
        if theta1.iter().chain(theta2.iter()).any(|v| !v.is_finite()) {
            return Err(FateError::numeric("attention parameters", None));
        }
        Ok(Self { theta1, theta2 })
    }

    pub fn zeros(dim: usize, width: usize, heads: usize) -> Self {
        Self {
            theta1: Array2::zeros((dim, width)),
            theta2: Array2::zeros((width, heads)),
        }
    }

    /// Uniform initialisation in `(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`
    /// for each matrix. `theta1` is filled before `theta2`, row-major.
    pub fn init_uniform<R: Rng + ?Sized>(
        dim: usize,
        width: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        let mut fill = |rows: usize, cols: usize| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let values: Vec<f64> = (0..rows * cols)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            Array2::from_shape_vec((rows, cols), values).expect("length matches shape")
        };
        let theta1 = fill(dim, width);
        let theta2 = fill(width, heads);
        Self { theta1, theta2 }
    }

    pub fn dim(&self) -> usize {
        self.theta1.nrows()
    }

    /// Intermediate attention width `r_a`.
    pub fn width(&self) -> usize {
        self.theta1.ncols()
    }

    /// Number of attention heads `m`.
    pub fn heads(&self) -> usize {
        self.theta2.ncols()
    }

    pub fn parameter_count(&self) -> usize {
        self.theta1.len() + self.theta2.len()
    }
}

/// `N × m` column-stochastic attention weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix(Array2<f64>);

impl AttentionMatrix {
    /// Wraps an arbitrary matrix without checking column-stochasticity.
    /// Useful for evaluating the orthogonality penalty on hand-built inputs.
    pub fn from_raw(a: Array2<f64>) -> Self {
        Self(a)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn tokens(&self) -> usize {
        self.0.nrows()
    }

    pub fn heads(&self) -> usize {
        self.0.ncols()
    }
}

/// Flattened score matrix `S`. Entry `j·d + i` holds `S[i][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceScores {
    values: Vec<f64>,
    dim: usize,
}

impl InstanceScores {
    pub fn from_matrix(s: &Array2<f64>) -> Self {
        let dim = s.nrows();
        // Column-major flattening.
        let values = s.t().iter().copied().collect();
        Self { values, dim }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `S[i][j]`, component `i` of head `j`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.dim + i]
    }

    pub fn to_matrix(&self) -> Array2<f64> {
        let heads = self.values.len() / self.dim;
        Array2::from_shape_fn((self.dim, heads), |(i, j)| self.get(i, j))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Inlier,
    Outlier,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        match self {
            Label::Inlier => 0.0,
            Label::Outlier => 1.0,
        }
    }

    pub fn is_outlier(self) -> bool {
        matches!(self, Label::Outlier)
    }
}

impl From<Label> for u8 {
    fn from(label: Label) -> u8 {
        match label {
            Label::Inlier => 0,
            Label::Outlier => 1,
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(value: u8) -> std::result::Result<Self, Self::Error> {
        match value {
            0 => Ok(Label::Inlier),
            1 => Ok(Label::Outlier),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub embedding: EmbeddingSequence,
    pub label: Label,
}

impl LabeledExample {
    pub fn new(embedding: EmbeddingSequence, label: Label) -> Self {
        Self { embedding, label }
    }
}

/// Which scorer topology to use; the two reduced forms exist for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ArchitectureVariant {
    #[default]
    Full,
    /// Mean over all `d·m` instances instead of the top-K mean.
    NoTopk,
    /// Top-K over the raw flattened embeddings; no attention, no parameters.
    NoMhsa,
}

impl ArchitectureVariant {
    pub fn name(self) -> &'static str {
        match self {
            ArchitectureVariant::Full => "full",
            ArchitectureVariant::NoTopk => "no_topk",
            ArchitectureVariant::NoMhsa => "no_mhsa",
        }
    }

    pub fn has_attention(self) -> bool {
        !matches!(self, ArchitectureVariant::NoMhsa)
    }
}

/// Intermediates of the attention layer kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct AttentionTrace {
    /// `tanh(hᵀ Θ1)`, shape `N × r_a`.
    pub hidden: Array2<f64>,
    pub attention: AttentionMatrix,
}

fn check_param_dim(h: &EmbeddingSequence, params: &AttentionParams) -> Result<()> {
    if h.dim() != params.dim() {
        return Err(FateError::shape(
            format!("attention_forward for `{}`", h.doc_id()),
            format!("theta1 {}×{}", h.dim(), params.width()),
            format!(
                "embedding {}×{} against theta1 {}×{}",
                h.dim(),
                h.len(),
                params.dim(),
                params.width()
            ),
        ));
    }
    Ok(())
}

/// In-place softmax over each column, max-subtracted.
pub(crate) fn column_softmax(logits: &mut Array2<f64>) {
    for mut col in logits.axis_iter_mut(Axis(1)) {
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        col.mapv_inplace(|v| (v - max).exp());
        let sum = col.sum();
        col.mapv_inplace(|v| v / sum);
    }
}

pub(crate) fn attention_trace(
    h: &EmbeddingSequence,
    params: &AttentionParams,
) -> Result<AttentionTrace> {
    check_param_dim(h, params)?;
    let mut hidden = h.tokens().t().dot(&params.theta1);
    hidden.mapv_inplace(f64::tanh);
    let mut logits = hidden.dot(&params.theta2);
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(FateError::numeric("attention logits", Some(h.doc_id())));
    }
    column_softmax(&mut logits);
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(FateError::numeric("attention softmax", Some(h.doc_id())));
    }
    Ok(AttentionTrace {
        hidden,
        attention: AttentionMatrix(logits),
    })
}

/// `A = column_softmax(tanh(hᵀ Θ1) Θ2)`, shape `N × m`.
pub fn attention_forward(
    h: &EmbeddingSequence,
    params: &AttentionParams,
) -> Result<AttentionMatrix> {
    attention_trace(h, params).map(|t| t.attention)
}

/// `S = h A`, flattened column-major to `d·m` instance scores.
pub fn score_matrix(h: &EmbeddingSequence, a: &AttentionMatrix) -> Result<InstanceScores> {
    if a.tokens() != h.len() {
        return Err(FateError::shape(
            format!("score_matrix for `{}`", h.doc_id()),
            format!("attention with {} rows", h.len()),
            format!("{}×{}", a.tokens(), a.heads()),
        ));
    }
    let s = h.tokens().dot(&a.view());
    Ok(InstanceScores::from_matrix(&s))
}

/// `K = max(1, floor(k_fraction · n))`, capped at `n`.
pub fn top_k_count(n: usize, k_fraction: f64) -> usize {
    // Small slack so that e.g. 0.29 · 100 yields 29 rather than 28.
    let k = (k_fraction * n as f64 + 1e-9).floor() as usize;
    k.clamp(1, n.max(1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopK {
    pub score: f64,
    /// Selected indices, ascending.
    pub selected: Vec<usize>,
}

/// Mean of the `K` largest entries. Ties at the boundary go to the lowest index.
pub fn topk_score(scores: &[f64], k_fraction: f64) -> Result<TopK> {
    if scores.is_empty() {
        return Err(FateError::Precondition(
            "top-K over an empty score vector".into(),
        ));
    }
    if !(k_fraction > 0.0 && k_fraction <= 1.0) {
        return Err(FateError::Precondition(format!(
            "k_fraction must lie in (0, 1], got {k_fraction}"
        )));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(FateError::numeric("instance scores", None));
    }
    let k = top_k_count(scores.len(), k_fraction);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let rank =
        |a: &usize, b: &usize| -> Ordering { scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)) };
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, rank);
        order.truncate(k);
    }
    order.sort_unstable();
    let score = order.iter().map(|&i| scores[i]).sum::<f64>() / k as f64;
    Ok(TopK {
        score,
        selected: order,
    })
}

/// `‖AᵀA − I‖²_F`.
pub fn mhsa_orthogonality_loss(a: &AttentionMatrix) -> f64 {
    let gram = a.view().t().dot(&a.view());
    gram.indexed_iter()
        .map(|((i, j), &g)| {
            let diff = if i == j { g - 1.0 } else { g };
            diff * diff
        })
        .sum()
}

/// Gradient of [`mhsa_orthogonality_loss`] with respect to `A`: `4·A·(AᵀA − I)`.
pub fn mhsa_orthogonality_grad(a: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut gram = a.t().dot(&a);
    gram.diag_mut().mapv_inplace(|g| g - 1.0);
    a.dot(&gram) * 4.0
}

#[derive(Debug, Clone)]
pub struct DocumentScore {
    pub psi_k: f64,
    pub attention: AttentionMatrix,
    pub instances: InstanceScores,
    pub selected: Vec<usize>,
}

/// Attention, pooling and top-K mean chained together.
pub fn document_score(
    h: &EmbeddingSequence,
    params: &AttentionParams,
    k_fraction: f64,
) -> Result<DocumentScore> {
    let attention = attention_forward(h, params)?;
    let instances = score_matrix(h, &attention)?;
    let top = topk_score(instances.as_slice(), k_fraction)?;
    Ok(DocumentScore {
        psi_k: top.score,
        attention,
        instances,
        selected: top.selected,
    })
}

/// Column-major flattening of the raw embeddings, used by the no-attention scorer.
pub fn flatten_embeddings(h: &EmbeddingSequence) -> Vec<f64> {
    h.tokens().t().iter().copied().collect()
}

/// Scalar anomaly score of one document under the given topology.
pub fn score_with_variant(
    h: &EmbeddingSequence,
    params: &AttentionParams,
    k_fraction: f64,
    variant: ArchitectureVariant,
) -> Result<f64> {
    match variant {
        ArchitectureVariant::Full => document_score(h, params, k_fraction).map(|s| s.psi_k),
        ArchitectureVariant::NoTopk => document_score(h, params, 1.0).map(|s| s.psi_k),
        ArchitectureVariant::NoMhsa => {
            topk_score(&flatten_embeddings(h), k_fraction).map(|t| t.score)
        }
    }
}
