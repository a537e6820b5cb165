//! Few-shot training loop: balanced batches, a fresh reference prior per
//! batch, the batch objective and an Adam step.

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::adam::{adam_step, AdamState};
use crate::checkpoint::{checkpoint_path, fresh_rng, Checkpoint, RngState};
use crate::config::RunConfig;
use crate::error::{FateError, Result};
use crate::grad::{loss_and_gradients, BatchEntry};
use crate::loss::sample_reference;
use crate::model::{AttentionParams, EmbeddingSequence, Label};

/// Labeled training pools: the normal set and the few labeled anomalies.
#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    pub inliers: Vec<EmbeddingSequence>,
    pub outliers: Vec<EmbeddingSequence>,
}

impl TrainingSet {
    pub fn new(inliers: Vec<EmbeddingSequence>, outliers: Vec<EmbeddingSequence>) -> Result<Self> {
        let set = Self { inliers, outliers };
        set.dim()?;
        Ok(set)
    }

    /// Common embedding dimension of every document.
    pub fn dim(&self) -> Result<usize> {
        let mut docs = self.inliers.iter().chain(self.outliers.iter());
        let first = docs
            .next()
            .ok_or_else(|| FateError::Data("training set is empty".into()))?;
        let d = first.dim();
        for doc in docs {
            if doc.dim() != d {
                return Err(FateError::shape(
                    format!("training document `{}`", doc.doc_id()),
                    format!("d = {d}"),
                    format!("d = {}", doc.dim()),
                ));
            }
        }
        Ok(d)
    }
}

/// `v/2` inliers (without replacement unless the pool is smaller than `v/2`)
/// and `v/2` outliers drawn with replacement, shuffled together.
pub fn balanced_batch<'a, R: Rng + ?Sized>(
    inliers: &[&'a EmbeddingSequence],
    outliers: &[&'a EmbeddingSequence],
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<BatchEntry<'a>>> {
    if outliers.is_empty() {
        return Err(FateError::config(
            "outliers",
            "no labeled anomalies: few-shot training needs at least one labeled outlier",
        ));
    }
    if inliers.is_empty() {
        return Err(FateError::config(
            "inliers",
            "no normal documents to train on",
        ));
    }
    if batch_size == 0 || !batch_size.is_multiple_of(2) {
        return Err(FateError::config(
            "batch_size",
            format!("must be a positive even number, got {batch_size}"),
        ));
    }
    let half = batch_size / 2;
    let mut batch = Vec::with_capacity(batch_size);
    if inliers.len() >= half {
        for i in index::sample(rng, inliers.len(), half) {
            batch.push(BatchEntry {
                embedding: inliers[i],
                label: Label::Inlier,
            });
        }
    } else {
        for _ in 0..half {
            let i = rng.random_range(0..inliers.len());
            batch.push(BatchEntry {
                embedding: inliers[i],
                label: Label::Inlier,
            });
        }
    }
    for _ in 0..half {
        let i = rng.random_range(0..outliers.len());
        batch.push(BatchEntry {
            embedding: outliers[i],
            label: Label::Outlier,
        });
    }
    batch.shuffle(rng);
    Ok(batch)
}

/// Batches per epoch: every inlier seen once in expectation.
pub fn batches_per_epoch(inlier_count: usize, batch_size: usize) -> usize {
    inlier_count.div_ceil(batch_size / 2)
}

fn sorted_by_id(docs: &[EmbeddingSequence]) -> Vec<&EmbeddingSequence> {
    let mut refs: Vec<_> = docs.iter().collect();
    refs.sort_by(|a, b| a.doc_id().cmp(b.doc_id()));
    refs
}

/// Fresh parameters and optimizer state for a run, before any epoch.
pub fn initial_checkpoint(dim: usize, cfg: &RunConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    let mut batch_rng = fresh_rng(cfg.seed);
    let params = AttentionParams::init_uniform(dim, cfg.r_a, cfg.m, &mut batch_rng);
    let adam = AdamState::new(&params);
    Ok(Checkpoint {
        params,
        config: cfg.clone(),
        adam,
        batch_rng: RngState::capture(&batch_rng),
        reference_rng: RngState::capture(&fresh_rng(cfg.prior.seed)),
        epoch: 0,
        loss_history: Vec::new(),
    })
}

/// Trains from scratch for `cfg.epochs` epochs. A checkpoint is written for
/// every completed epoch (and for the initial state) when `checkpoint_dir`
/// is given.
pub fn train(
    data: &TrainingSet,
    cfg: &RunConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<Checkpoint> {
    let dim = data.dim()?;
    if data.outliers.is_empty() {
        return Err(FateError::config(
            "outliers",
            "no labeled anomalies: few-shot training needs at least one labeled outlier",
        ));
    }
    let start = initial_checkpoint(dim, cfg)?;
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| FateError::io(dir, e))?;
        start.save(&checkpoint_path(dir, 0))?;
    }
    resume(data, start, cfg.epochs, checkpoint_dir)
}

/// Continues `checkpoint` until `total_epochs` epochs are complete. Resuming
/// reproduces the uninterrupted run bit for bit.
pub fn resume(
    data: &TrainingSet,
    mut checkpoint: Checkpoint,
    total_epochs: usize,
    checkpoint_dir: Option<&Path>,
) -> Result<Checkpoint> {
    let dim = data.dim()?;
    if dim != checkpoint.dim() {
        return Err(FateError::shape(
            "resume",
            format!("data with d = {}", checkpoint.dim()),
            format!("d = {dim}"),
        ));
    }
    checkpoint.config.epochs = total_epochs;
    let cfg = checkpoint.config.clone();
    cfg.validate()?;
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| FateError::io(dir, e))?;
    }

    let inliers = sorted_by_id(&data.inliers);
    let outliers = sorted_by_id(&data.outliers);
    let batches = batches_per_epoch(inliers.len(), cfg.batch_size);
    let trainable = cfg.architecture_variant.has_attention();

    let mut batch_rng: ChaCha8Rng = checkpoint.batch_rng.restore();
    let mut reference_rng: ChaCha8Rng = checkpoint.reference_rng.restore();

    while checkpoint.epoch < total_epochs {
        let epoch = checkpoint.epoch + 1;
        let mut loss_sum = 0.0;
        for b in 0..batches {
            let batch = balanced_batch(&inliers, &outliers, cfg.batch_size, &mut batch_rng)?;
            let reference = sample_reference(&cfg.prior, &mut reference_rng)?;
            let out = loss_and_gradients(&batch, &checkpoint.params, Some(&reference), &cfg)?;
            log::info!(
                target: "fate::train",
                "epoch={epoch} batch={} l1={:.6} l2={:.6} total={:.6} mu_r={:.6} sigma_r={:.6}",
                b + 1,
                out.deviation,
                out.orthogonality,
                out.total,
                reference.mu_r,
                reference.sigma_r
            );
            if trainable {
                adam_step(
                    &mut checkpoint.params,
                    &out.grads,
                    &mut checkpoint.adam,
                    cfg.learning_rate,
                );
                if checkpoint
                    .params
                    .theta1
                    .iter()
                    .chain(checkpoint.params.theta2.iter())
                    .any(|v| !v.is_finite())
                {
                    return Err(FateError::numeric(
                        format!("adam update (epoch {epoch}, batch {})", b + 1),
                        None,
                    ));
                }
            }
            loss_sum += out.total;
        }
        checkpoint.epoch = epoch;
        checkpoint
            .loss_history
            .push((epoch, loss_sum / batches as f64));
        checkpoint.batch_rng = RngState::capture(&batch_rng);
        checkpoint.reference_rng = RngState::capture(&reference_rng);
        if let Some(dir) = checkpoint_dir {
            checkpoint.save(&checkpoint_path(dir, epoch))?;
        }
    }
    Ok(checkpoint)
}
