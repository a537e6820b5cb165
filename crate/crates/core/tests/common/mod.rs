#![allow(dead_code, clippy::needless_range_loop)]

use fate::config::RunConfig;
use fate::grad::{batch_loss, loss_and_gradients, BatchEntry};
use fate::loss::{sample_reference, LossVariant, PriorSpec, ReferenceStats};
use fate::metrics::ScoredSet;
use fate::model::{ArchitectureVariant, AttentionParams, EmbeddingSequence, Label, LabeledExample};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        scale * rng.sample::<f64, _>(StandardNormal)
    })
}

/// A small random training problem.
pub struct Instance {
    pub docs: Vec<LabeledExample>,
    pub params: AttentionParams,
    pub cfg: RunConfig,
    pub reference: ReferenceStats,
}

impl Instance {
    pub fn random(seed: u64, loss: LossVariant, arch: ArchitectureVariant) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(1..=8);
        let r_a = rng.random_range(1..=4);
        let m = rng.random_range(1..=3);
        let batch = rng.random_range(1..=4);
        let docs = (0..batch)
            .map(|i| {
                let n = rng.random_range(1..=6);
                let h =
                    EmbeddingSequence::new(format!("d{i}"), gaussian(d, n, 1.0, &mut rng)).unwrap();
                // Both labels always appear once the batch has two documents.
                let label = if i % 2 == 0 {
                    Label::Outlier
                } else {
                    Label::Inlier
                };
                LabeledExample::new(h, label)
            })
            .collect();
        let params = AttentionParams::new(
            gaussian(d, r_a, 0.8, &mut rng),
            gaussian(r_a, m, 0.8, &mut rng),
        )
        .unwrap();
        let cfg = RunConfig {
            r_a,
            m,
            k_fraction: rng.random_range(0.05..0.6),
            alpha: rng.random_range(0.5..3.0),
            loss_variant: loss,
            architecture_variant: arch,
            ..RunConfig::default()
        };
        let prior = PriorSpec {
            mu: rng.random_range(-0.5..0.5),
            sigma: rng.random_range(0.3..1.5),
            n: 200,
            seed,
        };
        let reference = sample_reference(&prior, &mut ChaCha8Rng::seed_from_u64(seed ^ 7)).unwrap();
        Self {
            docs,
            params,
            cfg,
            reference,
        }
    }

    pub fn batch(&self) -> Vec<BatchEntry<'_>> {
        self.docs.iter().map(|d| d.as_entry()).collect()
    }

    fn loss_at(&self, params: &AttentionParams) -> f64 {
        batch_loss(&self.batch(), params, Some(&self.reference), &self.cfg).unwrap()
    }
}

pub struct FdReport {
    pub max_rel_error: f64,
    pub entries: usize,
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-7)
}

/// Compares analytic gradients with central differences. Returns `None` when a
/// probe crosses a non-differentiable point (a top-K selection change or a kink
/// of the deviation loss), which shows up as a one-sided slope mismatch.
pub fn finite_difference_check(inst: &Instance, step: f64) -> Option<FdReport> {
    let analytic = loss_and_gradients(
        &inst.batch(),
        &inst.params,
        Some(&inst.reference),
        &inst.cfg,
    )
    .unwrap();
    let mut worst: f64 = 0.0;
    let mut entries = 0;
    for which in 0..2 {
        let shape = if which == 0 {
            inst.params.theta1.dim()
        } else {
            inst.params.theta2.dim()
        };
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                let probe = |delta: f64| {
                    let mut p = inst.params.clone();
                    if which == 0 {
                        p.theta1[[i, j]] += delta;
                    } else {
                        p.theta2[[i, j]] += delta;
                    }
                    inst.loss_at(&p)
                };
                let (plus, minus, centre) = (probe(step), probe(-step), probe(0.0));
                let forward = (plus - centre) / step;
                let backward = (centre - minus) / step;
                // Smooth functions have near-equal one-sided slopes.
                if (forward - backward).abs() > 1e-3 * (1.0 + forward.abs().max(backward.abs())) {
                    return None;
                }
                let numeric = (plus - minus) / (2.0 * step);
                let a = if which == 0 {
                    analytic.grads.d_theta1[[i, j]]
                } else {
                    analytic.grads.d_theta2[[i, j]]
                };
                worst = worst.max(rel_error(a, numeric));
                entries += 1;
            }
        }
    }
    Some(FdReport {
        max_rel_error: worst,
        entries,
    })
}

/// Every `(loss, architecture)` pair the trainer accepts.
pub fn all_variants() -> Vec<(LossVariant, ArchitectureVariant)> {
    let mut out = Vec::new();
    for loss in [LossVariant::Deviation, LossVariant::Bce, LossVariant::Focal] {
        for arch in [
            ArchitectureVariant::Full,
            ArchitectureVariant::NoTopk,
            ArchitectureVariant::NoMhsa,
        ] {
            out.push((loss, arch));
        }
    }
    out
}

/// AUROC by counting every positive/negative pair.
pub fn auroc_pairs(s: &ScoredSet) -> f64 {
    let pos: Vec<f64> = s
        .entries
        .iter()
        .filter(|e| e.label.is_outlier())
        .map(|e| e.score)
        .collect();
    let neg: Vec<f64> = s
        .entries
        .iter()
        .filter(|e| !e.label.is_outlier())
        .map(|e| e.score)
        .collect();
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

/// Average precision by enumerating every distinct score as a threshold.
pub fn auprc_thresholds(s: &ScoredSet) -> f64 {
    let total_pos = s.entries.iter().filter(|e| e.label.is_outlier()).count() as f64;
    let mut thresholds: Vec<f64> = s.entries.iter().map(|e| e.score).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds {
        let tp = s
            .entries
            .iter()
            .filter(|e| e.score >= t && e.label.is_outlier())
            .count() as f64;
        let predicted = s.entries.iter().filter(|e| e.score >= t).count() as f64;
        let recall = tp / total_pos;
        ap += (tp / predicted) * (recall - prev_recall);
        prev_recall = recall;
    }
    ap
}

/// Document score with explicit scalar loops, independent of the library's
/// matrix code.
pub fn naive_document_score(
    h: &[Vec<f64>],
    theta1: &[Vec<f64>],
    theta2: &[Vec<f64>],
    k_fraction: f64,
) -> f64 {
    let d = h.len();
    let n = h[0].len();
    let r_a = theta1[0].len();
    let m = theta2[0].len();
    // logits[t][j] = sum_r tanh(sum_i h[i][t] θ1[i][r]) θ2[r][j]
    let mut logits = vec![vec![0.0; m]; n];
    for t in 0..n {
        for r in 0..r_a {
            let mut pre = 0.0;
            for i in 0..d {
                pre += h[i][t] * theta1[i][r];
            }
            let act = pre.tanh();
            for j in 0..m {
                logits[t][j] += act * theta2[r][j];
            }
        }
    }
    let mut a = vec![vec![0.0; m]; n];
    for j in 0..m {
        let max = (0..n)
            .map(|t| logits[t][j])
            .fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..n).map(|t| (logits[t][j] - max).exp()).sum();
        for t in 0..n {
            a[t][j] = (logits[t][j] - max).exp() / z;
        }
    }
    let mut s = Vec::with_capacity(d * m);
    for j in 0..m {
        for i in 0..d {
            s.push((0..n).map(|t| h[i][t] * a[t][j]).sum::<f64>());
        }
    }
    let k = ((k_fraction * s.len() as f64 + 1e-9).floor() as usize).max(1);
    s.sort_by(|x, y| y.total_cmp(x));
    s[..k].iter().sum::<f64>() / k as f64
}
