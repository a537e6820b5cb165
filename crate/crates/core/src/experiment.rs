//! Scoring, evaluation and parameter sweeps.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{fresh_rng, Checkpoint};
use crate::config::RunConfig;
use crate::dataset::{generate_synthetic, SyntheticSpec};
use crate::error::{FateError, Result};
use crate::loss::LossVariant;
use crate::metrics::{auprc, auroc, ScoredEntry, ScoredSet};
use crate::model::{
    score_with_variant, ArchitectureVariant, EmbeddingSequence, Label, LabeledExample,
};
use crate::train::{train, TrainingSet};

/// Scores every document with the checkpoint's parameters and topology.
pub fn score_dataset(docs: &[LabeledExample], checkpoint: &Checkpoint) -> Result<ScoredSet> {
    let cfg = &checkpoint.config;
    let entries = docs
        .iter()
        .map(|ex| {
            let h = &ex.embedding;
            if h.dim() != checkpoint.dim() {
                return Err(FateError::shape(
                    format!("scoring `{}`", h.doc_id()),
                    format!("d = {} (checkpoint)", checkpoint.dim()),
                    format!("d = {}", h.dim()),
                ));
            }
            let score = score_with_variant(
                h,
                &checkpoint.params,
                cfg.k_fraction,
                cfg.architecture_variant,
            )?;
            Ok(ScoredEntry {
                doc_id: h.doc_id().to_owned(),
                score,
                label: ex.label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoredSet::new(entries))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub auroc: f64,
    pub auprc: f64,
}

pub fn evaluate(scored: &ScoredSet) -> Result<Evaluation> {
    Ok(Evaluation {
        auroc: auroc(scored)?,
        auprc: auprc(scored)?,
    })
}

/// Training pools, a reserve of true anomalies for contamination, and a
/// labeled test split.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: TrainingSet,
    pub contamination_pool: Vec<EmbeddingSequence>,
    pub test: Vec<LabeledExample>,
}

/// Synthetic stand-in for a topical-intrusion benchmark. All splits share one
/// generator call, so they share the anomaly direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticBenchmark {
    pub dim: usize,
    pub train_inliers: usize,
    pub labeled_outliers: usize,
    pub contamination_pool: usize,
    pub test_inliers: usize,
    pub test_outliers: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub shift: f64,
    pub seed: u64,
}

impl Default for SyntheticBenchmark {
    fn default() -> Self {
        Self {
            dim: 32,
            train_inliers: 500,
            labeled_outliers: 10,
            contamination_pool: 100,
            test_inliers: 400,
            test_outliers: 100,
            min_tokens: 5,
            max_tokens: 20,
            shift: 5.0,
            seed: 0,
        }
    }
}

impl SyntheticBenchmark {
    pub fn generate(&self) -> Result<ExperimentData> {
        let spec = SyntheticSpec {
            dim: self.dim,
            inlier_count: self.train_inliers + self.test_inliers,
            outlier_count: self.labeled_outliers + self.contamination_pool + self.test_outliers,
            min_tokens: self.min_tokens,
            max_tokens: self.max_tokens,
            shift: self.shift,
            seed: self.seed,
        };
        let (mut inliers, mut outliers) = generate_synthetic(&spec)?;
        let test_in = inliers.split_off(self.train_inliers);
        let test_out = outliers.split_off(self.labeled_outliers + self.contamination_pool);
        let pool = outliers.split_off(self.labeled_outliers);
        let test = test_in
            .into_iter()
            .map(|d| LabeledExample::new(d, Label::Inlier))
            .chain(
                test_out
                    .into_iter()
                    .map(|d| LabeledExample::new(d, Label::Outlier)),
            )
            .collect();
        Ok(ExperimentData {
            train: TrainingSet::new(inliers, outliers)?,
            contamination_pool: pool,
            test,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    KFraction,
    OutlierCount,
    ContaminationRate,
    LossVariant,
    ArchitectureVariant,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::KFraction => "k_fraction",
            SweepAxis::OutlierCount => "outlier_count",
            SweepAxis::ContaminationRate => "contamination_rate",
            SweepAxis::LossVariant => "loss_variant",
            SweepAxis::ArchitectureVariant => "architecture_variant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Number(f64),
    Name(String),
}

impl std::fmt::Display for SweepValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepValue::Number(v) => write!(f, "{v}"),
            SweepValue::Name(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<SweepValue>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub base: RunConfig,
}

fn default_repeats() -> usize {
    5
}

/// One concrete change applied to the base run.
#[derive(Debug, Clone, Copy, PartialEq)]
enum CellChange {
    KFraction(f64),
    OutlierCount(usize),
    Contamination(f64),
    Loss(LossVariant),
    Architecture(ArchitectureVariant),
}

fn parse_value(axis: SweepAxis, value: &SweepValue) -> Result<CellChange> {
    let bad = |why: &str| {
        FateError::config(
            format!("values ({})", axis.name()),
            format!("`{value}` {why}"),
        )
    };
    match (axis, value) {
        (SweepAxis::KFraction, SweepValue::Number(v)) if *v > 0.0 && *v <= 1.0 => {
            Ok(CellChange::KFraction(*v))
        }
        (SweepAxis::KFraction, _) => Err(bad("must be a number in (0, 1]")),
        (SweepAxis::OutlierCount, SweepValue::Number(v)) if *v >= 1.0 && v.fract() == 0.0 => {
            Ok(CellChange::OutlierCount(*v as usize))
        }
        (SweepAxis::OutlierCount, _) => Err(bad("must be a positive integer")),
        (SweepAxis::ContaminationRate, SweepValue::Number(v)) if *v >= 0.0 && *v < 1.0 => {
            Ok(CellChange::Contamination(*v))
        }
        (SweepAxis::ContaminationRate, _) => Err(bad("must be a fraction in [0, 1)")),
        (SweepAxis::LossVariant, SweepValue::Name(n)) => match n.as_str() {
            "deviation" => Ok(CellChange::Loss(LossVariant::Deviation)),
            "bce" => Ok(CellChange::Loss(LossVariant::Bce)),
            "focal" => Ok(CellChange::Loss(LossVariant::Focal)),
            _ => Err(bad("is not one of deviation, bce, focal")),
        },
        (SweepAxis::LossVariant, _) => Err(bad("must be a loss variant name")),
        (SweepAxis::ArchitectureVariant, SweepValue::Name(n)) => match n.as_str() {
            "full" => Ok(CellChange::Architecture(ArchitectureVariant::Full)),
            "no_topk" => Ok(CellChange::Architecture(ArchitectureVariant::NoTopk)),
            "no_mhsa" => Ok(CellChange::Architecture(ArchitectureVariant::NoMhsa)),
            _ => Err(bad("is not one of full, no_topk, no_mhsa")),
        },
        (SweepAxis::ArchitectureVariant, _) => Err(bad("must be an architecture variant name")),
    }
}

/// SplitMix64 finaliser; mixes a seed with a stream index.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Number of anomalies injected into an inlier pool of `inliers` documents.
pub fn contamination_count(rate: f64, inliers: usize) -> usize {
    (rate * inliers as f64).round() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub axis: String,
    pub value: SweepValue,
    pub repeat: usize,
    pub seed: u64,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub train_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub value: SweepValue,
    pub runs: usize,
    pub auroc_mean: f64,
    pub auroc_std: f64,
    pub auprc_mean: f64,
    pub auprc_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: String,
    pub master_seed: u64,
    pub repeats: usize,
    pub records: Vec<CellRecord>,
    pub summary: Vec<CellSummary>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn run_cell(
    base: &RunConfig,
    change: CellChange,
    seed: u64,
    data: &ExperimentData,
) -> Result<std::result::Result<Evaluation, String>> {
    let mut cfg = base.clone();
    cfg.seed = seed;
    cfg.prior.seed = derive_seed(seed, 1);
    let mut train_set = data.train.clone();
    match change {
        CellChange::KFraction(k) => cfg.k_fraction = k,
        CellChange::Loss(v) => cfg.loss_variant = v,
        CellChange::Architecture(v) => cfg.architecture_variant = v,
        CellChange::OutlierCount(n) => {
            let available = train_set.outliers.len();
            if n > available {
                return Ok(Err(format!(
                    "requested {n} labeled outliers, only {available} available"
                )));
            }
            let mut rng = fresh_rng(derive_seed(seed, 2));
            let mut picks = index::sample(&mut rng, available, n).into_vec();
            picks.sort_unstable();
            train_set.outliers = picks
                .into_iter()
                .map(|i| data.train.outliers[i].clone())
                .collect();
        }
        CellChange::Contamination(rate) => {
            let c = contamination_count(rate, train_set.inliers.len());
            let available = data.contamination_pool.len();
            if c > available {
                return Ok(Err(format!(
                    "contamination {rate} needs {c} unlabeled anomalies, pool has {available}"
                )));
            }
            let mut rng = fresh_rng(derive_seed(seed, 3));
            let mut picks = index::sample(&mut rng, available, c).into_vec();
            picks.sort_unstable();
            train_set.inliers.extend(
                picks
                    .into_iter()
                    .map(|i| data.contamination_pool[i].clone()),
            );
        }
    }
    cfg.validate()?;
    let checkpoint = train(&train_set, &cfg, None)?;
    let scored = score_dataset(&data.test, &checkpoint)?;
    Ok(Ok(evaluate(&scored)?))
}

/// Trains and evaluates every `value × repeat` cell. Repeat `r` uses the
/// same seed for every value, so cells along the axis are paired.
pub fn run_sweep(spec: &SweepSpec, data: &ExperimentData) -> Result<SweepReport> {
    if spec.values.is_empty() {
        return Err(FateError::config(
            "values",
            "sweep needs at least one value",
        ));
    }
    if spec.repeats == 0 {
        return Err(FateError::config("repeats", "must be ≥ 1"));
    }
    spec.base.validate()?;
    let changes = spec
        .values
        .iter()
        .map(|v| parse_value(spec.axis, v))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, usize)> = (0..changes.len())
        .flat_map(|v| (0..spec.repeats).map(move |r| (v, r)))
        .collect();

    let records = cells
        .par_iter()
        .map(|&(v, r)| {
            let seed = derive_seed(spec.master_seed, r as u64);
            let started = Instant::now();
            let outcome = run_cell(&spec.base, changes[v], seed, data)?;
            let train_seconds = started.elapsed().as_secs_f64();
            let (auroc, auprc, skipped) = match outcome {
                Ok(e) => (Some(e.auroc), Some(e.auprc), None),
                Err(reason) => (None, None, Some(reason)),
            };
            Ok(CellRecord {
                axis: spec.axis.name().to_owned(),
                value: spec.values[v].clone(),
                repeat: r,
                seed,
                auroc,
                auprc,
                train_seconds,
                skipped,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let summary = spec
        .values
        .iter()
        .map(|value| {
            let done: Vec<&CellRecord> = records
                .iter()
                .filter(|r| &r.value == value && r.skipped.is_none())
                .collect();
            let (auroc_mean, auroc_std) =
                mean_std(&done.iter().filter_map(|r| r.auroc).collect::<Vec<_>>());
            let (auprc_mean, auprc_std) =
                mean_std(&done.iter().filter_map(|r| r.auprc).collect::<Vec<_>>());
            CellSummary {
                value: value.clone(),
                runs: done.len(),
                auroc_mean,
                auroc_std,
                auprc_mean,
                auprc_std,
            }
        })
        .collect();

    Ok(SweepReport {
        axis: spec.axis.name().to_owned(),
        master_seed: spec.master_seed,
        repeats: spec.repeats,
        records,
        summary,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl SweepReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Tab-separated, one line per cell.
    pub fn to_tsv(&self) -> String {
        let mut out =
            String::from("axis\tvalue\trepeat\tseed\tauroc\tauprc\ttrain_seconds\tskipped\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.axis,
                r.value,
                r.repeat,
                r.seed,
                opt(r.auroc),
                opt(r.auprc),
                r.train_seconds,
                r.skipped.as_deref().unwrap_or("")
            );
        }
        out
    }

    /// Plot-ready CSV: one row per axis value with mean and std of both metrics.
    pub fn series_csv(&self) -> String {
        let mut out = format!(
            "{},runs,auroc_mean,auroc_std,auprc_mean,auprc_std\n",
            self.axis
        );
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                s.value, s.runs, s.auroc_mean, s.auroc_std, s.auprc_mean, s.auprc_std
            );
        }
        out
    }

    /// Copy with wall-clock fields zeroed; everything else is a pure
    /// function of the spec and the data.
    pub fn without_timing(&self) -> Self {
        let mut copy = self.clone();
        copy.records.iter_mut().for_each(|r| r.train_seconds = 0.0);
        copy
    }

    pub fn summary_for(&self, value: &SweepValue) -> Option<&CellSummary> {
        self.summary.iter().find(|s| &s.value == value)
    }
}
