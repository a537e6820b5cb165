//! Acceptance suite. Runs without the libtest harness and prints one
//! `PASS` or `FAIL` line per criterion. A name filter may be given as the
//! first non-flag argument.

mod common;

use std::time::Instant;

use common::{all_variants, auprc_thresholds, auroc_pairs, finite_difference_check, Instance};
use fate::config::RunConfig;
use fate::experiment::{
    evaluate, run_sweep, score_dataset, Evaluation, SweepAxis, SweepSpec, SweepValue,
    SyntheticBenchmark,
};
use fate::loss::{deviation_loss, sample_reference, LossVariant, PriorSpec};
use fate::metrics::{auprc, auroc, ScoredSet};
use fate::model::{
    mhsa_orthogonality_grad, mhsa_orthogonality_loss, ArchitectureVariant, AttentionMatrix, Label,
};
use fate::train::train;
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = (bool, String);

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt_list(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.4}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn gradient_correctness() -> Verdict {
    const PER_VARIANT: usize = 12;
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut skipped = 0;
    let mut labels_seen = [false; 2];
    for (loss, arch) in all_variants() {
        let mut accepted = 0;
        let mut seed = 0u64;
        while accepted < PER_VARIANT {
            seed += 1;
            let inst = Instance::random(seed * 31 + loss as u64 * 7 + arch as u64, loss, arch);
            match finite_difference_check(&inst, 1e-5) {
                Some(r) => {
                    worst = worst.max(r.max_rel_error);
                    accepted += 1;
                    for d in &inst.docs {
                        labels_seen[d.label.is_outlier() as usize] = true;
                    }
                }
                None => skipped += 1,
            }
        }
        checked += accepted;
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = checked >= 100 && worst < 1e-4 && secs < 60.0 && labels_seen == [true, true];
    (
        pass,
        format!("{checked} instances over 9 loss/architecture pairs, max rel error {worst:.2e} (< 1e-4), {skipped} kink draws redrawn, {secs:.1}s (< 60s)"),
    )
}

fn loss_algebra() -> Verdict {
    let alpha = 5.0;
    let cases = [
        (0.0, Label::Inlier, 0.0),
        (alpha, Label::Outlier, 0.0),
        (alpha + 2.5, Label::Outlier, 0.0),
        (0.0, Label::Outlier, alpha),
        (-1.75, Label::Inlier, 1.75),
        (3.2, Label::Inlier, 3.2),
    ];
    let worst = cases
        .iter()
        .map(|&(z, y, want)| (deviation_loss(z, y, alpha) - want).abs())
        .fold(0.0, f64::max);
    (
        worst <= 1e-12,
        format!("{} cases, max abs error {worst:.1e} (≤ 1e-12)", cases.len()),
    )
}

fn orthogonality() -> Verdict {
    let identity =
        mhsa_orthogonality_loss(&AttentionMatrix::from_raw(array![[1.0, 0.0], [0.0, 1.0]]));
    let halves =
        mhsa_orthogonality_loss(&AttentionMatrix::from_raw(array![[0.5, 0.5], [0.5, 0.5]]));
    let unit = mhsa_orthogonality_loss(&AttentionMatrix::from_raw(array![[0.6], [0.8]]));
    let fixtures_ok =
        identity.abs() <= 1e-12 && (halves - 1.0).abs() <= 1e-12 && unit.abs() <= 1e-12;

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(1..=4);
        let a = Array2::from_shape_simple_fn((n, m), || rng.random_range(0.0..1.0));
        let analytic = mhsa_orthogonality_grad(a.view());
        let f = |a: &Array2<f64>| mhsa_orthogonality_loss(&AttentionMatrix::from_raw(a.clone()));
        for idx in ndarray::indices(a.dim()) {
            let step = 1e-5;
            let mut plus = a.clone();
            plus[idx] += step;
            let mut minus = a.clone();
            minus[idx] -= step;
            let numeric = (f(&plus) - f(&minus)) / (2.0 * step);
            let g = analytic[idx];
            worst = worst.max((g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-7));
        }
    }
    (
        fixtures_ok && worst < 1e-6,
        format!("fixtures 0/1/0 -> {identity:.1e}/{halves:.15}/{unit:.1e}; dl2/dA max rel error {worst:.2e} (< 1e-6)"),
    )
}

fn metric_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_roc: f64 = 0.0;
    let mut worst_pr: f64 = 0.0;
    let mut done = 0;
    while done < 1000 {
        let n = rng.random_range(2..=200);
        // Coarse score grid so that ties are common.
        let levels = rng.random_range(2..=50);
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
            .collect();
        let labels: Vec<Label> = (0..n)
            .map(|_| {
                if rng.random_bool(0.3) {
                    Label::Outlier
                } else {
                    Label::Inlier
                }
            })
            .collect();
        let s = ScoredSet::from_scores(&scores, &labels);
        let pos = s.positives();
        if pos == 0 || pos == n {
            continue;
        }
        worst_roc = worst_roc.max((auroc(&s).unwrap() - auroc_pairs(&s)).abs());
        worst_pr = worst_pr.max((auprc(&s).unwrap() - auprc_thresholds(&s)).abs());
        done += 1;
    }
    (
        worst_roc <= 1e-12 && worst_pr <= 1e-12,
        format!("{done} instances ≤ 200 entries, max |ΔAUROC| {worst_roc:.1e}, max |ΔAUPRC| {worst_pr:.1e} (≤ 1e-12)"),
    )
}

fn prior_statistics() -> Verdict {
    let prior = PriorSpec::default();
    let (mut mus, mut sigmas) = (Vec::new(), Vec::new());
    for seed in 0..100 {
        let r = sample_reference(&prior, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        mus.push(r.mu_r);
        sigmas.push(r.sigma_r);
    }
    let (m, s) = (mean(&mus), mean(&sigmas));
    (
        m.abs() < 0.01 && (0.98..=1.02).contains(&s),
        format!("100 seeds, mean mu_R {m:.5} (|.| < 0.01), mean sigma_R {s:.5} (in [0.98, 1.02])"),
    )
}

/// Trains on the synthetic benchmark with `seed` for both data and run.
fn benchmark_run(seed: u64, shift: f64, cfg: &RunConfig) -> Evaluation {
    let data = SyntheticBenchmark {
        shift,
        seed,
        ..SyntheticBenchmark::default()
    }
    .generate()
    .unwrap();
    let mut cfg = cfg.clone();
    cfg.seed = seed;
    cfg.prior.seed = seed.wrapping_add(1000);
    let checkpoint = train(&data.train, &cfg, None).unwrap();
    evaluate(&score_dataset(&data.test, &checkpoint).unwrap()).unwrap()
}

fn separability(full: &mut Vec<f64>) -> Verdict {
    let started = Instant::now();
    let runs: Vec<Evaluation> = (0..5)
        .map(|s| benchmark_run(s, 5.0, &RunConfig::default()))
        .collect();
    let secs = started.elapsed().as_secs_f64();
    let roc: Vec<f64> = runs.iter().map(|e| e.auroc).collect();
    let pr: Vec<f64> = runs.iter().map(|e| e.auprc).collect();
    full.extend(&roc);
    let (mr, mp) = (mean(&roc), mean(&pr));
    (
        mr >= 0.95 && mp >= 0.90 && secs < 300.0,
        format!(
            "5 seeds, mean AUROC {mr:.4} (≥ 0.95) [{}], mean AUPRC {mp:.4} (≥ 0.90), {secs:.1}s (< 300s)",
            fmt_list(&roc)
        ),
    )
}

fn null_sanity() -> Verdict {
    let roc: Vec<f64> = (0..20)
        .map(|s| benchmark_run(s, 0.0, &RunConfig::default()).auroc)
        .collect();
    let (lo, hi) = roc
        .iter()
        .fold((1.0f64, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    (
        lo >= 0.40 && hi <= 0.60,
        format!(
            "20 seeds, every AUROC in [{lo:.4}, {hi:.4}] (within [0.40, 0.60]), mean {:.4}",
            mean(&roc)
        ),
    )
}

fn ablation_ordering(full: &[f64]) -> Verdict {
    let full_mean = mean(full);
    let mut pass = true;
    let mut parts = vec![format!("full {full_mean:.4}")];
    let variants: [(&str, LossVariant, ArchitectureVariant); 4] = [
        (
            "no_topk",
            LossVariant::Deviation,
            ArchitectureVariant::NoTopk,
        ),
        (
            "no_mhsa",
            LossVariant::Deviation,
            ArchitectureVariant::NoMhsa,
        ),
        ("bce", LossVariant::Bce, ArchitectureVariant::Full),
        ("focal", LossVariant::Focal, ArchitectureVariant::Full),
    ];
    for (name, loss, arch) in variants {
        let cfg = RunConfig {
            loss_variant: loss,
            architecture_variant: arch,
            ..RunConfig::default()
        };
        let roc: Vec<f64> = (0..5).map(|s| benchmark_run(s, 5.0, &cfg).auroc).collect();
        let m = mean(&roc);
        pass &= full_mean >= m - 0.02;
        parts.push(format!("{name} {m:.4}"));
    }
    (
        pass,
        format!(
            "5 seeds, mean AUROC {} (full ≥ each − 0.02)",
            parts.join(", ")
        ),
    )
}

fn sweep(axis: SweepAxis, values: &[f64]) -> fate::experiment::SweepReport {
    let data = SyntheticBenchmark::default().generate().unwrap();
    let spec = SweepSpec {
        axis,
        values: values.iter().map(|&v| SweepValue::Number(v)).collect(),
        repeats: 5,
        master_seed: 2024,
        base: RunConfig::default(),
    };
    run_sweep(&spec, &data).unwrap()
}

fn contamination_trend() -> Verdict {
    let report = sweep(SweepAxis::ContaminationRate, &[0.0, 0.05, 0.10, 0.15]);
    let means: Vec<f64> = report.summary.iter().map(|s| s.auroc_mean).collect();
    let stds: Vec<f64> = report.summary.iter().map(|s| s.auroc_std).collect();
    let pooled = (stds.iter().map(|s| s * s).sum::<f64>() / stds.len() as f64).sqrt();
    let drop = means[0] - means[3];
    let monotone = means.windows(2).all(|w| w[1] <= w[0] + pooled);
    let all_ran = report.records.iter().all(|r| r.skipped.is_none());
    (
        all_ran && drop <= 0.15 && monotone,
        format!(
            "AUROC at 0/5/10/15% = {} (std {}), drop {drop:.4} (≤ 0.15), pooled std {pooled:.4}, non-increasing within pooled std: {monotone}",
            fmt_list(&means),
            fmt_list(&stds)
        ),
    )
}

fn topk_sensitivity() -> Verdict {
    let ks = [0.01, 0.05, 0.10, 0.15, 0.25];
    let report = sweep(SweepAxis::KFraction, &ks);
    let means: Vec<f64> = report.summary.iter().map(|s| s.auroc_mean).collect();
    let best = means.iter().cloned().fold(f64::MIN, f64::max);
    let at_default = means[2];
    (
        best - at_default <= 0.03,
        format!(
            "AUROC over k_fraction 0.01/0.05/0.10/0.15/0.25 = {}, best {best:.4}, gap at 0.10 {:.4} (≤ 0.03)",
            fmt_list(&means),
            best - at_default
        ),
    )
}

fn reproducibility() -> Verdict {
    let data = SyntheticBenchmark::default().generate().unwrap();
    let cfg = RunConfig {
        epochs: 3,
        seed: 9,
        ..RunConfig::default()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let finals: Vec<_> = dirs
        .iter()
        .map(|d| train(&data.train, &cfg, Some(d.path())).unwrap())
        .collect();
    let same_final = finals[0].to_bytes() == finals[1].to_bytes();
    let mut same_files = true;
    for epoch in 0..=3 {
        let name = format!("epoch-{epoch:04}.ckpt");
        let a = std::fs::read(dirs[0].path().join(&name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(&name)).unwrap();
        same_files &= a == b;
    }

    let spec = SweepSpec {
        axis: SweepAxis::KFraction,
        values: vec![SweepValue::Number(0.05), SweepValue::Number(0.10)],
        repeats: 2,
        master_seed: 1,
        base: RunConfig {
            epochs: 2,
            ..RunConfig::default()
        },
    };
    let reports: Vec<_> = (0..2)
        .map(|_| run_sweep(&spec, &data).unwrap().without_timing())
        .collect();
    let same_report = reports[0].to_json() == reports[1].to_json()
        && reports[0].to_tsv() == reports[1].to_tsv()
        && reports[0].series_csv() == reports[1].series_csv();
    (
        same_final && same_files && same_report,
        format!("checkpoints identical: {}, per-epoch files identical: {same_files}, sweep reports identical (timing excluded): {same_report}", same_final),
    )
}

fn main() {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let wanted = |name: &str| filter.as_deref().is_none_or(|f| name.contains(f));
    let mut full_roc = Vec::new();
    let mut failures = 0;
    let mut report = |name: &str, run: &mut dyn FnMut() -> Verdict| {
        if !wanted(name) {
            return;
        }
        let started = Instant::now();
        let (pass, detail) = run();
        println!(
            "{} {name}: {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64()
        );
        if !pass {
            failures += 1;
        }
    };
    report("gradient_correctness", &mut gradient_correctness);
    report("loss_algebra", &mut loss_algebra);
    report("orthogonality", &mut orthogonality);
    report("metric_oracles", &mut metric_oracles);
    report("prior_statistics", &mut prior_statistics);
    report("separability", &mut || separability(&mut full_roc));
    report("null_sanity", &mut null_sanity);
    report("ablation_ordering", &mut || {
        if full_roc.is_empty() {
            separability(&mut full_roc);
        }
        ablation_ordering(&full_roc)
    });
    report("contamination_trend", &mut contamination_trend);
    report("topk_sensitivity", &mut topk_sensitivity);
    report("reproducibility", &mut reproducibility);
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
