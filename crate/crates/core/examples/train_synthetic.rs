//! Train on a synthetic few-shot benchmark and evaluate on its held-out split.
//!
//! `cargo run --release --example train_synthetic -- [shift] [seed]`

use fate::config::RunConfig;
use fate::experiment::{evaluate, score_dataset, SyntheticBenchmark};
use fate::train::train;

fn main() -> fate::Result<()> {
    let mut args = std::env::args().skip(1);
    let shift: f64 = args
        .next()
        .map(|s| s.parse().expect("shift"))
        .unwrap_or(5.0);
    let seed: u64 = args.next().map(|s| s.parse().expect("seed")).unwrap_or(0);

    let data = SyntheticBenchmark {
        shift,
        seed,
        ..SyntheticBenchmark::default()
    }
    .generate()?;
    println!(
        "train: {} inliers, {} labeled outliers; test: {} documents",
        data.train.inliers.len(),
        data.train.outliers.len(),
        data.test.len()
    );
    let cfg = RunConfig {
        seed,
        ..RunConfig::default()
    };
    let checkpoint = train(&data.train, &cfg, None)?;
    for (epoch, loss) in checkpoint.loss_history.iter().step_by(5) {
        println!("epoch {epoch:>2}  loss {loss:.5}");
    }
    let scored = score_dataset(&data.test, &checkpoint)?;
    let e = evaluate(&scored)?;
    println!("AUROC {:.4}  AUPRC {:.4}", e.auroc, e.auprc);
    println!("top five:");
    for entry in scored.ranked().into_iter().take(5) {
        println!("  {}  {:.4}  {:?}", entry.doc_id, entry.score, entry.label);
    }
    Ok(())
}
