//! Stop a run halfway, resume it from the saved checkpoint, and confirm the
//! result matches an uninterrupted run byte for byte.

use fate::checkpoint::{latest_checkpoint, Checkpoint};
use fate::config::RunConfig;
use fate::experiment::SyntheticBenchmark;
use fate::train::{resume, train};

fn main() -> fate::Result<()> {
    let data = SyntheticBenchmark {
        dim: 8,
        train_inliers: 80,
        ..Default::default()
    }
    .generate()?;
    let cfg = RunConfig {
        r_a: 16,
        epochs: 6,
        ..RunConfig::default()
    };
    let dir = std::env::temp_dir().join("fate-resume-example");
    let _ = std::fs::remove_dir_all(&dir);

    let full = train(&data.train, &cfg, None)?;
    train(
        &data.train,
        &RunConfig {
            epochs: 3,
            ..cfg.clone()
        },
        Some(&dir),
    )?;
    let latest = latest_checkpoint(&dir)?.expect("checkpoint written");
    println!("resuming from {}", latest.display());
    let resumed = resume(&data.train, Checkpoint::load(&latest)?, 6, Some(&dir))?;
    println!(
        "epoch {} loss history {:?}",
        resumed.epoch, resumed.loss_history
    );
    println!(
        "identical to uninterrupted run: {}",
        resumed.to_bytes() == full.to_bytes()
    );
    Ok(())
}
