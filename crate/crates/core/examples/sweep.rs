//! A reduced top-K sweep on the synthetic benchmark, printed as plot-ready CSV.

use fate::config::RunConfig;
use fate::experiment::{run_sweep, SweepAxis, SweepSpec, SweepValue, SyntheticBenchmark};

fn main() -> fate::Result<()> {
    let data = SyntheticBenchmark {
        dim: 16,
        train_inliers: 120,
        test_inliers: 100,
        test_outliers: 25,
        ..Default::default()
    }
    .generate()?;
    let spec = SweepSpec {
        axis: SweepAxis::KFraction,
        values: [0.01, 0.1, 0.25, 1.0]
            .into_iter()
            .map(SweepValue::Number)
            .collect(),
        repeats: 3,
        master_seed: 42,
        base: RunConfig {
            r_a: 32,
            epochs: 5,
            ..RunConfig::default()
        },
    };
    let report = run_sweep(&spec, &data)?;
    print!("{}", report.series_csv());
    Ok(())
}
