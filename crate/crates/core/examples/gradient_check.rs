//! Compare the analytic gradient of the batch objective with central
//! differences on a tiny random problem.

use fate::config::RunConfig;
use fate::grad::{batch_loss, loss_and_gradients};
use fate::loss::{sample_reference, PriorSpec};
use fate::model::{AttentionParams, EmbeddingSequence, Label, LabeledExample};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> fate::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (d, r_a, m) = (4, 3, 2);
    let docs: Vec<LabeledExample> = (0..4)
        .map(|i| {
            let h = Array2::from_shape_simple_fn((d, 5), || rng.random_range(-2.0..2.0));
            let label = if i < 2 { Label::Inlier } else { Label::Outlier };
            LabeledExample::new(EmbeddingSequence::new(format!("d{i}"), h).unwrap(), label)
        })
        .collect();
    let batch: Vec<_> = docs.iter().map(|d| d.as_entry()).collect();
    let params = AttentionParams::init_uniform(d, r_a, m, &mut rng);
    let cfg = RunConfig {
        r_a,
        m,
        k_fraction: 0.25,
        ..RunConfig::default()
    };
    let reference = sample_reference(&PriorSpec::default(), &mut rng)?;

    let analytic = loss_and_gradients(&batch, &params, Some(&reference), &cfg)?;
    println!(
        "loss {:.6} = deviation {:.6} + orthogonality {:.6}",
        analytic.total, analytic.deviation, analytic.orthogonality
    );
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for idx in ndarray::indices(params.theta1.dim()) {
        let mut plus = params.clone();
        plus.theta1[idx] += step;
        let mut minus = params.clone();
        minus.theta1[idx] -= step;
        let numeric = (batch_loss(&batch, &plus, Some(&reference), &cfg)?
            - batch_loss(&batch, &minus, Some(&reference), &cfg)?)
            / (2.0 * step);
        let a = analytic.grads.d_theta1[idx];
        println!("dθ1{:?}: analytic {a:+.8}  numeric {numeric:+.8}", idx);
        worst = worst.max((a - numeric).abs());
    }
    println!("max abs difference over θ1: {worst:.2e}");
    Ok(())
}
