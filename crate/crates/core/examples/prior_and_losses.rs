//! Reference statistics from the Gaussian prior and the three first-term losses
//! as a function of the document score.

use fate::loss::{
    ablation_loss, deviation_loss, sample_reference, z_deviation, LossConfig, LossVariant,
    PriorSpec,
};
use fate::model::Label;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fate::Result<()> {
    let prior = PriorSpec::default();
    let reference = sample_reference(&prior, &mut ChaCha8Rng::seed_from_u64(prior.seed))?;
    println!(
        "mu_R {:.5}  sigma_R {:.5}  ({} draws)",
        reference.mu_r, reference.sigma_r, reference.draw_count
    );

    let alpha = 5.0;
    let bce = LossConfig {
        variant: LossVariant::Bce,
        ..LossConfig::default()
    };
    let focal = LossConfig {
        variant: LossVariant::Focal,
        ..LossConfig::default()
    };
    println!(
        "{:>6} {:>8} | {:>9} {:>9} | {:>9} {:>9} | {:>9} {:>9}",
        "psi", "z", "dev y=0", "dev y=1", "bce y=0", "bce y=1", "foc y=0", "foc y=1"
    );
    for psi in [-2.0, 0.0, 1.0, 3.0, 6.0] {
        let z = z_deviation(psi, &reference);
        println!(
            "{psi:>6.1} {z:>8.3} | {:>9.4} {:>9.4} | {:>9.4} {:>9.4} | {:>9.4} {:>9.4}",
            deviation_loss(z, Label::Inlier, alpha),
            deviation_loss(z, Label::Outlier, alpha),
            ablation_loss(psi, Label::Inlier, &bce)?,
            ablation_loss(psi, Label::Outlier, &bce)?,
            ablation_loss(psi, Label::Inlier, &focal)?,
            ablation_loss(psi, Label::Outlier, &focal)?,
        );
    }
    Ok(())
}
