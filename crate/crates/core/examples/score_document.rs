//! Score one document with freshly initialised attention parameters and show
//! which instance scores the top-K layer picked.

use fate::model::{document_score, mhsa_orthogonality_loss, AttentionParams, EmbeddingSequence};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> fate::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (d, n) = (6, 9);
    let tokens = Array2::from_shape_simple_fn((d, n), || rng.random_range(-1.0..1.0));
    let doc = EmbeddingSequence::new("example", tokens)?;
    let params = AttentionParams::init_uniform(d, 16, 3, &mut rng);

    let out = document_score(&doc, &params, 0.10)?;
    println!("psi_K = {:.6}", out.psi_k);
    println!(
        "attention is {}x{} (tokens x heads)",
        out.attention.tokens(),
        out.attention.heads()
    );
    for j in 0..out.attention.heads() {
        let col: Vec<String> = out
            .attention
            .view()
            .column(j)
            .iter()
            .map(|a| format!("{a:.3}"))
            .collect();
        println!("  head {j}: {}", col.join(" "));
    }
    println!(
        "orthogonality penalty = {:.6}",
        mhsa_orthogonality_loss(&out.attention)
    );
    for &idx in &out.selected {
        println!(
            "selected instance {idx} (dim {}, head {}) = {:.6}",
            idx % d,
            idx / d,
            out.instances.as_slice()[idx]
        );
    }
    Ok(())
}
