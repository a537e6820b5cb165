//! AUROC and AUPRC on a small ranking with tied scores.

use fate::metrics::{auprc, auroc, ScoredSet};
use fate::model::Label::{Inlier as N, Outlier as P};

fn main() -> fate::Result<()> {
    let scores = [0.91, 0.75, 0.75, 0.60, 0.42, 0.42, 0.30, 0.12];
    let labels = [P, N, P, N, P, N, N, N];
    let set = ScoredSet::from_scores(&scores, &labels);
    for e in set.ranked() {
        println!("{:<6} {:.2} {:?}", e.doc_id, e.score, e.label);
    }
    println!("AUROC {:.6}", auroc(&set)?);
    println!("AUPRC {:.6}", auprc(&set)?);
    Ok(())
}
