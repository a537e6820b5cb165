//! Write embedding archives, read back just the index, and assemble a
//! few-shot training manifest from two outlier classes.

use fate::archive::{read_archive, read_archive_index, write_archive};
use fate::dataset::{
    build_split, generate_synthetic, ArchiveSource, DatasetManifest, SyntheticSpec,
};

fn main() -> fate::Result<()> {
    let dir = std::env::temp_dir().join("fate-archive-example");
    std::fs::create_dir_all(&dir).map_err(|e| fate::FateError::Io {
        path: dir.clone(),
        source: e,
    })?;

    let spec = SyntheticSpec {
        dim: 8,
        inlier_count: 40,
        outlier_count: 12,
        min_tokens: 3,
        max_tokens: 10,
        shift: 4.0,
        seed: 1,
    };
    let (inliers, outliers) = generate_synthetic(&spec)?;
    write_archive(&dir.join("normal.emb"), &inliers)?;
    write_archive(&dir.join("sports.emb"), &outliers[..6])?;
    write_archive(&dir.join("politics.emb"), &outliers[6..])?;

    let (header, index) = read_archive_index(&dir.join("sports.emb"))?;
    println!(
        "sports.emb: d={} documents={} float_width={}",
        header.dim, header.doc_count, header.float_width
    );
    for e in &index {
        println!("  {} tokens={} offset={}", e.doc_id, e.tokens, e.offset);
    }
    assert_eq!(
        read_archive(&dir.join("sports.emb"))?,
        outliers[..6].to_vec()
    );

    let manifest = build_split(
        &ArchiveSource::from_path(dir.join("normal.emb")),
        &[
            ArchiveSource::from_path(dir.join("sports.emb")),
            ArchiveSource::from_path(dir.join("politics.emb")),
        ],
        Some(4),
        11,
        "synthetic",
    )?;
    for o in &manifest.outliers {
        println!("{}: {:?}", o.class_label, o.doc_ids);
    }
    let path = dir.join("train.json");
    manifest.save(&path)?;
    let (reloaded, data) = DatasetManifest::load_resolved(&path)?;
    println!("doc-id hash {}", reloaded.doc_id_hash());
    println!(
        "resolved {} inliers and {} outliers",
        data.inliers.len(),
        data.outliers.len()
    );
    Ok(())
}
