//! Dataset manifests, few-shot split construction and the synthetic testbed.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archive::{read_archive, read_archive_index};
use crate::checkpoint::fresh_rng;
use crate::error::{FateError, Result};
use crate::model::{EmbeddingSequence, Label, LabeledExample};
use crate::train::TrainingSet;

/// An archive on disk and the documents selected from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveRef {
    pub path: PathBuf,
    pub class_label: String,
    pub doc_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestMetadata {
    pub source: String,
    pub inlier_class: String,
    pub outlier_classes: Vec<String>,
    pub seed: u64,
}

/// The normal pool plus the labeled anomalies, by doc id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub inliers: ArchiveRef,
    pub outliers: Vec<ArchiveRef>,
    pub metadata: ManifestMetadata,
}

/// Documents of one manifest, loaded into memory.
#[derive(Debug, Clone)]
pub struct ResolvedDataset {
    pub inliers: Vec<EmbeddingSequence>,
    pub outliers: Vec<EmbeddingSequence>,
}

impl ResolvedDataset {
    pub fn training_set(self) -> Result<TrainingSet> {
        TrainingSet::new(self.inliers, self.outliers)
    }

    /// Every document with its ground-truth label, inliers first.
    pub fn labeled(&self) -> Vec<LabeledExample> {
        self.inliers
            .iter()
            .map(|d| LabeledExample::new(d.clone(), Label::Inlier))
            .chain(
                self.outliers
                    .iter()
                    .map(|d| LabeledExample::new(d.clone(), Label::Outlier)),
            )
            .collect()
    }
}

/// An archive path with the class its documents belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveSource {
    pub path: PathBuf,
    pub class_label: String,
}

impl ArchiveSource {
    pub fn new(path: impl Into<PathBuf>, class_label: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            class_label: class_label.into(),
        }
    }

    /// Class label defaults to the file stem.
    pub fn from_path(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        let class_label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self { path, class_label }
    }
}

/// Per-class sample sizes: `count` split evenly, remainder to the first classes.
pub fn class_shares(count: usize, classes: usize) -> Vec<usize> {
    let base = count / classes;
    let extra = count % classes;
    (0..classes)
        .map(|c| base + usize::from(c < extra))
        .collect()
}

/// All inlier documents plus `outlier_count` outliers spread as evenly as
/// possible over the outlier classes, sampled without replacement within
/// each class. `None` takes every outlier.
pub fn build_split(
    inlier: &ArchiveSource,
    outliers: &[ArchiveSource],
    outlier_count: Option<usize>,
    seed: u64,
    source: &str,
) -> Result<DatasetManifest> {
    if outliers.is_empty() {
        return Err(FateError::config(
            "outliers",
            "at least one outlier archive is required",
        ));
    }
    let (in_header, in_index) = read_archive_index(&inlier.path)?;
    let inlier_ids: Vec<String> = in_index.into_iter().map(|e| e.doc_id).collect();
    let mut seen: HashSet<String> = inlier_ids.iter().cloned().collect();

    let shares = match outlier_count {
        Some(count) => {
            if count < outliers.len() {
                return Err(FateError::config(
                    "outlier_count",
                    format!(
                        "{count} is fewer than the {} outlier classes",
                        outliers.len()
                    ),
                ));
            }
            Some(class_shares(count, outliers.len()))
        }
        None => None,
    };

    let mut rng = fresh_rng(seed);
    let mut refs = Vec::with_capacity(outliers.len());
    for (c, src) in outliers.iter().enumerate() {
        let (header, idx) = read_archive_index(&src.path)?;
        if header.dim != in_header.dim {
            return Err(FateError::shape(
                format!("outlier archive {}", src.path.display()),
                format!("d = {}", in_header.dim),
                format!("d = {}", header.dim),
            ));
        }
        let ids: Vec<String> = idx.into_iter().map(|e| e.doc_id).collect();
        let chosen: Vec<String> = match &shares {
            Some(shares) => {
                let want = shares[c];
                if want > ids.len() {
                    return Err(FateError::Data(format!(
                        "class `{}` has {} documents but its share is {want} (shortfall {})",
                        src.class_label,
                        ids.len(),
                        want - ids.len()
                    )));
                }
                let mut picks = index::sample(&mut rng, ids.len(), want).into_vec();
                picks.sort_unstable();
                picks.into_iter().map(|i| ids[i].clone()).collect()
            }
            None => ids,
        };
        for id in &chosen {
            if !seen.insert(id.clone()) {
                return Err(FateError::Data(format!(
                    "doc_id `{id}` appears in more than one pool"
                )));
            }
        }
        refs.push(ArchiveRef {
            path: src.path.clone(),
            class_label: src.class_label.clone(),
            doc_ids: chosen,
        });
    }

    Ok(DatasetManifest {
        inliers: ArchiveRef {
            path: inlier.path.clone(),
            class_label: inlier.class_label.clone(),
            doc_ids: inlier_ids,
        },
        metadata: ManifestMetadata {
            source: source.to_owned(),
            inlier_class: inlier.class_label.clone(),
            outlier_classes: outliers.iter().map(|o| o.class_label.clone()).collect(),
            seed,
        },
        outliers: refs,
    })
}

fn select(path: &Path, ids: &[String]) -> Result<Vec<EmbeddingSequence>> {
    let docs = read_archive(path)?;
    let mut by_id: HashMap<String, EmbeddingSequence> = docs
        .into_iter()
        .map(|d| (d.doc_id().to_owned(), d))
        .collect();
    ids.iter()
        .map(|id| {
            by_id.remove(id).ok_or_else(|| {
                FateError::Data(format!("doc_id `{id}` not found in {}", path.display()))
            })
        })
        .collect()
}

impl DatasetManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| FateError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FateError::io(path, e))?;
        let manifest: Self =
            serde_json::from_str(&text).map_err(|e| FateError::format(path, e.to_string()))?;
        manifest
            .validate_disjoint()
            .map_err(|e| FateError::format(path, e.to_string()))?;
        Ok(manifest)
    }

    fn validate_disjoint(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for id in self
            .inliers
            .doc_ids
            .iter()
            .chain(self.outliers.iter().flat_map(|o| o.doc_ids.iter()))
        {
            if !seen.insert(id) {
                return Err(FateError::Data(format!("doc_id `{id}` listed twice")));
            }
        }
        Ok(())
    }

    /// Loads the listed documents. Relative archive paths resolve against `base`.
    pub fn resolve(&self, base: &Path) -> Result<ResolvedDataset> {
        let full = |p: &Path| {
            if p.is_absolute() {
                p.to_owned()
            } else {
                base.join(p)
            }
        };
        let inliers = select(&full(&self.inliers.path), &self.inliers.doc_ids)?;
        let mut outliers = Vec::new();
        for o in &self.outliers {
            outliers.extend(select(&full(&o.path), &o.doc_ids)?);
        }
        let resolved = ResolvedDataset { inliers, outliers };
        let d = resolved
            .inliers
            .iter()
            .chain(resolved.outliers.iter())
            .map(|d| d.dim())
            .collect::<HashSet<_>>();
        if d.len() > 1 {
            return Err(FateError::Data(format!("documents disagree on d: {d:?}")));
        }
        Ok(resolved)
    }

    /// Loads a manifest file and resolves it relative to its own directory.
    pub fn load_resolved(path: &Path) -> Result<(Self, ResolvedDataset)> {
        let manifest = Self::load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let data = manifest.resolve(base)?;
        Ok((manifest, data))
    }

    /// SHA-256 over the resolved doc id lists, hex-encoded.
    pub fn doc_id_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(b"inliers\n");
        for id in &self.inliers.doc_ids {
            hasher.update(id.as_bytes());
            hasher.update(b"\n");
        }
        for o in &self.outliers {
            hasher.update(format!("outliers:{}\n", o.class_label).as_bytes());
            for id in &o.doc_ids {
                hasher.update(id.as_bytes());
                hasher.update(b"\n");
            }
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Parameters of the Gaussian testbed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub inlier_count: usize,
    pub outlier_count: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Norm of the outlier mean shift.
    pub shift: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(FateError::config("dim", "must be ≥ 1"));
        }
        if self.inlier_count == 0 || self.outlier_count == 0 {
            return Err(FateError::config(
                "inlier_count/outlier_count",
                "must be ≥ 1",
            ));
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return Err(FateError::config(
                "min_tokens/max_tokens",
                format!(
                    "need 1 ≤ min ≤ max, got {}..={}",
                    self.min_tokens, self.max_tokens
                ),
            ));
        }
        if !(self.shift >= 0.0 && self.shift.is_finite()) {
            return Err(FateError::config("shift", "must be finite and ≥ 0"));
        }
        Ok(())
    }
}

fn gaussian_doc<R: Rng + ?Sized>(
    id: String,
    dim: usize,
    tokens: usize,
    mean: &[f64],
    rng: &mut R,
) -> EmbeddingSequence {
    let mut m = Array2::zeros((dim, tokens));
    for t in 0..tokens {
        for i in 0..dim {
            let z: f64 = rng.sample(StandardNormal);
            m[[i, t]] = mean[i] + z;
        }
    }
    EmbeddingSequence::new(id, m).expect("finite synthetic embeddings")
}

/// Inlier tokens ~ N(0, I); outlier tokens ~ N(shift·u, I) for a seeded unit
/// direction `u`. Returns `(inliers, outliers)`.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
) -> Result<(Vec<EmbeddingSequence>, Vec<EmbeddingSequence>)> {
    spec.validate()?;
    let mut rng = fresh_rng(spec.seed);
    let mut direction: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    direction.iter_mut().for_each(|v| *v *= spec.shift / norm);
    let zero = vec![0.0; spec.dim];

    let mut draw = |prefix: &str, count: usize, mean: &[f64]| -> Vec<EmbeddingSequence> {
        (0..count)
            .map(|i| {
                let tokens = rng.random_range(spec.min_tokens..=spec.max_tokens);
                gaussian_doc(format!("{prefix}-{i:06}"), spec.dim, tokens, mean, &mut rng)
            })
            .collect()
    };
    let inliers = draw("inlier", spec.inlier_count, &zero);
    let outliers = draw("outlier", spec.outlier_count, &direction);
    Ok((inliers, outliers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archive::write_archive;

    fn spec(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            dim: 4,
            inlier_count: 20,
            outlier_count: 12,
            min_tokens: 2,
            max_tokens: 5,
            shift: 5.0,
            seed,
        }
    }

    #[test]
    fn shares_split_evenly() {
        assert_eq!(class_shares(10, 5), vec![2; 5]);
        assert_eq!(class_shares(5, 5), vec![1; 5]);
        assert_eq!(class_shares(7, 3), vec![3, 2, 2]);
    }

    #[test]
    fn synthetic_is_deterministic_and_shaped() {
        let (a_in, a_out) = generate_synthetic(&spec(1)).unwrap();
        let (b_in, b_out) = generate_synthetic(&spec(1)).unwrap();
        assert_eq!(a_in, b_in);
        assert_eq!(a_out, b_out);
        assert_eq!((a_in.len(), a_out.len()), (20, 12));
        assert!(a_in
            .iter()
            .all(|d| d.dim() == 4 && (2..=5).contains(&d.len())));
        let (c_in, _) = generate_synthetic(&spec(2)).unwrap();
        assert_ne!(a_in, c_in);
    }

    #[test]
    fn outlier_mean_is_shifted() {
        let s = SyntheticSpec {
            inlier_count: 400,
            outlier_count: 400,
            ..spec(3)
        };
        let (inl, out) = generate_synthetic(&s).unwrap();
        let mean = |docs: &[EmbeddingSequence]| {
            let mut acc = vec![0.0; 4];
            let mut n = 0.0;
            for d in docs {
                for t in d.tokens().columns() {
                    for (a, v) in acc.iter_mut().zip(t.iter()) {
                        *a += v;
                    }
                    n += 1.0;
                }
            }
            acc.into_iter().map(|a| a / n).collect::<Vec<_>>()
        };
        let norm = |v: Vec<f64>| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm(mean(&inl)) < 0.2);
        assert!((norm(mean(&out)) - 5.0).abs() < 0.2);
    }

    #[test]
    fn split_and_resolve() {
        let dir = tempfile::tempdir().unwrap();
        let (inl, out) = generate_synthetic(&spec(4)).unwrap();
        write_archive(&dir.path().join("normal.emb"), &inl).unwrap();
        let mut sources = Vec::new();
        for (c, chunk) in out.chunks(3).enumerate() {
            let p = dir.path().join(format!("class{c}.emb"));
            write_archive(&p, chunk).unwrap();
            sources.push(ArchiveSource::from_path(p));
        }
        let inlier = ArchiveSource::from_path(dir.path().join("normal.emb"));
        let m = build_split(&inlier, &sources, Some(6), 9, "synthetic").unwrap();
        assert_eq!(
            m.outliers
                .iter()
                .map(|o| o.doc_ids.len())
                .collect::<Vec<_>>(),
            vec![2, 2, 1, 1]
        );
        assert_eq!(
            m.metadata.outlier_classes,
            vec!["class0", "class1", "class2", "class3"]
        );
        assert_eq!(
            m,
            build_split(&inlier, &sources, Some(6), 9, "synthetic").unwrap()
        );
        assert_eq!(
            m.doc_id_hash(),
            build_split(&inlier, &sources, Some(6), 9, "synthetic")
                .unwrap()
                .doc_id_hash()
        );

        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        let (loaded, data) = DatasetManifest::load_resolved(&path).unwrap();
        assert_eq!(loaded, m);
        assert_eq!(data.inliers.len(), 20);
        assert_eq!(data.outliers.len(), 6);

        let all = build_split(&inlier, &sources, None, 0, "synthetic").unwrap();
        assert_eq!(
            all.outliers.iter().map(|o| o.doc_ids.len()).sum::<usize>(),
            12
        );

        let err = build_split(&inlier, &sources, Some(3), 0, "s").unwrap_err();
        assert!(err.to_string().contains("outlier_count"));
        let err = build_split(&inlier, &sources, Some(16), 0, "s").unwrap_err();
        assert!(err.to_string().contains("shortfall"), "{err}");
    }

    #[test]
    fn overlapping_pools_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (inl, _) = generate_synthetic(&spec(5)).unwrap();
        let p = dir.path().join("n.emb");
        write_archive(&p, &inl).unwrap();
        let src = ArchiveSource::from_path(&p);
        assert!(build_split(&src, std::slice::from_ref(&src), Some(2), 0, "s").is_err());
    }
}
