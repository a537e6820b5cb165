//! Training checkpoints.
//!
//! Binary layout, version 1, all integers and floats little-endian:
//!
//! ```text
//! magic          8 bytes  "FATECKPT"
//! version        u32      1
//! config_len     u64      length of the JSON-encoded run config that follows
//! config         bytes
//! d, r_a, m      u32 ×3
//! theta1         d·r_a f64, row-major
//! theta2         r_a·m f64, row-major
//! adam_step      u64
//! adam moments   first θ1, first θ2, second θ1, second θ2 (f64, row-major)
//! batch rng      seed [32 bytes], stream u64, word_pos u128
//! reference rng  seed [32 bytes], stream u64, word_pos u128
//! epoch          u64
//! history_len    u64, then (epoch u64, mean loss f64) pairs
//! ```
//!
//! Each checkpoint file is accompanied by a `.toml` sidecar holding the same
//! run config in human-readable form.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::AdamState;
use crate::codec::{read_file, write_file, ByteReader, ByteWriter};
use crate::config::RunConfig;
use crate::error::{FateError, Result};
use crate::model::AttentionParams;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FATECKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Exact position of a ChaCha stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: AttentionParams,
    pub config: RunConfig,
    pub adam: AdamState,
    pub batch_rng: RngState,
    pub reference_rng: RngState,
    /// Completed epochs.
    pub epoch: usize,
    /// `(epoch, mean batch loss)` for each completed epoch.
    pub loss_history: Vec<(usize, f64)>,
}

fn write_rng(w: &mut ByteWriter, s: &RngState) {
    w.bytes(&s.seed);
    w.u64(s.stream);
    w.u128(s.word_pos);
}

fn read_rng(r: &mut ByteReader<'_>, what: &str) -> Result<RngState> {
    let seed: [u8; 32] = r.take(32, what)?.try_into().unwrap();
    let stream = r.u64(what)?;
    let word_pos = r.u128(what)?;
    Ok(RngState {
        seed,
        stream,
        word_pos,
    })
}

fn read_matrix(
    r: &mut ByteReader<'_>,
    rows: usize,
    cols: usize,
    what: &str,
) -> Result<Array2<f64>> {
    let values = r.f64s(rows * cols, what)?;
    Ok(Array2::from_shape_vec((rows, cols), values).expect("length matches shape"))
}

/// Summary readable without decoding the parameter payload.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub config: RunConfig,
    pub dim: usize,
    pub width: usize,
    pub heads: usize,
}

impl Checkpoint {
    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        let config = serde_json::to_vec(&self.config).expect("run config serialises to JSON");
        w.u64(config.len() as u64);
        w.bytes(&config);
        w.u32(self.params.dim() as u32);
        w.u32(self.params.width() as u32);
        w.u32(self.params.heads() as u32);
        w.f64s(self.params.theta1.iter());
        w.f64s(self.params.theta2.iter());
        w.u64(self.adam.step);
        w.f64s(self.adam.first_theta1.iter());
        w.f64s(self.adam.first_theta2.iter());
        w.f64s(self.adam.second_theta1.iter());
        w.f64s(self.adam.second_theta2.iter());
        write_rng(&mut w, &self.batch_rng);
        write_rng(&mut w, &self.reference_rng);
        w.u64(self.epoch as u64);
        w.u64(self.loss_history.len() as u64);
        for &(epoch, loss) in &self.loss_history {
            w.u64(epoch as u64);
            w.f64(loss);
        }
        w.buf
    }

    fn read_header(r: &mut ByteReader<'_>) -> Result<CheckpointHeader> {
        let magic = r.take(8, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(r.error("not a checkpoint (bad magic)"));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(r.error(format!("unsupported checkpoint version {version}")));
        }
        let len = r.u64("config length")?;
        let len = r.len_field(len, 1, "config length")?;
        let config: RunConfig = serde_json::from_slice(r.take(len, "config")?)
            .map_err(|e| r.error(format!("config: {e}")))?;
        let dim = r.u32("d")? as usize;
        let width = r.u32("r_a")? as usize;
        let heads = r.u32("m")? as usize;
        if width != config.r_a || heads != config.m {
            return Err(r.error(format!(
                "parameter shape r_a={width}, m={heads} disagrees with stored config r_a={}, m={}",
                config.r_a, config.m
            )));
        }
        Ok(CheckpointHeader {
            version,
            config,
            dim,
            width,
            heads,
        })
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = ByteReader::new(bytes, path);
        let header = Self::read_header(&mut r)?;
        let (d, ra, m) = (header.dim, header.width, header.heads);
        let theta1 = read_matrix(&mut r, d, ra, "theta1")?;
        let theta2 = read_matrix(&mut r, ra, m, "theta2")?;
        let params = AttentionParams::new(theta1, theta2).map_err(|e| r.error(e.to_string()))?;
        let step = r.u64("adam step")?;
        let adam = AdamState {
            first_theta1: read_matrix(&mut r, d, ra, "adam first moment")?,
            first_theta2: read_matrix(&mut r, ra, m, "adam first moment")?,
            second_theta1: read_matrix(&mut r, d, ra, "adam second moment")?,
            second_theta2: read_matrix(&mut r, ra, m, "adam second moment")?,
            step,
        };
        let batch_rng = read_rng(&mut r, "batch rng")?;
        let reference_rng = read_rng(&mut r, "reference rng")?;
        let epoch = r.u64("epoch")? as usize;
        let count = r.u64("history length")?;
        let count = r.len_field(count, 16, "history length")?;
        let mut loss_history = Vec::with_capacity(count);
        for _ in 0..count {
            let e = r.u64("history epoch")? as usize;
            let l = r.f64("history loss")?;
            loss_history.push((e, l));
        }
        if r.remaining() != 0 {
            return Err(r.error(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self {
            params,
            config: header.config,
            adam,
            batch_rng,
            reference_rng,
            epoch,
            loss_history,
        })
    }

    /// Writes the binary checkpoint and its `.toml` config sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())?;
        self.config.save(&path.with_extension("toml"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }

    pub fn read_header_from(path: &Path) -> Result<CheckpointHeader> {
        let bytes = read_file(path)?;
        Self::read_header(&mut ByteReader::new(&bytes, path))
    }
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch-{epoch:04}.ckpt"))
}

/// Highest-epoch checkpoint in `dir`, if any.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| FateError::io(dir, e))?;
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in entries {
        let path = entry.map_err(|e| FateError::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(epoch) = name
            .strip_prefix("epoch-")
            .and_then(|n| n.strip_suffix(".ckpt"))
            .and_then(|n| n.parse::<usize>().ok())
        else {
            continue;
        };
        if best.as_ref().is_none_or(|(e, _)| epoch > *e) {
            best = Some((epoch, path));
        }
    }
    Ok(best.map(|(_, p)| p))
}

pub(crate) fn fresh_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
