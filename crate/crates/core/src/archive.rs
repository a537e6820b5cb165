//! Embedding archive: a binary container of per-document token embeddings.
//!
//! Layout, version 1, little-endian throughout:
//!
//! ```text
//! header    magic "FATEEMB\0" (8 bytes) | version u32 | d u32 | doc_count u64 | float_width u32 (= 64)
//! records   doc_count times:
//!             id_len u32 | doc_id UTF-8 bytes | N u32 | d·N f64, row-major (row i = dimension i)
//! index     doc_count × u64, absolute byte offset of each record
//! ```
//!
//! The index occupies the last `8 · doc_count` bytes of the file.

use std::collections::HashSet;
use std::path::Path;

use ndarray::Array2;

use crate::codec::{read_file, write_file, ByteReader, ByteWriter};
use crate::error::{FateError, Result};
use crate::model::EmbeddingSequence;

pub const ARCHIVE_MAGIC: &[u8; 8] = b"FATEEMB\0";
pub const ARCHIVE_VERSION: u32 = 1;
pub const FLOAT_WIDTH: u32 = 64;
const HEADER_LEN: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchiveHeader {
    pub version: u32,
    pub dim: usize,
    pub doc_count: usize,
    pub float_width: u32,
}

/// One index entry, readable without touching the matrix payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub doc_id: String,
    pub tokens: usize,
    pub offset: u64,
}

pub fn encode_archive(docs: &[EmbeddingSequence]) -> Result<Vec<u8>> {
    let first = docs
        .first()
        .ok_or_else(|| FateError::Data("cannot write an empty archive".into()))?;
    let dim = first.dim();
    let mut seen = HashSet::new();
    let mut w = ByteWriter::default();
    w.bytes(ARCHIVE_MAGIC);
    w.u32(ARCHIVE_VERSION);
    w.u32(u32::try_from(dim).map_err(|_| FateError::Data(format!("d = {dim} too large")))?);
    w.u64(docs.len() as u64);
    w.u32(FLOAT_WIDTH);
    let mut offsets = Vec::with_capacity(docs.len());
    for doc in docs {
        if doc.dim() != dim {
            return Err(FateError::shape(
                format!("archive record `{}`", doc.doc_id()),
                format!("d = {dim}"),
                format!("d = {}", doc.dim()),
            ));
        }
        if !seen.insert(doc.doc_id()) {
            return Err(FateError::Data(format!(
                "duplicate doc_id `{}`",
                doc.doc_id()
            )));
        }
        offsets.push(w.buf.len() as u64);
        let id = doc.doc_id().as_bytes();
        w.u32(id.len() as u32);
        w.bytes(id);
        w.u32(doc.len() as u32);
        w.f64s(doc.tokens().iter());
    }
    for offset in offsets {
        w.u64(offset);
    }
    Ok(w.buf)
}

pub fn write_archive(path: &Path, docs: &[EmbeddingSequence]) -> Result<()> {
    write_file(path, &encode_archive(docs)?)
}

fn read_header(r: &mut ByteReader<'_>) -> Result<ArchiveHeader> {
    if r.take(8, "magic")? != ARCHIVE_MAGIC {
        return Err(r.error("not an embedding archive (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != ARCHIVE_VERSION {
        return Err(r.error(format!("unsupported archive version {version}")));
    }
    let dim = r.u32("d")? as usize;
    if dim == 0 {
        return Err(r.error("declared d is zero"));
    }
    let count = r.u64("document count")?;
    let float_width = r.u32("float width")?;
    if float_width != FLOAT_WIDTH {
        return Err(r.error(format!("unsupported float width {float_width}")));
    }
    let doc_count = r.len_field(count, 8, "document count")?;
    Ok(ArchiveHeader {
        version,
        dim,
        doc_count,
        float_width,
    })
}

fn read_offsets(r: &mut ByteReader<'_>, header: &ArchiveHeader, total: usize) -> Result<Vec<u64>> {
    let index_start = total - 8 * header.doc_count;
    if index_start < HEADER_LEN {
        return Err(r.error("index overlaps header"));
    }
    r.seek(index_start)?;
    let mut offsets = Vec::with_capacity(header.doc_count);
    for i in 0..header.doc_count {
        let off = r.u64("index")?;
        if (off as usize) < HEADER_LEN || off as usize >= index_start {
            return Err(r.error(format!(
                "index entry {i} points outside the record region: {off}"
            )));
        }
        offsets.push(off);
    }
    Ok(offsets)
}

fn read_record_head(r: &mut ByteReader<'_>, dim: usize) -> Result<(String, usize)> {
    let id_len = r.u32("doc_id length")? as usize;
    let raw = r.take(id_len, "doc_id")?;
    let doc_id = std::str::from_utf8(raw)
        .map_err(|_| r.error("doc_id is not valid UTF-8"))?
        .to_owned();
    let tokens = r.u32("token count")? as usize;
    if tokens == 0 {
        return Err(r.error(format!("document `{doc_id}` has no tokens")));
    }
    if tokens.saturating_mul(dim).saturating_mul(8) > r.remaining() {
        return Err(r.error(format!("document `{doc_id}` payload truncated")));
    }
    Ok((doc_id, tokens))
}

pub fn decode_archive(bytes: &[u8], path: &Path) -> Result<Vec<EmbeddingSequence>> {
    let mut r = ByteReader::new(bytes, path);
    let header = read_header(&mut r)?;
    let offsets = read_offsets(&mut r, &header, bytes.len())?;
    let index_start = bytes.len() - 8 * header.doc_count;
    r.seek(HEADER_LEN)?;
    let mut docs = Vec::with_capacity(header.doc_count);
    let mut seen = HashSet::new();
    for (i, &offset) in offsets.iter().enumerate() {
        if r.position() as u64 != offset {
            return Err(r.error(format!(
                "index entry {i} says offset {offset}, record starts at {}",
                r.position()
            )));
        }
        let (doc_id, tokens) = read_record_head(&mut r, header.dim)?;
        let values = r.f64s(header.dim * tokens, "embedding payload")?;
        let matrix =
            Array2::from_shape_vec((header.dim, tokens), values).expect("length matches shape");
        if !seen.insert(doc_id.clone()) {
            return Err(r.error(format!("duplicate doc_id `{doc_id}`")));
        }
        let doc = EmbeddingSequence::new(doc_id, matrix).map_err(|e| r.error(e.to_string()))?;
        docs.push(doc);
    }
    if r.position() != index_start {
        return Err(r.error(format!(
            "{} unindexed bytes before the index",
            index_start - r.position()
        )));
    }
    Ok(docs)
}

pub fn read_archive(path: &Path) -> Result<Vec<EmbeddingSequence>> {
    decode_archive(&read_file(path)?, path)
}

/// Header and index (doc ids, token counts, offsets) without the matrices.
pub fn read_archive_index(path: &Path) -> Result<(ArchiveHeader, Vec<IndexEntry>)> {
    let bytes = read_file(path)?;
    let mut r = ByteReader::new(&bytes, path);
    let header = read_header(&mut r)?;
    let offsets = read_offsets(&mut r, &header, bytes.len())?;
    let mut entries = Vec::with_capacity(offsets.len());
    for offset in offsets {
        r.seek(offset as usize)?;
        let (doc_id, tokens) = read_record_head(&mut r, header.dim)?;
        entries.push(IndexEntry {
            doc_id,
            tokens,
            offset,
        });
    }
    Ok((header, entries))
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    fn docs() -> Vec<EmbeddingSequence> {
        vec![
            EmbeddingSequence::new("a", array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap(),
            EmbeddingSequence::new("bé", array![[-0.5], [f64::MIN_POSITIVE]]).unwrap(),
        ]
    }

    #[test]
    fn exact_byte_layout() {
        let bytes = encode_archive(&docs()[..1]).unwrap();
        let mut expected = Vec::new();
        expected.extend_from_slice(b"FATEEMB\0");
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&64u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.push(b'a');
        expected.extend_from_slice(&3u32.to_le_bytes());
        for v in [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0] {
            expected.extend_from_slice(&v.to_le_bytes());
        }
        expected.extend_from_slice(&28u64.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let bytes = encode_archive(&docs()).unwrap();
        let back = decode_archive(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, docs());
    }

    #[test]
    fn index_read_skips_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.emb");
        write_archive(&path, &docs()).unwrap();
        let (header, index) = read_archive_index(&path).unwrap();
        assert_eq!(header.dim, 2);
        assert_eq!(header.doc_count, 2);
        assert_eq!(
            index[0],
            IndexEntry {
                doc_id: "a".into(),
                tokens: 3,
                offset: 28
            }
        );
        assert_eq!(index[1].doc_id, "bé");
        assert_eq!(index[1].tokens, 1);
    }

    #[test]
    fn malformed_archives_rejected() {
        let bytes = encode_archive(&docs()).unwrap();
        let p = Path::new("bad.emb");
        let mut bad = bytes.clone();
        bad[3] = 0;
        assert!(matches!(
            decode_archive(&bad, p),
            Err(FateError::Format { .. })
        ));
        assert!(decode_archive(&bytes[..bytes.len() - 1], p).is_err());
        let mut width = bytes.clone();
        width[24] = 32;
        assert!(decode_archive(&width, p)
            .unwrap_err()
            .to_string()
            .contains("float width"));
        let mut index = bytes.clone();
        let n = index.len();
        index[n - 8] = 29;
        assert!(decode_archive(&index, p).is_err());
    }

    #[test]
    fn inconsistent_dimension_rejected_on_write() {
        let mut d = docs();
        d.push(EmbeddingSequence::new("c", array![[1.0]]).unwrap());
        assert!(matches!(encode_archive(&d), Err(FateError::Shape { .. })));
        let dup = vec![docs()[0].clone(), docs()[0].clone()];
        assert!(encode_archive(&dup).is_err());
    }
}
