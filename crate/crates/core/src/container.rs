//! `.f2ce` embedding container: a little-endian binary layout and a JSON mirror.
//!
//! Binary layout:
//!
//! ```text
//! "F2CE"            magic
//! u32               version (= 1)
//! u32 N, u32 D
//! f32               fps
//! u32 src_height, u32 src_width
//! u8                has_query (0/1)
//! u16 + bytes       UTF-8 label
//! [D x f32]         query, present iff has_query = 1
//! N x D x f32       frame embeddings, row-major
//! ```
//!
//! Paths ending in `.json` use the JSON mirror with the same fields.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EmbeddingSequence, ModelError, QueryEmbedding};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"F2CE";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic bytes {0:?}, expected \"F2CE\"")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("container truncated: needed {needed} bytes at offset {offset}, {available} available")]
    TruncatedFile { offset: usize, needed: usize, available: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("label is not valid UTF-8")]
    BadLabel,
    #[error("label of {0} bytes exceeds the u16 length field")]
    LabelTooLong(usize),
    #[error("{0} does not fit in a u32 header field")]
    TooLarge(usize),
    #[error("query dimension {query} does not match frame dimension {frames}")]
    QueryDimMismatch { query: usize, frames: usize },
    #[error(transparent)]
    Invalid(#[from] ModelError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A decoded container: the frame embeddings and an optional query.
#[derive(Debug, Clone, PartialEq)]
pub struct Container<T> {
    pub sequence: EmbeddingSequence<T>,
    pub query: Option<QueryEmbedding<T>>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(ContainerError::TruncatedFile { offset: self.pos, needed: n, available });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const W: usize>(&mut self) -> Result<[u8; W], ContainerError> {
        Ok(self.take(W)?.try_into().expect("take returned W bytes"))
    }

    fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ContainerError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32, ContainerError> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    fn f32_vec<T: Scalar>(&mut self, count: usize) -> Result<Vec<T>, ContainerError> {
        let bytes = self.take(count.checked_mul(4).ok_or(ContainerError::TooLarge(count))?)?;
        Ok(bytes.chunks_exact(4).map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64)).collect())
    }
}

fn header_u32(n: usize) -> Result<u32, ContainerError> {
    u32::try_from(n).map_err(|_| ContainerError::TooLarge(n))
}

/// Decodes a binary container.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Container<T>, ContainerError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.array()?;
    if &magic != MAGIC {
        return Err(ContainerError::BadMagic(magic));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(ContainerError::UnsupportedVersion(version));
    }
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    let fps = r.f32()?;
    let src_height = r.u32()?;
    let src_width = r.u32()?;
    let has_query = r.u8()?;
    let label_len = r.u16()? as usize;
    let label = std::str::from_utf8(r.take(label_len)?).map_err(|_| ContainerError::BadLabel)?.to_owned();
    let query = match has_query {
        0 => None,
        _ => Some(QueryEmbedding::new(r.f32_vec(d)?)?),
    };
    let data = r.f32_vec(n.checked_mul(d).ok_or(ContainerError::TooLarge(n))?)?;
    if r.pos != bytes.len() {
        return Err(ContainerError::TrailingBytes(bytes.len() - r.pos));
    }
    let sequence = EmbeddingSequence::from_flat(data, n, d, fps, src_height, src_width, label)?;
    Ok(Container { sequence, query })
}

/// Encodes a sequence and optional query in the binary layout.
pub fn encode<T: Scalar>(
    seq: &EmbeddingSequence<T>,
    query: Option<&QueryEmbedding<T>>,
) -> Result<Vec<u8>, ContainerError> {
    if let Some(q) = query {
        if q.dim() != seq.dim() {
            return Err(ContainerError::QueryDimMismatch { query: q.dim(), frames: seq.dim() });
        }
    }
    let label = seq.label().as_bytes();
    let label_len = u16::try_from(label.len()).map_err(|_| ContainerError::LabelTooLong(label.len()))?;
    let floats = seq.as_flat().len() + query.map_or(0, |q| q.dim());
    let mut out = Vec::with_capacity(31 + label.len() + 4 * floats);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&header_u32(seq.len())?.to_le_bytes());
    out.extend_from_slice(&header_u32(seq.dim())?.to_le_bytes());
    out.extend_from_slice(&seq.fps().to_le_bytes());
    out.extend_from_slice(&seq.src_height().to_le_bytes());
    out.extend_from_slice(&seq.src_width().to_le_bytes());
    out.push(u8::from(query.is_some()));
    out.extend_from_slice(&label_len.to_le_bytes());
    out.extend_from_slice(label);
    let values = query.map(|q| q.as_slice()).unwrap_or(&[]).iter().chain(seq.as_flat());
    for v in values {
        out.extend_from_slice(&v.as_f32().to_le_bytes());
    }
    Ok(out)
}

/// JSON mirror of the binary container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerJson {
    pub version: u32,
    pub n: u32,
    pub d: u32,
    pub fps: f32,
    pub src_height: u32,
    pub src_width: u32,
    pub label: String,
    pub query: Option<Vec<f32>>,
    pub frames: Vec<Vec<f32>>,
}

impl ContainerJson {
    pub fn from_parts<T: Scalar>(
        seq: &EmbeddingSequence<T>,
        query: Option<&QueryEmbedding<T>>,
    ) -> Result<Self, ContainerError> {
        if let Some(q) = query {
            if q.dim() != seq.dim() {
                return Err(ContainerError::QueryDimMismatch { query: q.dim(), frames: seq.dim() });
            }
        }
        let to_f32 = |v: &[T]| v.iter().map(|x| x.as_f32()).collect::<Vec<_>>();
        Ok(Self {
            version: VERSION,
            n: header_u32(seq.len())?,
            d: header_u32(seq.dim())?,
            fps: seq.fps(),
            src_height: seq.src_height(),
            src_width: seq.src_width(),
            label: seq.label().to_owned(),
            query: query.map(|q| to_f32(q.as_slice())),
            frames: seq.frames().map(to_f32).collect(),
        })
    }

    pub fn into_container<T: Scalar>(self) -> Result<Container<T>, ContainerError> {
        if self.version != VERSION {
            return Err(ContainerError::UnsupportedVersion(self.version));
        }
        let widen = |v: Vec<f32>| v.into_iter().map(|x| T::lit(x as f64)).collect::<Vec<T>>();
        let d = self.d as usize;
        if self.frames.len() != self.n as usize {
            return Err(ModelError::DimMismatch { expected: self.n as usize, found: self.frames.len() }.into());
        }
        if let Some(row) = self.frames.iter().find(|r| r.len() != d) {
            return Err(ModelError::DimMismatch { expected: d, found: row.len() }.into());
        }
        let query = match self.query {
            Some(q) if q.len() != d => return Err(ContainerError::QueryDimMismatch { query: q.len(), frames: d }),
            Some(q) => Some(QueryEmbedding::new(widen(q))?),
            None => None,
        };
        let data: Vec<T> = self.frames.into_iter().flat_map(widen).collect();
        let sequence = EmbeddingSequence::from_flat(
            data,
            self.n as usize,
            d,
            self.fps,
            self.src_height,
            self.src_width,
            self.label,
        )?;
        Ok(Container { sequence, query })
    }
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Reads a container, choosing the JSON mirror for `.json` paths.
pub fn read_container<T: Scalar>(path: impl AsRef<Path>) -> Result<Container<T>, ContainerError> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    if is_json(path) {
        serde_json::from_slice::<ContainerJson>(&bytes)?.into_container()
    } else {
        decode(&bytes)
    }
}

/// Writes a container, choosing the JSON mirror for `.json` paths.
pub fn write_container<T: Scalar>(
    seq: &EmbeddingSequence<T>,
    query: Option<&QueryEmbedding<T>>,
    path: impl AsRef<Path>,
) -> Result<(), ContainerError> {
    let path = path.as_ref();
    let bytes = if is_json(path) {
        let mut text = serde_json::to_vec_pretty(&ContainerJson::from_parts(seq, query)?)?;
        text.push(b'\n');
        text
    } else {
        encode(seq, query)?
    };
    fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (EmbeddingSequence<f32>, QueryEmbedding<f32>) {
        let s = std::f32::consts::FRAC_1_SQRT_2;
        let seq =
            EmbeddingSequence::new(vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, s, s, 0.0]], 1.0, 768, 1024, "clip-α")
                .unwrap();
        let q = QueryEmbedding::new(vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        (seq, q)
    }

    #[test]
    fn binary_round_trip_is_byte_identical() {
        let (seq, q) = sample();
        let bytes = encode(&seq, Some(&q)).unwrap();
        let back = decode::<f32>(&bytes).unwrap();
        assert_eq!(back.sequence, seq);
        assert_eq!(back.query.as_ref(), Some(&q));
        assert_eq!(encode(&back.sequence, back.query.as_ref()).unwrap(), bytes);
    }

    #[test]
    fn header_layout() {
        let (seq, _) = sample();
        let bytes = encode(&seq, None).unwrap();
        assert_eq!(&bytes[0..4], b"F2CE");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 4);
        assert_eq!(f32::from_le_bytes(bytes[16..20].try_into().unwrap()), 1.0);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 768);
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 1024);
        assert_eq!(bytes[28], 0);
        let label_len = u16::from_le_bytes(bytes[29..31].try_into().unwrap()) as usize;
        assert_eq!(label_len, "clip-α".len());
        assert_eq!(bytes.len(), 31 + label_len + 2 * 4 * 4);
    }

    #[test]
    fn widening_to_f64_round_trips() {
        let (seq, q) = sample();
        let bytes = encode(&seq, Some(&q)).unwrap();
        let wide = decode::<f64>(&bytes).unwrap();
        assert_eq!(encode(&wide.sequence, wide.query.as_ref()).unwrap(), bytes);
    }

    #[test]
    fn bad_magic() {
        let (seq, q) = sample();
        let mut bytes = encode(&seq, Some(&q)).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode::<f32>(&bytes), Err(ContainerError::BadMagic(m)) if &m == b"XXXX"));
    }

    #[test]
    fn unsupported_version() {
        let (seq, _) = sample();
        let mut bytes = encode(&seq, None).unwrap();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(decode::<f32>(&bytes), Err(ContainerError::UnsupportedVersion(2))));
    }

    #[test]
    fn truncated_payload() {
        let (seq, q) = sample();
        let bytes = encode(&seq, Some(&q)).unwrap();
        for cut in [2, 10, 30, bytes.len() - 1] {
            assert!(matches!(decode::<f32>(&bytes[..cut]), Err(ContainerError::TruncatedFile { .. })), "cut at {cut}");
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let (seq, _) = sample();
        let mut bytes = encode(&seq, None).unwrap();
        bytes.push(0);
        assert!(matches!(decode::<f32>(&bytes), Err(ContainerError::TrailingBytes(1))));
    }

    #[test]
    fn invalid_payload_is_rejected() {
        let (seq, _) = sample();
        let mut bytes = encode(&seq, None).unwrap();
        let at = bytes.len() - 4;
        bytes[at..].copy_from_slice(&0.5f32.to_le_bytes());
        assert!(matches!(decode::<f32>(&bytes), Err(ContainerError::Invalid(_))));
    }

    #[test]
    fn json_mirror_round_trip() {
        let (seq, q) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.f2ce.json");
        write_container(&seq, Some(&q), &path).unwrap();
        let back = read_container::<f32>(&path).unwrap();
        assert_eq!(back.sequence, seq);
        assert_eq!(back.query, Some(q));
    }

    #[test]
    fn file_round_trip_without_query() {
        let (seq, _) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.f2ce");
        write_container(&seq, None, &path).unwrap();
        let back = read_container::<f64>(&path).unwrap();
        assert!(back.query.is_none());
        assert_eq!(back.sequence.len(), 2);
    }
}
