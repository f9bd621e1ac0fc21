//! Embedding file format, ranking CSVs, ground-truth lists and report files.
//!
//! Embedding files are little-endian throughout:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "HATV"
//! 4       4     format version (u32, currently 1)
//! 8       8     n items (u64)
//! 16      8     t frames per item (u64, 1 = global only)
//! 24      8     d dimensions (u64)
//! 32      4     dtype code (u32, 0 = f32)
//! 36      n·t·d·4  payload, row-major (item, frame, dim)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::Serialize;

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"HATV";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 0;
pub const HEADER_LEN: usize = 36;

/// Parsed header of an embedding file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub version: u32,
    pub n: u64,
    pub t: u64,
    pub d: u64,
    pub dtype: u32,
}

impl Header {
    fn payload_len(&self) -> Result<usize> {
        let overflow = || Error::ShapeOverflow {
            n: self.n,
            t: self.t,
            d: self.d,
        };
        let bytes = self
            .n
            .checked_mul(self.t)
            .and_then(|x| x.checked_mul(self.d))
            .and_then(|x| x.checked_mul(4))
            .ok_or_else(overflow)?;
        usize::try_from(bytes).map_err(|_| overflow())
    }
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn u64_at(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"))
}

/// Validates magic and version first, then the rest of the header.
pub fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedPayload {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes.len() < 8 {
        return Err(Error::TruncatedPayload {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let version = u32_at(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let header = Header {
        version,
        n: u64_at(bytes, 8),
        t: u64_at(bytes, 16),
        d: u64_at(bytes, 24),
        dtype: u32_at(bytes, 32),
    };
    if header.dtype != DTYPE_F32 {
        return Err(Error::DtypeUnsupported(header.dtype));
    }
    if header.n == 0 || header.t == 0 || header.d == 0 {
        return Err(Error::Shape(format!(
            "empty embedding file shape {}x{}x{}",
            header.n, header.t, header.d
        )));
    }
    Ok(header)
}

/// Decodes a complete file image.
pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingSet> {
    let header = parse_header(bytes)?;
    let expected = header.payload_len()?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            expected: expected as u64,
            found: payload.len() as u64,
        });
    }
    if payload.len() > expected {
        return Err(Error::TrailingBytes((payload.len() - expected) as u64));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let (n, t, d) = (header.n as usize, header.t as usize, header.d as usize);
    if t == 1 {
        EmbeddingSet::new(Array2::from_shape_vec((n, d), values).expect("length checked"))
    } else {
        EmbeddingSet::from_frames(Array3::from_shape_vec((n, t, d), values).expect("length checked"))
    }
}

/// Encodes frames when present, otherwise the global rows with `t = 1`.
/// Values are narrowed to `f32`.
pub fn encode_embeddings(e: &EmbeddingSet) -> Vec<u8> {
    let (t, values): (usize, Vec<f64>) = match e.frames() {
        Some(frames) => (frames.dim().1, frames.iter().copied().collect()),
        None => (1, e.data().iter().copied().collect()),
    };
    let mut out = Vec::with_capacity(HEADER_LEN + values.len() * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(e.len() as u64).to_le_bytes());
    out.extend_from_slice(&(t as u64).to_le_bytes());
    out.extend_from_slice(&(e.dim() as u64).to_le_bytes());
    out.extend_from_slice(&DTYPE_F32.to_le_bytes());
    for v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embeddings(&bytes)
}

pub fn write_embeddings(e: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_embeddings(e))
}

/// Writes via a sibling temporary file and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut tmp_name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Pretty JSON with `serde_json`'s shortest round-trip float formatting.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// `query_index,g1,…,gK` per line; no header.
pub fn rankings_to_csv(rankings: &[Vec<usize>], top: usize) -> String {
    let mut out = String::new();
    for (i, r) in rankings.iter().enumerate() {
        out.push_str(&i.to_string());
        for j in r.iter().take(top) {
            out.push(',');
            out.push_str(&j.to_string());
        }
        out.push('\n');
    }
    out
}

/// Inverse of [`rankings_to_csv`]; rows must appear in query order.
pub fn rankings_from_csv(text: &str) -> Result<Vec<Vec<usize>>> {
    let mut out = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',').map(|f| {
            f.trim()
                .parse::<usize>()
                .map_err(|_| Error::Parse(format!("rankings line {}: bad integer `{f}`", line_no + 1)))
        });
        let q = fields.next().expect("split yields one field")?;
        if q != out.len() {
            return Err(Error::Parse(format!(
                "rankings line {}: expected query {}, found {q}",
                line_no + 1,
                out.len()
            )));
        }
        out.push(fields.collect::<Result<Vec<_>>>()?);
    }
    Ok(out)
}

/// One gallery index per line.
pub fn ground_truth_from_text(text: &str) -> Result<Vec<usize>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .enumerate()
        .map(|(i, l)| {
            l.parse::<usize>()
                .map_err(|_| Error::Parse(format!("ground truth entry {}: bad index `{l}`", i + 1)))
        })
        .collect()
}

pub fn read_text(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
