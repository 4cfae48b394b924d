//! `VIBE` vector files and `VIGT` ground-truth files.
//!
//! `VIBE` header (32 bytes, little-endian): magic `VIBE`, version u32,
//! dtype u8 (0 = f32, 1 = u8, 2 = packed bits), flags u8 (bit 0: rows are
//! unit-normalized), n u64, d u32, 10 reserved zero bytes. The payload is
//! row-major; packed-bit rows occupy `ceil(d / 64)` u64 words.
//!
//! `VIGT`: magic `VIGT`, version u32, q u64, k u32, then q×k u32 ids,
//! q×k f32 dissimilarities and q f32 thresholds.

use std::path::Path;

use byteorder::{ByteOrder, LittleEndian as LE};

use crate::error::{Error, Result};
use crate::oracle::GroundTruth;
use crate::vector::{norm, BitMatrix, ByteMatrix, DenseMatrix, VectorSet};

pub const VECTOR_MAGIC: &[u8; 4] = b"VIBE";
pub const GT_MAGIC: &[u8; 4] = b"VIGT";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;
const GT_HEADER_LEN: usize = 20;

/// Allowed deviation of a row norm from 1 in files flagged as normalized.
pub const NORM_TOLERANCE: f32 = 1e-5;

const FLAG_NORMALIZED: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    U8 = 1,
    Bits = 2,
}

impl Dtype {
    fn of(set: &VectorSet) -> Self {
        match set {
            VectorSet::Dense(_) => Dtype::F32,
            VectorSet::Bytes(_) => Dtype::U8,
            VectorSet::Bits(_) => Dtype::Bits,
        }
    }

    fn from_u8(b: u8) -> Option<Self> {
        match b {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::U8),
            2 => Some(Dtype::Bits),
            _ => None,
        }
    }

    /// Payload bytes per row.
    pub fn row_bytes(self, d: usize) -> usize {
        match self {
            Dtype::F32 => 4 * d,
            Dtype::U8 => d,
            Dtype::Bits => 8 * BitMatrix::words_for(d),
        }
    }
}

/// Every row has unit norm within [`NORM_TOLERANCE`]. Only dense data can be
/// normalized.
pub fn rows_are_unit(set: &VectorSet) -> bool {
    match set {
        VectorSet::Dense(m) => m.iter().all(|r| (norm(r) - 1.0).abs() <= NORM_TOLERANCE),
        _ => false,
    }
}

pub fn encode_vectors(set: &VectorSet, normalized: bool) -> Vec<u8> {
    let dtype = Dtype::of(set);
    let (n, d) = (set.rows(), set.dim());
    let mut out = Vec::with_capacity(HEADER_LEN + n * dtype.row_bytes(d));
    out.extend_from_slice(VECTOR_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype as u8);
    out.push(if normalized { FLAG_NORMALIZED } else { 0 });
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&[0u8; 10]);
    match set {
        VectorSet::Dense(m) => {
            for &x in m.as_slice() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        VectorSet::Bytes(m) => out.extend_from_slice(m.as_slice()),
        VectorSet::Bits(m) => {
            for &w in m.as_words() {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
    }
    out
}

/// Parses a `VIBE` image; `path` only labels errors. Returns the vectors and
/// the normalized flag, which is checked against the data.
pub fn decode_vectors(bytes: &[u8], path: &Path) -> Result<(VectorSet, bool)> {
    let bad = |m: String| Error::format(path, m);
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!(
            "truncated header: expected {HEADER_LEN} bytes, found {}",
            bytes.len()
        )));
    }
    if &bytes[..4] != VECTOR_MAGIC {
        return Err(bad(format!("bad magic {:?}, expected \"VIBE\"", &bytes[..4])));
    }
    let version = LE::read_u32(&bytes[4..8]);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}, expected {VERSION}")));
    }
    let dtype = Dtype::from_u8(bytes[8]).ok_or_else(|| bad(format!("unknown dtype {}", bytes[8])))?;
    let flags = bytes[9];
    if flags & !FLAG_NORMALIZED != 0 {
        return Err(bad(format!("unknown flags {flags:#04x}")));
    }
    let n = LE::read_u64(&bytes[10..18]) as usize;
    let d = LE::read_u32(&bytes[18..22]) as usize;
    if bytes[22..32].iter().any(|&b| b != 0) {
        return Err(bad("nonzero reserved header bytes".into()));
    }
    if d == 0 {
        return Err(bad("dimension is zero".into()));
    }
    let expected = n
        .checked_mul(dtype.row_bytes(d))
        .ok_or_else(|| bad("header sizes overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        let what = if payload.len() < expected {
            "truncated payload"
        } else {
            "trailing bytes after payload"
        };
        return Err(bad(format!(
            "{what}: expected {expected} payload bytes ({} total), found {} ({} total)",
            expected + HEADER_LEN,
            payload.len(),
            bytes.len()
        )));
    }
    let set = match dtype {
        Dtype::F32 => {
            let data = payload.chunks_exact(4).map(LE::read_f32).collect();
            VectorSet::Dense(DenseMatrix::from_vec(d, data).map_err(|e| bad(e.to_string()))?)
        }
        Dtype::U8 => VectorSet::Bytes(ByteMatrix::from_vec(d, payload.to_vec()).map_err(|e| bad(e.to_string()))?),
        Dtype::Bits => {
            let words = payload.chunks_exact(8).map(LE::read_u64).collect();
            VectorSet::Bits(BitMatrix::from_words(d, words).map_err(|e| bad(e.to_string()))?)
        }
    };
    let normalized = flags & FLAG_NORMALIZED != 0;
    if normalized && !rows_are_unit(&set) {
        return Err(bad("flagged normalized but a row norm deviates from 1".into()));
    }
    Ok((set, normalized))
}

pub fn write_vectors(path: &Path, set: &VectorSet, normalized: bool) -> Result<()> {
    std::fs::write(path, encode_vectors(set, normalized)).map_err(|e| Error::io(path, e))
}

pub fn read_vectors(path: &Path) -> Result<(VectorSet, bool)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_vectors(&bytes, path)
}

pub fn encode_ground_truth(gt: &GroundTruth) -> Vec<u8> {
    let (q, k) = (gt.queries(), gt.k());
    let mut out = Vec::with_capacity(GT_HEADER_LEN + q * k * 8 + q * 4);
    out.extend_from_slice(GT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(q as u64).to_le_bytes());
    out.extend_from_slice(&(k as u32).to_le_bytes());
    for &id in gt.ids() {
        out.extend_from_slice(&id.to_le_bytes());
    }
    for &x in gt.dists().iter().chain(gt.thresholds()) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_ground_truth(bytes: &[u8], path: &Path) -> Result<GroundTruth> {
    let bad = |m: String| Error::format(path, m);
    if bytes.len() < GT_HEADER_LEN {
        return Err(bad(format!(
            "truncated header: expected {GT_HEADER_LEN} bytes, found {}",
            bytes.len()
        )));
    }
    if &bytes[..4] != GT_MAGIC {
        return Err(bad(format!("bad magic {:?}, expected \"VIGT\"", &bytes[..4])));
    }
    let version = LE::read_u32(&bytes[4..8]);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}, expected {VERSION}")));
    }
    let q = LE::read_u64(&bytes[8..16]) as usize;
    let k = LE::read_u32(&bytes[16..20]) as usize;
    let expected = q
        .checked_mul(k)
        .and_then(|qk| qk.checked_mul(8))
        .and_then(|b| b.checked_add(q * 4))
        .ok_or_else(|| bad("header sizes overflow".into()))?;
    let payload = &bytes[GT_HEADER_LEN..];
    if payload.len() != expected {
        return Err(bad(format!(
            "payload size mismatch: expected {expected} bytes, found {}",
            payload.len()
        )));
    }
    let (ids, rest) = payload.split_at(q * k * 4);
    let (dists, thresholds) = rest.split_at(q * k * 4);
    GroundTruth::from_parts(
        k,
        ids.chunks_exact(4).map(LE::read_u32).collect(),
        dists.chunks_exact(4).map(LE::read_f32).collect(),
        thresholds.chunks_exact(4).map(LE::read_f32).collect(),
    )
    .map_err(|e| bad(e.to_string()))
}

pub fn write_ground_truth(path: &Path, gt: &GroundTruth) -> Result<()> {
    std::fs::write(path, encode_ground_truth(gt)).map_err(|e| Error::io(path, e))
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ground_truth(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn dense_round_trip_and_truncation() {
        let m = DenseMatrix::from_rows(&[[1.0f32, -2.5], [0.0, 3.25]]).unwrap();
        let bytes = encode_vectors(&VectorSet::Dense(m.clone()), false);
        assert_eq!(bytes.len(), HEADER_LEN + 16);
        let (back, flag) = decode_vectors(&bytes, p()).unwrap();
        assert_eq!(back, VectorSet::Dense(m));
        assert!(!flag);
        let err = decode_vectors(&bytes[..bytes.len() - 3], p()).unwrap_err().to_string();
        assert!(err.contains("expected 16") && err.contains("found 13"), "{err}");
    }

    #[test]
    fn bit_rows_are_whole_words() {
        let m = BitMatrix::from_bools(&[vec![true; 65], vec![false; 65]]).unwrap();
        let bytes = encode_vectors(&VectorSet::Bits(m.clone()), false);
        assert_eq!(bytes.len(), HEADER_LEN + 2 * 16);
        assert_eq!(decode_vectors(&bytes, p()).unwrap().0, VectorSet::Bits(m));
    }

    #[test]
    fn rejects_bad_headers() {
        let m = DenseMatrix::from_rows(&[[1.0f32, 0.0]]).unwrap();
        let good = encode_vectors(&VectorSet::Dense(m), true);
        assert!(decode_vectors(&good, p()).unwrap().1);
        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(decode_vectors(&magic, p()).is_err());
        let mut version = good.clone();
        version[4] = 9;
        assert!(decode_vectors(&version, p()).unwrap_err().to_string().contains("version"));
        let mut dtype = good.clone();
        dtype[8] = 7;
        assert!(decode_vectors(&dtype, p()).is_err());
        let unnormalized = DenseMatrix::from_rows(&[[3.0f32, 4.0]]).unwrap();
        let lying = encode_vectors(&VectorSet::Dense(unnormalized), true);
        assert!(decode_vectors(&lying, p()).is_err());
    }

    #[test]
    fn ground_truth_round_trip() {
        let gt = GroundTruth::from_parts(2, vec![3, 1, 0, 2], vec![0.5, 1.0, 2.0, 2.0], vec![1.0, 2.0]).unwrap();
        let bytes = encode_ground_truth(&gt);
        assert_eq!(decode_ground_truth(&bytes, p()).unwrap(), gt);
        assert!(decode_ground_truth(&bytes[..bytes.len() - 1], p()).is_err());
    }
}
