//! `VIDX` container and little-endian payload helpers.
//!
//! Layout: magic `VIDX`, version u32, family tag u8, seed u64, measure u8,
//! corpus rows u64, corpus dim u32, SHA-256 corpus digest (32 bytes), param
//! count u32 then (key length u16, key bytes, value u64) per param, payload
//! length u64, payload.

use std::io::{self, Read};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use super::ParamMap;
use crate::error::{Error, Result};
use crate::vector::{Measure, Space, VectorSet};

pub const MAGIC: &[u8; 4] = b"VIDX";
pub const VERSION: u32 = 1;

pub(crate) struct Container<'a> {
    pub family: u8,
    pub seed: u64,
    pub params: ParamMap,
    pub payload: &'a [u8],
}

fn corpus_digest(space: &Space) -> [u8; 32] {
    let mut h = Sha256::new();
    match &**space.data() {
        VectorSet::Dense(m) => {
            h.update([0u8]);
            for v in m.as_slice() {
                h.update(v.to_le_bytes());
            }
        }
        VectorSet::Bits(m) => {
            h.update([2u8]);
            for w in m.as_words() {
                h.update(w.to_le_bytes());
            }
        }
        VectorSet::Bytes(m) => {
            h.update([1u8]);
            h.update(m.as_slice());
        }
    }
    let mut out = [0u8; 32];
    out.copy_from_slice(&h.finalize());
    out
}

pub(crate) fn write_container(
    family: u8,
    seed: u64,
    params: &ParamMap,
    space: &Space,
    payload: &[u8],
) -> Vec<u8> {
    let mut w = Vec::with_capacity(payload.len() + 128);
    w.extend_from_slice(MAGIC);
    w.write_u32::<LE>(VERSION).unwrap();
    w.write_u8(family).unwrap();
    w.write_u64::<LE>(seed).unwrap();
    w.write_u8(space.measure().tag()).unwrap();
    w.write_u64::<LE>(space.len() as u64).unwrap();
    w.write_u32::<LE>(space.dim() as u32).unwrap();
    w.extend_from_slice(&corpus_digest(space));
    w.write_u32::<LE>(params.len() as u32).unwrap();
    for (k, v) in params {
        w.write_u16::<LE>(k.len() as u16).unwrap();
        w.extend_from_slice(k.as_bytes());
        w.write_u64::<LE>(*v).unwrap();
    }
    w.write_u64::<LE>(payload.len() as u64).unwrap();
    w.extend_from_slice(payload);
    w
}

pub(crate) fn read_container<'a>(bytes: &'a [u8], space: &Space) -> Result<Container<'a>> {
    let mut r = bytes;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::invalid(format!("bad index magic {magic:?}")));
    }
    let version = r.read_u32::<LE>().map_err(truncated)?;
    if version != VERSION {
        return Err(Error::invalid(format!(
            "index version {version}, expected {VERSION}"
        )));
    }
    let family = r.read_u8().map_err(truncated)?;
    let seed = r.read_u64::<LE>().map_err(truncated)?;
    let measure = Measure::from_tag(r.read_u8().map_err(truncated)?)
        .ok_or_else(|| Error::invalid("unknown measure tag"))?;
    let rows = r.read_u64::<LE>().map_err(truncated)?;
    let dim = r.read_u32::<LE>().map_err(truncated)?;
    let mut digest = [0u8; 32];
    r.read_exact(&mut digest).map_err(truncated)?;
    if measure != space.measure()
        || rows != space.len() as u64
        || dim as usize != space.dim()
        || digest != corpus_digest(space)
    {
        return Err(Error::invalid(
            "index was built over a different corpus or measure",
        ));
    }
    let count = r.read_u32::<LE>().map_err(truncated)?;
    let mut params = ParamMap::new();
    for _ in 0..count {
        let len = r.read_u16::<LE>().map_err(truncated)? as usize;
        let mut key = vec![0u8; len];
        r.read_exact(&mut key).map_err(truncated)?;
        let key = String::from_utf8(key).map_err(|_| Error::invalid("non-UTF-8 param key"))?;
        params.insert(key, r.read_u64::<LE>().map_err(truncated)?);
    }
    let len = r.read_u64::<LE>().map_err(truncated)? as usize;
    if r.len() != len {
        return Err(Error::invalid(format!(
            "index payload is {} bytes, header declares {len}",
            r.len()
        )));
    }
    Ok(Container {
        family,
        seed,
        params,
        payload: r,
    })
}

pub(crate) fn truncated(e: io::Error) -> Error {
    Error::invalid(format!("truncated index data: {e}"))
}

pub(crate) fn put_u32s(w: &mut Vec<u8>, xs: &[u32]) {
    w.write_u64::<LE>(xs.len() as u64).unwrap();
    for &x in xs {
        w.write_u32::<LE>(x).unwrap();
    }
}

pub(crate) fn put_u64s(w: &mut Vec<u8>, xs: &[u64]) {
    w.write_u64::<LE>(xs.len() as u64).unwrap();
    for &x in xs {
        w.write_u64::<LE>(x).unwrap();
    }
}

pub(crate) fn put_f32s(w: &mut Vec<u8>, xs: &[f32]) {
    w.write_u64::<LE>(xs.len() as u64).unwrap();
    for &x in xs {
        w.write_f32::<LE>(x).unwrap();
    }
}

pub(crate) fn put_bytes(w: &mut Vec<u8>, xs: &[u8]) {
    w.write_u64::<LE>(xs.len() as u64).unwrap();
    w.extend_from_slice(xs);
}

pub(crate) fn put_u64(w: &mut Vec<u8>, x: u64) {
    w.write_u64::<LE>(x).unwrap();
}

pub(crate) fn get_u64(r: &mut &[u8]) -> Result<u64> {
    r.read_u64::<LE>().map_err(truncated)
}

fn get_len(r: &mut &[u8], elem: usize) -> Result<usize> {
    let n = get_u64(r)? as usize;
    if n.saturating_mul(elem) > r.len() {
        return Err(Error::invalid("truncated index data: array overruns payload"));
    }
    Ok(n)
}

pub(crate) fn get_u32s(r: &mut &[u8]) -> Result<Vec<u32>> {
    let n = get_len(r, 4)?;
    (0..n).map(|_| r.read_u32::<LE>().map_err(truncated)).collect()
}

pub(crate) fn get_u64s(r: &mut &[u8]) -> Result<Vec<u64>> {
    let n = get_len(r, 8)?;
    (0..n).map(|_| r.read_u64::<LE>().map_err(truncated)).collect()
}

pub(crate) fn get_f32s(r: &mut &[u8]) -> Result<Vec<f32>> {
    let n = get_len(r, 4)?;
    (0..n).map(|_| r.read_f32::<LE>().map_err(truncated)).collect()
}

pub(crate) fn get_bytes(r: &mut &[u8]) -> Result<Vec<u8>> {
    let n = get_len(r, 1)?;
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head.to_vec())
}

/// Nested lists as offsets plus a flat id array.
pub(crate) fn put_lists(w: &mut Vec<u8>, lists: &[Vec<u32>]) {
    let mut offsets = Vec::with_capacity(lists.len() + 1);
    let mut flat = Vec::new();
    offsets.push(0u64);
    for l in lists {
        flat.extend_from_slice(l);
        offsets.push(flat.len() as u64);
    }
    put_u64s(w, &offsets);
    put_u32s(w, &flat);
}

pub(crate) fn get_lists(r: &mut &[u8]) -> Result<Vec<Vec<u32>>> {
    let offsets = get_u64s(r)?;
    let flat = get_u32s(r)?;
    if offsets.first() != Some(&0) || offsets.last().copied() != Some(flat.len() as u64) {
        return Err(Error::invalid("corrupt list offsets"));
    }
    offsets
        .windows(2)
        .map(|w| {
            if w[0] > w[1] {
                Err(Error::invalid("corrupt list offsets"))
            } else {
                Ok(flat[w[0] as usize..w[1] as usize].to_vec())
            }
        })
        .collect()
}
