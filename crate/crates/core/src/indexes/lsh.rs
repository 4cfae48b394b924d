//! Random-hyperplane LSH for cosine dissimilarity.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::codec::{get_f32s, get_u32s, get_u64, get_u64s, put_f32s, put_u32s, put_u64, put_u64s};
use super::{SearchOutput, TopK};
use crate::error::{Error, Result};
use crate::vector::{dot, Measure, QueryScorer, Space};

/// `bits` Gaussian hyperplanes; the key of `v` has bit `i` set when `v` lies
/// strictly on the positive side of hyperplane `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperplaneHasher {
    dim: usize,
    bits: usize,
    normals: Vec<f32>,
}

impl HyperplaneHasher {
    pub fn new(dim: usize, bits: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::sample(dim, bits, &mut rng)
    }

    fn sample(dim: usize, bits: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if bits > 64 {
            return Err(Error::invalid(format!("hash_bits = {bits} exceeds 64")));
        }
        let normals = (0..dim * bits).map(|_| StandardNormal.sample(rng)).collect();
        Ok(Self { dim, bits, normals })
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn key(&self, v: &[f32]) -> u64 {
        let mut key = 0u64;
        for (i, h) in self.normals.chunks_exact(self.dim.max(1)).take(self.bits).enumerate() {
            if dot(v, h) > 0.0 {
                key |= 1 << i;
            }
        }
        key
    }
}

/// One hash table: ids sorted by key, with the distinct keys and the start
/// of each key's run.
#[derive(Debug, Clone, PartialEq)]
struct Table {
    hasher: HyperplaneHasher,
    keys: Vec<u64>,
    starts: Vec<u64>,
    ids: Vec<u32>,
}

impl Table {
    fn bucket(&self, key: u64) -> &[u32] {
        match self.keys.binary_search(&key) {
            Ok(i) => {
                let end = self.starts.get(i + 1).copied().unwrap_or(self.ids.len() as u64);
                &self.ids[self.starts[i] as usize..end as usize]
            }
            Err(_) => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperplaneLsh {
    tables: Vec<Table>,
}

impl HyperplaneLsh {
    pub fn build(space: &Space, tables: usize, hash_bits: usize, seed: u64) -> Result<Self> {
        if space.measure() != Measure::Cosine {
            return Err(Error::Unsupported(format!(
                "hyperplane lsh under {} (cosine only)",
                space.measure()
            )));
        }
        let corpus = space
            .dense()
            .ok_or_else(|| Error::Unsupported("lsh over non-dense data".into()))?;
        if tables == 0 {
            return Err(Error::invalid("tables must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(tables);
        for _ in 0..tables {
            let hasher = HyperplaneHasher::sample(corpus.dim(), hash_bits, &mut rng)?;
            let mut keyed: Vec<(u64, u32)> = corpus
                .iter()
                .enumerate()
                .map(|(i, row)| (hasher.key(row), i as u32))
                .collect();
            keyed.sort_unstable();
            let mut keys = Vec::new();
            let mut starts = Vec::new();
            for (pos, &(key, _)) in keyed.iter().enumerate() {
                if keys.last() != Some(&key) {
                    keys.push(key);
                    starts.push(pos as u64);
                }
            }
            out.push(Table {
                hasher,
                keys,
                starts,
                ids: keyed.into_iter().map(|(_, id)| id).collect(),
            });
        }
        Ok(Self { tables: out })
    }

    pub fn tables(&self) -> usize {
        self.tables.len()
    }

    /// Union of the query's buckets in the first `probes` tables, ascending.
    pub fn candidates(&self, query: &[f32], probes: usize) -> Vec<u32> {
        let mut ids: Vec<u32> = Vec::new();
        for t in self.tables.iter().take(probes) {
            ids.extend_from_slice(t.bucket(t.hasher.key(query)));
        }
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// `probes` limits how many tables are consulted (all by default,
    /// clamped to the table count).
    pub(crate) fn search(&self, scorer: &QueryScorer<'_>, k: usize, probes: Option<usize>) -> SearchOutput {
        let q = scorer.dense_query().expect("dense query");
        let cands = self.candidates(q, probes.unwrap_or(self.tables.len()));
        let mut top = TopK::new(k);
        for &id in &cands {
            top.push(scorer.neighbor(id as usize));
        }
        SearchOutput::new(top.into_sorted(), cands.len(), k)
    }

    pub(crate) fn write(&self, w: &mut Vec<u8>) {
        put_u64(w, self.tables.len() as u64);
        for t in &self.tables {
            put_u64(w, t.hasher.dim as u64);
            put_u64(w, t.hasher.bits as u64);
            put_f32s(w, &t.hasher.normals);
            put_u64s(w, &t.keys);
            put_u64s(w, &t.starts);
            put_u32s(w, &t.ids);
        }
    }

    pub(crate) fn read(r: &mut &[u8]) -> Result<Self> {
        let count = get_u64(r)? as usize;
        let mut tables = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let dim = get_u64(r)? as usize;
            let bits = get_u64(r)? as usize;
            let normals = get_f32s(r)?;
            let keys = get_u64s(r)?;
            let starts = get_u64s(r)?;
            let ids = get_u32s(r)?;
            let ok = bits <= 64
                && normals.len() == dim * bits
                && keys.len() == starts.len()
                && keys.windows(2).all(|w| w[0] < w[1])
                && starts.windows(2).all(|w| w[0] < w[1])
                && starts.first().is_none_or(|&s| s == 0)
                && starts.last().is_none_or(|&s| (s as usize) < ids.len());
            if !ok {
                return Err(Error::invalid("corrupt lsh table"));
            }
            tables.push(Table {
                hasher: HyperplaneHasher { dim, bits, normals },
                keys,
                starts,
                ids,
            });
        }
        Ok(Self { tables })
    }
}
