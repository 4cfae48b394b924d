//! Ensemble of random projection trees with leaf voting.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::codec::{get_f32s, get_u32s, get_u64, put_f32s, put_u32s, put_u64};
use super::{SearchOutput, TopK};
use crate::error::{Error, Result};
use crate::vector::{dot, DenseMatrix, QueryScorer, Space};

const LEAF: u32 = u32::MAX;

/// One tree in flat form. Internal node `i` splits on the hyperplane
/// `normals[i]` at `thresholds[i]`; leaves have `left == LEAF` and own the
/// `leaf_ids` range given by `leaf_start` and `leaf_len`.
#[derive(Debug, Clone, PartialEq)]
struct Tree {
    left: Vec<u32>,
    right: Vec<u32>,
    thresholds: Vec<f32>,
    normals: Vec<f32>,
    leaf_start: Vec<u32>,
    leaf_len: Vec<u32>,
    leaf_ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpForest {
    dim: usize,
    trees: Vec<Tree>,
}

impl RpForest {
    /// `trees` trees, each splitting recursively at the median projection
    /// onto a Gaussian direction until nodes hold at most `leaf_size` points.
    pub fn build(space: &Space, trees: usize, leaf_size: usize, seed: u64) -> Result<Self> {
        let corpus = space
            .dense()
            .ok_or_else(|| Error::Unsupported("rp-forest over non-dense data".into()))?;
        if trees == 0 || leaf_size == 0 {
            return Err(Error::invalid("trees and leaf_size must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trees = (0..trees)
            .map(|_| Tree::build(corpus, leaf_size, &mut rng))
            .collect();
        Ok(Self {
            dim: corpus.dim(),
            trees,
        })
    }

    pub fn trees(&self) -> usize {
        self.trees.len()
    }

    /// Corpus ids appearing in at least `votes` of the query's leaves, ascending.
    pub fn candidates(&self, query: &[f32], votes: usize) -> Vec<u32> {
        let mut hits: Vec<u32> = Vec::new();
        for t in &self.trees {
            hits.extend_from_slice(t.leaf(query, self.dim));
        }
        hits.sort_unstable();
        let mut out = Vec::new();
        let mut i = 0;
        while i < hits.len() {
            let mut j = i;
            while j < hits.len() && hits[j] == hits[i] {
                j += 1;
            }
            if j - i >= votes {
                out.push(hits[i]);
            }
            i = j;
        }
        out
    }

    pub(crate) fn search(&self, scorer: &QueryScorer<'_>, k: usize, votes: usize) -> Result<SearchOutput> {
        if votes == 0 || votes > self.trees.len() {
            return Err(Error::invalid(format!(
                "votes = {votes} outside 1..={}",
                self.trees.len()
            )));
        }
        let q = scorer.dense_query().expect("dense query");
        let cands = self.candidates(q, votes);
        let mut top = TopK::new(k);
        for &id in &cands {
            top.push(scorer.neighbor(id as usize));
        }
        Ok(SearchOutput::new(top.into_sorted(), cands.len(), k))
    }

    pub(crate) fn write(&self, w: &mut Vec<u8>) {
        put_u64(w, self.trees.len() as u64);
        for t in &self.trees {
            put_u32s(w, &t.left);
            put_u32s(w, &t.right);
            put_f32s(w, &t.thresholds);
            put_f32s(w, &t.normals);
            put_u32s(w, &t.leaf_start);
            put_u32s(w, &t.leaf_len);
            put_u32s(w, &t.leaf_ids);
        }
    }

    pub(crate) fn read(r: &mut &[u8], dim: usize) -> Result<Self> {
        let count = get_u64(r)? as usize;
        let mut trees = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let t = Tree {
                left: get_u32s(r)?,
                right: get_u32s(r)?,
                thresholds: get_f32s(r)?,
                normals: get_f32s(r)?,
                leaf_start: get_u32s(r)?,
                leaf_len: get_u32s(r)?,
                leaf_ids: get_u32s(r)?,
            };
            t.validate(dim)?;
            trees.push(t);
        }
        Ok(Self { dim, trees })
    }
}

impl Tree {
    fn build(corpus: &DenseMatrix, leaf_size: usize, rng: &mut ChaCha8Rng) -> Self {
        let dim = corpus.dim();
        let mut t = Tree {
            left: Vec::new(),
            right: Vec::new(),
            thresholds: Vec::new(),
            normals: Vec::new(),
            leaf_start: Vec::new(),
            leaf_len: Vec::new(),
            leaf_ids: Vec::new(),
        };
        let ids: Vec<u32> = (0..corpus.rows() as u32).collect();
        t.grow(corpus, ids, leaf_size, dim, rng);
        t
    }

    /// Appends the subtree for `ids` and returns its node index. Nodes are
    /// numbered in pre-order.
    fn grow(
        &mut self,
        corpus: &DenseMatrix,
        ids: Vec<u32>,
        leaf_size: usize,
        dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> u32 {
        let node = self.left.len() as u32;
        self.left.push(LEAF);
        self.right.push(0);
        self.thresholds.push(0.0);
        self.normals.extend(std::iter::repeat_n(0.0, dim));
        self.leaf_start.push(0);
        self.leaf_len.push(0);
        if ids.len() <= leaf_size {
            self.leaf_start[node as usize] = self.leaf_ids.len() as u32;
            self.leaf_len[node as usize] = ids.len() as u32;
            self.leaf_ids.extend_from_slice(&ids);
            return node;
        }
        let normal: Vec<f32> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let mut proj: Vec<(f32, u32)> = ids
            .iter()
            .map(|&i| (dot(corpus.row(i as usize), &normal), i))
            .collect();
        proj.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mid = proj.len() / 2;
        let threshold = proj[mid - 1].0 + (proj[mid].0 - proj[mid - 1].0) / 2.0;
        let (lo, hi) = proj.split_at(mid);
        let left_ids: Vec<u32> = lo.iter().map(|p| p.1).collect();
        let right_ids: Vec<u32> = hi.iter().map(|p| p.1).collect();

        let n = node as usize;
        self.normals[n * dim..(n + 1) * dim].copy_from_slice(&normal);
        self.thresholds[n] = threshold;
        let l = self.grow(corpus, left_ids, leaf_size, dim, rng);
        let r = self.grow(corpus, right_ids, leaf_size, dim, rng);
        self.left[n] = l;
        self.right[n] = r;
        node
    }

    fn leaf(&self, q: &[f32], dim: usize) -> &[u32] {
        let mut n = 0usize;
        while self.left[n] != LEAF {
            let p = dot(q, &self.normals[n * dim..(n + 1) * dim]);
            n = if p <= self.thresholds[n] {
                self.left[n]
            } else {
                self.right[n]
            } as usize;
        }
        let s = self.leaf_start[n] as usize;
        &self.leaf_ids[s..s + self.leaf_len[n] as usize]
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let nodes = self.left.len();
        let ok = nodes > 0
            && self.right.len() == nodes
            && self.thresholds.len() == nodes
            && self.normals.len() == nodes * dim
            && self.leaf_start.len() == nodes
            && self.leaf_len.len() == nodes
            && (0..nodes).all(|n| {
                if self.left[n] == LEAF {
                    (self.leaf_start[n] as usize + self.leaf_len[n] as usize) <= self.leaf_ids.len()
                } else {
                    // children always follow their parent in pre-order
                    (self.left[n] as usize) > n
                        && (self.left[n] as usize) < nodes
                        && (self.right[n] as usize) > n
                        && (self.right[n] as usize) < nodes
                }
            });
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("corrupt random projection tree"))
        }
    }
}
