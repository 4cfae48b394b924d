//! Flat navigable graph built by incremental insertion and searched with a
//! best-first beam.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::codec::{get_lists, get_u64, put_lists, put_u64};
use super::{with_visited, Ranked, SearchOutput, Visited};
use crate::error::{Error, Result};
use crate::quantization::column_means;
use crate::vector::{l2_squared, DenseMatrix, Neighbor, QueryScorer, Space};

#[derive(Debug, Clone, PartialEq)]
pub struct BeamGraph {
    adjacency: Vec<Vec<u32>>,
    entry: u32,
    max_degree: usize,
}

impl BeamGraph {
    /// Inserts points one at a time: each new point runs a beam search of
    /// width `ef_construction` over the graph so far, links to the
    /// candidates that survive the dominance rule, and receives reverse
    /// edges from them. Lists that overflow `max_degree` are re-pruned with
    /// the same rule.
    pub fn build(space: &Space, max_degree: usize, ef_construction: usize, seed: u64) -> Result<Self> {
        let corpus = space
            .dense()
            .ok_or_else(|| Error::Unsupported("beam graph over non-dense data".into()))?;
        if max_degree < 2 {
            return Err(Error::invalid("max_degree must be at least 2"));
        }
        if ef_construction < max_degree {
            return Err(Error::invalid(format!(
                "ef_construction = {ef_construction} is below max_degree = {max_degree}"
            )));
        }
        let n = corpus.rows();
        let entry = medoid(corpus);
        if n <= max_degree + 1 {
            let adjacency = (0..n as u32)
                .map(|i| (0..n as u32).filter(|&j| j != i).collect())
                .collect();
            return Ok(Self {
                adjacency,
                entry,
                max_degree,
            });
        }

        let mut order: Vec<u32> = (0..n as u32).filter(|&i| i != entry).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

        let mut g = Self {
            adjacency: vec![Vec::new(); n],
            entry,
            max_degree,
        };
        let pair = |a: u32, b: u32| -> f32 {
            let (a, b) = (a as usize, b as usize);
            space
                .measure()
                .dense_score(corpus.row(a), corpus.row(b), space.norm(a), space.norm(b))
        };
        for &p in &order {
            let candidates = with_visited(n, |v| {
                g.beam(|id| pair(p, id), ef_construction, v).0
            });
            let selected = select_neighbors(&candidates, max_degree, pair);
            for &s in &selected {
                let list = &mut g.adjacency[s as usize];
                list.push(p);
                if list.len() > max_degree {
                    let mut ranked: Vec<Neighbor> =
                        list.iter().map(|&o| Neighbor::new(o, pair(s, o))).collect();
                    ranked.sort_unstable_by(Neighbor::cmp_rank);
                    *list = select_neighbors(&ranked, max_degree, pair);
                }
            }
            g.adjacency[p as usize] = selected;
        }
        Ok(g)
    }

    /// Best-first search from the entry point keeping the `ef` best nodes
    /// seen. Returns them sorted together with the number of scored nodes.
    fn beam(&self, dist: impl Fn(u32) -> f32, ef: usize, visited: &mut Visited) -> (Vec<Neighbor>, usize) {
        let start = Neighbor::new(self.entry, dist(self.entry));
        visited.insert(self.entry);
        let mut scored = 1;
        let mut frontier = BinaryHeap::new();
        let mut best = BinaryHeap::with_capacity(ef + 1);
        frontier.push(Reverse(Ranked(start)));
        best.push(Ranked(start));
        while let Some(Reverse(Ranked(cur))) = frontier.pop() {
            if best.len() >= ef && Ranked(cur) > *best.peek().unwrap() {
                break;
            }
            for &nb in &self.adjacency[cur.id as usize] {
                if !visited.insert(nb) {
                    continue;
                }
                let cand = Ranked(Neighbor::new(nb, dist(nb)));
                scored += 1;
                if best.len() < ef || cand < *best.peek().unwrap() {
                    frontier.push(Reverse(cand));
                    best.push(cand);
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        let out = best.into_sorted_vec().into_iter().map(|r| r.0).collect();
        (out, scored)
    }

    pub(crate) fn search(&self, scorer: &QueryScorer<'_>, k: usize, ef: usize) -> SearchOutput {
        let (mut found, scored) = with_visited(self.adjacency.len(), |v| {
            self.beam(|id| scorer.score(id as usize), ef, v)
        });
        found.truncate(k);
        SearchOutput::new(found, scored, k)
    }

    pub fn entry(&self) -> u32 {
        self.entry
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn neighbors(&self, id: u32) -> &[u32] {
        &self.adjacency[id as usize]
    }

    /// Number of nodes reachable from the entry point.
    pub fn reachable(&self) -> usize {
        let mut seen = vec![false; self.adjacency.len()];
        let mut queue = VecDeque::from([self.entry]);
        seen[self.entry as usize] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u as usize] {
                if !seen[v as usize] {
                    seen[v as usize] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count
    }

    pub(crate) fn write(&self, w: &mut Vec<u8>) {
        put_u64(w, self.entry as u64);
        put_u64(w, self.max_degree as u64);
        put_lists(w, &self.adjacency);
    }

    pub(crate) fn read(r: &mut &[u8]) -> Result<Self> {
        let entry = get_u64(r)? as u32;
        let max_degree = get_u64(r)? as usize;
        let adjacency = get_lists(r)?;
        let n = adjacency.len();
        if entry as usize >= n {
            return Err(Error::invalid("graph entry point out of range"));
        }
        for (i, l) in adjacency.iter().enumerate() {
            if l.iter().any(|&j| j as usize >= n || j as usize == i) {
                return Err(Error::invalid(format!("corrupt adjacency for node {i}")));
            }
        }
        Ok(Self {
            adjacency,
            entry,
            max_degree,
        })
    }
}

/// Walks `candidates` (sorted by distance to the base point) and keeps a
/// candidate only if it is strictly closer to the base point than to every
/// neighbor kept so far.
fn select_neighbors(candidates: &[Neighbor], max: usize, pair: impl Fn(u32, u32) -> f32) -> Vec<u32> {
    let mut kept: Vec<u32> = Vec::with_capacity(max);
    for c in candidates {
        if kept.len() == max {
            break;
        }
        if kept.iter().all(|&r| c.dissimilarity < pair(c.id, r)) {
            kept.push(c.id);
        }
    }
    kept
}

/// Corpus point nearest (Euclidean) to the corpus mean, ties to the lowest id.
fn medoid(corpus: &DenseMatrix) -> u32 {
    let mean: Vec<f32> = column_means(corpus).into_iter().map(|m| m as f32).collect();
    let mut best = (0u32, f32::INFINITY);
    for (i, row) in corpus.iter().enumerate() {
        let d = l2_squared(row, &mean);
        if d < best.1 {
            best = (i as u32, d);
        }
    }
    best.0
}
