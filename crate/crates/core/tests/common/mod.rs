#![allow(dead_code)]

use std::sync::Arc;

use annbench::indexes::{Family, IndexHandle, ParamMap, QueryParams};
use annbench::vector::{dissimilarity, DenseMatrix, Measure, Neighbor, Space, VectorRef, VectorSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn params(pairs: &[(&str, u64)]) -> ParamMap {
    pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect()
}

pub fn gaussian(rows: usize, dim: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * dim)
        .map(|_| rng.sample::<f32, _>(rand_distr::StandardNormal))
        .collect();
    DenseMatrix::from_vec(dim, data).unwrap()
}

pub fn space(m: DenseMatrix, measure: Measure) -> Space {
    Space::new(Arc::new(VectorSet::Dense(m)), measure).unwrap()
}

/// Loop-and-sort reference: every pair through `dissimilarity`, full sort by
/// (dissimilarity, id).
pub fn reference_knn(corpus: &VectorSet, query: VectorRef<'_>, measure: Measure, k: usize) -> Vec<Neighbor> {
    let mut all: Vec<(f32, u32)> = (0..corpus.rows())
        .map(|i| (dissimilarity(query, corpus.get(i), measure).unwrap(), i as u32))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    all.truncate(k);
    all.into_iter().map(|(d, id)| Neighbor::new(id, d)).collect()
}

pub fn ids(ns: &[Neighbor]) -> Vec<u32> {
    ns.iter().map(|n| n.id).collect()
}

pub fn sorted_ids(ns: &[Neighbor]) -> Vec<u32> {
    let mut v = ids(ns);
    v.sort_unstable();
    v
}

/// Unique in-range ids, exact dissimilarities, rank order.
pub fn assert_valid(index: &IndexHandle, query: VectorRef<'_>, out: &[Neighbor], k: usize) {
    let space = index.space();
    assert!(out.len() <= k);
    let mut seen = std::collections::HashSet::new();
    for n in out {
        assert!((n.id as usize) < space.len(), "id {} out of range", n.id);
        assert!(seen.insert(n.id), "duplicate id {}", n.id);
        let exact = dissimilarity(query, space.data().get(n.id as usize), space.measure()).unwrap();
        assert_eq!(n.dissimilarity.to_bits(), exact.to_bits(), "id {} not exactly scored", n.id);
    }
    for w in out.windows(2) {
        assert!(w[0].cmp_rank(&w[1]).is_lt(), "unsorted output");
    }
}

/// A small parameter set that exercises every family.
pub fn small_params(family: Family) -> (ParamMap, ParamMap) {
    match family {
        Family::BruteForce => (params(&[]), params(&[])),
        Family::Ivf | Family::QueryAwareIvf => (params(&[("clusters", 8)]), params(&[("nprobe", 3)])),
        Family::IvfPq => (
            params(&[("clusters", 4), ("subspaces", 4), ("bits", 4)]),
            params(&[("nprobe", 2), ("rerank", 30)]),
        ),
        Family::BeamGraph => (params(&[("max_degree", 8), ("ef_construction", 24)]), params(&[("ef", 20)])),
        Family::RpForest => (params(&[("trees", 4), ("leaf_size", 10)]), params(&[("votes", 1)])),
        Family::Lsh => (params(&[("tables", 4), ("hash_bits", 6)]), params(&[])),
    }
}

pub fn search(index: &IndexHandle, q: &[f32], k: usize, qp: &ParamMap) -> annbench::indexes::SearchOutput {
    let qp = QueryParams::parse(index.family(), qp).unwrap();
    index.search(VectorRef::Dense(q), k, &qp).unwrap()
}
