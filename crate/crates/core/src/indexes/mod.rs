//! Vector indexes behind one build/search contract.
//!
//! One reference implementation per family: exhaustive scan, inverted file
//! (plain, product-quantized, and with centroids learned from a query
//! sample), a flat navigable graph, a random-projection forest and
//! hyperplane LSH. Every family reranks its candidates with exact
//! dissimilarities, so reported scores are never approximations.

mod codec;
mod graph;
mod ivf;
mod ivfpq;
pub mod kmeans;
mod lsh;
mod rpforest;

use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{DenseMatrix, Neighbor, Space, VectorRef};

pub use graph::BeamGraph;
pub use ivf::InvertedFile;
pub use ivfpq::IvfPq;
pub use kmeans::{kmeans, Centroids};
pub use lsh::{HyperplaneHasher, HyperplaneLsh};
pub use rpforest::RpForest;

/// Build or query hyperparameters, keyed by name.
pub type ParamMap = BTreeMap<String, u64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    BruteForce,
    Ivf,
    IvfPq,
    BeamGraph,
    RpForest,
    Lsh,
    QueryAwareIvf,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::BruteForce,
        Family::Ivf,
        Family::IvfPq,
        Family::BeamGraph,
        Family::RpForest,
        Family::Lsh,
        Family::QueryAwareIvf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::BruteForce => "brute-force",
            Family::Ivf => "ivf",
            Family::IvfPq => "ivf-pq",
            Family::BeamGraph => "beam-graph",
            Family::RpForest => "rp-forest",
            Family::Lsh => "lsh",
            Family::QueryAwareIvf => "query-aware-ivf",
        }
    }

    pub fn build_keys(self) -> &'static [&'static str] {
        match self {
            Family::BruteForce => &[],
            Family::Ivf | Family::QueryAwareIvf => &["clusters"],
            Family::IvfPq => &["clusters", "subspaces", "bits"],
            Family::BeamGraph => &["max_degree", "ef_construction"],
            Family::RpForest => &["trees", "leaf_size"],
            Family::Lsh => &["tables", "hash_bits"],
        }
    }

    pub fn query_keys(self) -> &'static [&'static str] {
        match self {
            Family::BruteForce => &[],
            Family::Ivf | Family::QueryAwareIvf => &["nprobe"],
            Family::IvfPq => &["nprobe", "rerank"],
            Family::BeamGraph => &["ef"],
            Family::RpForest => &["votes"],
            Family::Lsh => &["probes"],
        }
    }

    fn tag(self) -> u8 {
        Family::ALL.iter().position(|&f| f == self).unwrap() as u8
    }

    fn from_tag(tag: u8) -> Option<Self> {
        Family::ALL.get(tag as usize).copied()
    }

    /// Rejects keys the family does not understand.
    pub fn check_keys(self, map: &ParamMap, allowed: &[&str]) -> Result<()> {
        match map.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(key) => Err(Error::UnknownParameter {
                family: self.as_str(),
                key: key.clone(),
            }),
            None => Ok(()),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown index family `{s}`")))
    }
}

fn positive(family: Family, map: &ParamMap, key: &str) -> Result<Option<usize>> {
    match map.get(key) {
        None => Ok(None),
        Some(0) => Err(Error::invalid(format!("{family}: `{key}` must be positive"))),
        Some(&v) => Ok(Some(v as usize)),
    }
}

fn required(family: Family, map: &ParamMap, key: &str) -> Result<usize> {
    positive(family, map, key)?
        .ok_or_else(|| Error::invalid(format!("{family}: missing build parameter `{key}`")))
}

/// Search-time knobs. Which fields a family reads is listed by [`Family::query_keys`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueryParams {
    pub nprobe: Option<usize>,
    pub ef: Option<usize>,
    pub rerank: Option<usize>,
    pub votes: Option<usize>,
    pub probes: Option<usize>,
}

impl QueryParams {
    pub fn parse(family: Family, map: &ParamMap) -> Result<Self> {
        family.check_keys(map, family.query_keys())?;
        Ok(Self {
            nprobe: positive(family, map, "nprobe")?,
            ef: positive(family, map, "ef")?,
            rerank: positive(family, map, "rerank")?,
            votes: positive(family, map, "votes")?,
            probes: positive(family, map, "probes")?,
        })
    }

    pub fn nprobe(n: usize) -> Self {
        Self {
            nprobe: Some(n),
            ..Self::default()
        }
    }

    fn need(value: Option<usize>, family: Family, key: &str) -> Result<usize> {
        value.ok_or_else(|| Error::invalid(format!("{family}: missing query parameter `{key}`")))
    }
}

/// Result of one query.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchOutput {
    /// At most `k` neighbors, exact dissimilarities, sorted by (dissimilarity, id).
    pub neighbors: Vec<Neighbor>,
    /// Corpus points scored during the search (exact or quantized).
    pub candidates: usize,
    /// Fewer than `k` neighbors were found.
    pub short: bool,
    /// The query parameters cap achievable recall (e.g. rerank < k).
    pub capped: bool,
}

impl SearchOutput {
    fn new(neighbors: Vec<Neighbor>, candidates: usize, k: usize) -> Self {
        Self {
            short: neighbors.len() < k,
            neighbors,
            candidates,
            capped: false,
        }
    }
}

/// A built index over one corpus and measure. Search never mutates it, so a
/// handle can be shared across threads.
pub struct IndexHandle {
    family: Family,
    build_params: ParamMap,
    seed: u64,
    space: Space,
    inner: Inner,
}

enum Inner {
    BruteForce,
    Ivf(InvertedFile),
    IvfPq(IvfPq),
    Graph(BeamGraph),
    Forest(RpForest),
    Lsh(HyperplaneLsh),
}

impl fmt::Debug for IndexHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IndexHandle")
            .field("family", &self.family)
            .field("build_params", &self.build_params)
            .field("seed", &self.seed)
            .field("corpus", &(self.space.len(), self.space.dim()))
            .finish()
    }
}

impl IndexHandle {
    /// Builds an index of `family` over `space`. `train_queries` is only read
    /// by [`Family::QueryAwareIvf`], which requires it.
    pub fn build(
        family: Family,
        space: Space,
        params: &ParamMap,
        seed: u64,
        train_queries: Option<&DenseMatrix>,
    ) -> Result<Self> {
        family.check_keys(params, family.build_keys())?;
        if family != Family::BruteForce && space.dense().is_none() {
            return Err(Error::Unsupported(format!(
                "{family} on {} data",
                space.data().representation()
            )));
        }
        let p = |key| required(family, params, key);
        let inner = match family {
            Family::BruteForce => Inner::BruteForce,
            Family::Ivf => Inner::Ivf(InvertedFile::build(&space, p("clusters")?, seed)?),
            Family::QueryAwareIvf => {
                let train = train_queries.ok_or_else(|| {
                    Error::invalid("query-aware-ivf needs a training sample of queries")
                })?;
                Inner::Ivf(InvertedFile::build_query_aware(
                    &space,
                    train,
                    p("clusters")?,
                    seed,
                )?)
            }
            Family::IvfPq => {
                let bits = positive(family, params, "bits")?.unwrap_or(8);
                Inner::IvfPq(IvfPq::build(
                    &space,
                    p("clusters")?,
                    p("subspaces")?,
                    bits as u32,
                    seed,
                )?)
            }
            Family::BeamGraph => Inner::Graph(BeamGraph::build(
                &space,
                p("max_degree")?,
                p("ef_construction")?,
                seed,
            )?),
            Family::RpForest => Inner::Forest(RpForest::build(
                &space,
                p("trees")?,
                p("leaf_size")?,
                seed,
            )?),
            Family::Lsh => Inner::Lsh(HyperplaneLsh::build(
                &space,
                p("tables")?,
                params.get("hash_bits").copied().ok_or_else(|| {
                    Error::invalid("lsh: missing build parameter `hash_bits`")
                })? as usize,
                seed,
            )?),
        };
        Ok(Self {
            family,
            build_params: params.clone(),
            seed,
            space,
            inner,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn build_params(&self) -> &ParamMap {
        &self.build_params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    /// Approximate `k` nearest neighbors of `query`.
    pub fn search(&self, query: VectorRef<'_>, k: usize, qp: &QueryParams) -> Result<SearchOutput> {
        if k == 0 {
            return Err(Error::invalid("k must be positive"));
        }
        let scorer = self.space.scorer(query)?;
        let f = self.family;
        match &self.inner {
            Inner::BruteForce => {
                let mut top = TopK::new(k);
                for i in 0..self.space.len() {
                    top.push(scorer.neighbor(i));
                }
                Ok(SearchOutput::new(top.into_sorted(), self.space.len(), k))
            }
            Inner::Ivf(ivf) => {
                let nprobe = QueryParams::need(qp.nprobe, f, "nprobe")?;
                Ok(ivf.search(&self.space, &scorer, k, nprobe))
            }
            Inner::IvfPq(pq) => {
                let nprobe = QueryParams::need(qp.nprobe, f, "nprobe")?;
                let rerank = QueryParams::need(qp.rerank, f, "rerank")?;
                Ok(pq.search(&self.space, &scorer, k, nprobe, rerank))
            }
            Inner::Graph(g) => {
                let ef = QueryParams::need(qp.ef, f, "ef")?;
                if ef < k {
                    return Err(Error::invalid(format!("ef = {ef} is below k = {k}")));
                }
                Ok(g.search(&scorer, k, ef))
            }
            Inner::Forest(t) => {
                let votes = qp.votes.unwrap_or(1);
                t.search(&scorer, k, votes)
            }
            Inner::Lsh(l) => Ok(l.search(&scorer, k, qp.probes)),
        }
    }

    /// Serializes the index structure into the `VIDX` container. The corpus
    /// itself is not stored; a digest of it is, and [`IndexHandle::load`]
    /// checks it.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        match &self.inner {
            Inner::BruteForce => {}
            Inner::Ivf(x) => x.write(&mut payload),
            Inner::IvfPq(x) => x.write(&mut payload),
            Inner::Graph(x) => x.write(&mut payload),
            Inner::Forest(x) => x.write(&mut payload),
            Inner::Lsh(x) => x.write(&mut payload),
        }
        codec::write_container(
            self.family.tag(),
            self.seed,
            &self.build_params,
            &self.space,
            &payload,
        )
    }

    /// Reads a `VIDX` container built over `space`.
    pub fn from_bytes(bytes: &[u8], space: Space) -> Result<Self> {
        let c = codec::read_container(bytes, &space)?;
        let family = Family::from_tag(c.family)
            .ok_or_else(|| Error::invalid(format!("unknown family tag {}", c.family)))?;
        let mut r = c.payload;
        let inner = match family {
            Family::BruteForce => Inner::BruteForce,
            Family::Ivf | Family::QueryAwareIvf => Inner::Ivf(InvertedFile::read(&mut r)?),
            Family::IvfPq => Inner::IvfPq(IvfPq::read(&mut r)?),
            Family::BeamGraph => Inner::Graph(BeamGraph::read(&mut r)?),
            Family::RpForest => Inner::Forest(RpForest::read(&mut r, space.dim())?),
            Family::Lsh => Inner::Lsh(HyperplaneLsh::read(&mut r)?),
        };
        if !r.is_empty() {
            return Err(Error::invalid(format!(
                "{} trailing bytes after index payload",
                r.len()
            )));
        }
        Ok(Self {
            family,
            build_params: c.params,
            seed: c.seed,
            space,
            inner,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path, space: Space) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, space).map_err(|e| match e {
            Error::InvalidParameter(m) => Error::format(path, m),
            other => other,
        })
    }

    /// Inverted-file internals, for diagnostics and tests.
    pub fn inverted_file(&self) -> Option<&InvertedFile> {
        match &self.inner {
            Inner::Ivf(x) => Some(x),
            Inner::IvfPq(x) => Some(x.coarse()),
            _ => None,
        }
    }

    pub fn graph(&self) -> Option<&BeamGraph> {
        match &self.inner {
            Inner::Graph(g) => Some(g),
            _ => None,
        }
    }
}

/// Neighbor ordered by the crate-wide rank order, for heaps.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Ranked(pub Neighbor);

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.cmp_rank(&other.0)
    }
}

/// Keeps the `k` best neighbors seen so far.
pub(crate) struct TopK {
    k: usize,
    heap: BinaryHeap<Ranked>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    pub fn push(&mut self, n: Neighbor) {
        if self.heap.len() < self.k {
            self.heap.push(Ranked(n));
        } else if let Some(mut worst) = self.heap.peek_mut() {
            if Ranked(n) < *worst {
                *worst = Ranked(n);
            }
        }
    }

    pub fn into_sorted(self) -> Vec<Neighbor> {
        self.heap.into_sorted_vec().into_iter().map(|r| r.0).collect()
    }
}

/// Generation-stamped visited set, reused per thread.
pub(crate) struct Visited {
    stamp: u32,
    marks: Vec<u32>,
}

impl Visited {
    fn reset(&mut self, n: usize) {
        if self.marks.len() < n {
            self.marks.resize(n, 0);
        }
        self.stamp = self.stamp.wrapping_add(1);
        if self.stamp == 0 {
            self.marks.iter_mut().for_each(|m| *m = 0);
            self.stamp = 1;
        }
    }

    /// Marks `id`; returns whether it was unvisited.
    #[inline]
    pub fn insert(&mut self, id: u32) -> bool {
        let m = &mut self.marks[id as usize];
        if *m == self.stamp {
            false
        } else {
            *m = self.stamp;
            true
        }
    }
}

thread_local! {
    static VISITED: RefCell<Visited> = const { RefCell::new(Visited { stamp: 0, marks: Vec::new() }) };
}

pub(crate) fn with_visited<R>(n: usize, f: impl FnOnce(&mut Visited) -> R) -> R {
    VISITED.with(|v| match v.try_borrow_mut() {
        Ok(mut v) => {
            v.reset(n);
            f(&mut v)
        }
        // nested use on the same thread gets a private set
        Err(_) => {
            let mut own = Visited {
                stamp: 0,
                marks: Vec::new(),
            };
            own.reset(n);
            f(&mut own)
        }
    })
}

/// Seeded subsample of at most `max_rows` rows, in ascending row order.
pub(crate) fn training_sample(matrix: &DenseMatrix, max_rows: usize, seed: u64) -> DenseMatrix {
    use rand::SeedableRng;
    if matrix.rows() <= max_rows {
        return matrix.clone();
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5A3B_1E00_0001);
    let mut ids = rand::seq::index::sample(&mut rng, matrix.rows(), max_rows).into_vec();
    ids.sort_unstable();
    matrix.select(&ids)
}
