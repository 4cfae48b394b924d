//! Inverted file: the corpus is partitioned around centroids and a query
//! scans only the lists of its `nprobe` closest centroids.

use super::codec::{get_f32s, get_lists, get_u64, put_f32s, put_lists, put_u64};
use super::kmeans::kmeans;
use super::{training_sample, SearchOutput, TopK};
use crate::error::{Error, Result};
use crate::vector::{dot, l2_squared, norm, DenseMatrix, Measure, QueryScorer, Space, MIN_NORM};

/// k-means sees at most this many points per centroid.
pub const TRAIN_POINTS_PER_CENTROID: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedFile {
    centroids: DenseMatrix,
    centroid_norms: Vec<f32>,
    lists: Vec<Vec<u32>>,
}

impl InvertedFile {
    /// Centroids from k-means over (a sample of) the corpus; every point
    /// joins the list of its Euclidean-nearest centroid.
    pub fn build(space: &Space, clusters: usize, seed: u64) -> Result<Self> {
        let corpus = dense(space)?;
        Self::train(corpus, clusters, seed)
    }

    pub(crate) fn train(corpus: &DenseMatrix, clusters: usize, seed: u64) -> Result<Self> {
        check_clusters(clusters, corpus.rows())?;
        let sample = training_sample(corpus, clusters * TRAIN_POINTS_PER_CENTROID, seed);
        let km = kmeans(&sample, clusters, seed)?;
        Ok(Self::assign(corpus, km.centroids, Measure::Euclidean))
    }

    /// Centroids from k-means over a sample of the query distribution; every
    /// corpus point joins the list of the centroid it is closest to under the
    /// corpus measure.
    pub fn build_query_aware(
        space: &Space,
        train_queries: &DenseMatrix,
        clusters: usize,
        seed: u64,
    ) -> Result<Self> {
        let corpus = dense(space)?;
        if train_queries.dim() != corpus.dim() {
            return Err(Error::DimensionMismatch {
                expected: corpus.dim(),
                actual: train_queries.dim(),
            });
        }
        if train_queries.rows() == 0 {
            return Err(Error::invalid("empty training query sample"));
        }
        check_clusters(clusters, corpus.rows())?;
        let sample = training_sample(train_queries, clusters * TRAIN_POINTS_PER_CENTROID, seed);
        let km = kmeans(&sample, clusters, seed)?;
        Ok(Self::assign(corpus, km.centroids, space.measure()))
    }

    fn assign(corpus: &DenseMatrix, centroids: DenseMatrix, measure: Measure) -> Self {
        let centroid_norms: Vec<f32> = centroids.iter().map(norm).collect();
        let mut ivf = Self {
            lists: vec![Vec::new(); centroids.rows()],
            centroids,
            centroid_norms,
        };
        for (i, row) in corpus.iter().enumerate() {
            let c = ivf.nearest(row, measure);
            ivf.lists[c].push(i as u32);
        }
        ivf
    }

    #[inline]
    fn centroid_score(&self, c: usize, v: &[f32], v_norm: f32, measure: Measure) -> f32 {
        let cen = self.centroids.row(c);
        match measure {
            Measure::Euclidean => l2_squared(v, cen),
            Measure::NegInnerProduct => -dot(v, cen),
            Measure::Cosine => {
                let n = self.centroid_norms[c];
                if n < MIN_NORM || v_norm < MIN_NORM {
                    1.0
                } else {
                    1.0 - dot(v, cen) / (v_norm * n)
                }
            }
            Measure::Hamming => unreachable!("dense only"),
        }
    }

    fn nearest(&self, v: &[f32], measure: Measure) -> usize {
        let v_norm = if measure == Measure::Cosine { norm(v) } else { 0.0 };
        let mut best = (0, f32::INFINITY);
        for c in 0..self.centroids.rows() {
            let s = self.centroid_score(c, v, v_norm, measure);
            if s < best.1 {
                best = (c, s);
            }
        }
        best.0
    }

    /// The `nprobe` closest lists to `v` under `measure`, best first (ties to
    /// the lowest list). `nprobe` is clamped to the list count.
    pub fn probe(&self, v: &[f32], measure: Measure, nprobe: usize) -> Vec<usize> {
        let v_norm = if measure == Measure::Cosine { norm(v) } else { 0.0 };
        let mut scored: Vec<(f32, usize)> = (0..self.centroids.rows())
            .map(|c| (self.centroid_score(c, v, v_norm, measure), c))
            .collect();
        let nprobe = nprobe.min(scored.len());
        let by = |a: &(f32, usize), b: &(f32, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if nprobe < scored.len() {
            scored.select_nth_unstable_by(nprobe, by);
            scored.truncate(nprobe);
        }
        scored.sort_unstable_by(by);
        scored.into_iter().map(|(_, c)| c).collect()
    }

    pub(crate) fn search(
        &self,
        space: &Space,
        scorer: &QueryScorer<'_>,
        k: usize,
        nprobe: usize,
    ) -> SearchOutput {
        let q = scorer.dense_query().expect("dense query");
        let mut top = TopK::new(k);
        let mut scanned = 0;
        for c in self.probe(q, space.measure(), nprobe) {
            for &id in &self.lists[c] {
                top.push(scorer.neighbor(id as usize));
            }
            scanned += self.lists[c].len();
        }
        SearchOutput::new(top.into_sorted(), scanned, k)
    }

    pub fn lists(&self) -> &[Vec<u32>] {
        &self.lists
    }

    pub fn list_sizes(&self) -> Vec<usize> {
        self.lists.iter().map(Vec::len).collect()
    }

    pub fn centroids(&self) -> &DenseMatrix {
        &self.centroids
    }

    pub(crate) fn write(&self, w: &mut Vec<u8>) {
        put_u64(w, self.centroids.dim() as u64);
        put_f32s(w, self.centroids.as_slice());
        put_lists(w, &self.lists);
    }

    pub(crate) fn read(r: &mut &[u8]) -> Result<Self> {
        let dim = get_u64(r)? as usize;
        let centroids = DenseMatrix::from_vec(dim, get_f32s(r)?)?;
        let lists = get_lists(r)?;
        if lists.len() != centroids.rows() {
            return Err(Error::invalid("list count differs from centroid count"));
        }
        Ok(Self {
            centroid_norms: centroids.iter().map(norm).collect(),
            centroids,
            lists,
        })
    }
}

fn dense(space: &Space) -> Result<&DenseMatrix> {
    space
        .dense()
        .ok_or_else(|| Error::Unsupported("inverted file over non-dense data".into()))
}

fn check_clusters(clusters: usize, n: usize) -> Result<()> {
    if clusters == 0 || clusters > n {
        return Err(Error::invalid(format!(
            "{clusters} clusters for a corpus of {n} points"
        )));
    }
    Ok(())
}
