//! Synthetic workloads: an in-distribution Gaussian mixture, a mixture whose
//! queries come from displaced clusters, and an inner-product workload with
//! mean-shifted anisotropic queries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{split_queries, Dataset, DEFAULT_TEST_QUERIES, DEFAULT_TRAIN_QUERIES};
use crate::error::{Error, Result};
use crate::vector::{DenseMatrix, Measure, VectorSet};

/// Independent random streams derived from one seed.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng) -> f32 {
    StandardNormal.sample(rng)
}

/// Cluster means drawn from `N(0, sigma_b^2 I)`.
fn cluster_means(rng: &mut ChaCha8Rng, clusters: usize, d: usize, sigma_b: f32) -> DenseMatrix {
    let data = (0..clusters * d).map(|_| sigma_b * gaussian(rng)).collect();
    DenseMatrix::from_vec(d, data).expect("shape")
}

/// `n` points: a uniformly chosen mean plus `N(0, sigma_w^2 I)` noise.
fn mixture_points(rng: &mut ChaCha8Rng, means: &DenseMatrix, n: usize, sigma_w: f32) -> DenseMatrix {
    let d = means.dim();
    let mut out = DenseMatrix::with_capacity(d, n);
    let mut row = vec![0f32; d];
    for _ in 0..n {
        let c = rng.random_range(0..means.rows());
        for (x, &m) in row.iter_mut().zip(means.row(c)) {
            *x = m + sigma_w * gaussian(rng);
        }
        out.push(&row).expect("shape");
    }
    out
}

fn maybe_normalize(m: DenseMatrix, normalize: bool) -> Result<DenseMatrix> {
    if normalize {
        m.normalized()
    } else {
        Ok(m)
    }
}

fn check_mixture(n: usize, d: usize, clusters: usize, sigma_w: f32, sigma_b: f32) -> Result<()> {
    if n == 0 || d == 0 || clusters == 0 {
        return Err(Error::invalid("n, d and clusters must be positive"));
    }
    if !(sigma_w > 0.0 && sigma_w.is_finite()) || !(sigma_b >= 0.0 && sigma_b.is_finite()) {
        return Err(Error::invalid("spread must be positive and separation nonnegative"));
    }
    Ok(())
}

/// Gaussian mixture whose test queries are held out from the same sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdGaussian {
    /// Corpus size after holding out the queries.
    pub n: usize,
    pub d: usize,
    pub clusters: usize,
    /// Within-cluster standard deviation.
    pub sigma_w: f32,
    /// Standard deviation of the cluster means.
    pub sigma_b: f32,
    pub queries: usize,
    pub normalize: bool,
    pub measure: Measure,
    pub seed: u64,
}

impl IdGaussian {
    pub fn new(n: usize, d: usize, seed: u64) -> Self {
        Self {
            n,
            d,
            clusters: 32,
            sigma_w: 1.0,
            sigma_b: 1.0,
            queries: DEFAULT_TEST_QUERIES,
            normalize: false,
            measure: Measure::Euclidean,
            seed,
        }
    }
}

/// Draws `n + queries` points, normalizes them if requested, then holds out
/// `queries` rows with [`split_queries`].
pub fn generate_id_gaussian(p: &IdGaussian) -> Result<Dataset> {
    check_mixture(p.n, p.d, p.clusters, p.sigma_w, p.sigma_b)?;
    if p.measure.is_binary() {
        return Err(Error::invalid("generate dense data, then binarize"));
    }
    let mut rng = stream(p.seed, 0);
    let means = cluster_means(&mut rng, p.clusters, p.d, p.sigma_b);
    let all = mixture_points(&mut rng, &means, p.n + p.queries, p.sigma_w);
    let all = VectorSet::Dense(maybe_normalize(all, p.normalize)?);
    let (corpus, test) = split_queries(&all, p.queries, p.seed ^ 0x51_17)?;
    Ok(Dataset {
        name: format!("id-gaussian-{}x{}", p.n, p.d),
        corpus,
        test,
        train: None,
        measure: p.measure,
        normalized: p.normalize,
        seed: p.seed,
        generator: serde_json::json!({
            "kind": "id-gaussian",
            "params": p,
            "split_order": "normalize-then-split",
        }),
    })
}

/// Mixture corpus with queries drawn from the same clusters after each mean
/// moves by `shift * sigma_b * z`, `z ~ N(0, I)` drawn per cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodShifted {
    pub n: usize,
    pub d: usize,
    pub clusters: usize,
    pub sigma_w: f32,
    pub sigma_b: f32,
    pub shift: f32,
    pub test: usize,
    pub train: usize,
    pub normalize: bool,
    pub measure: Measure,
    pub seed: u64,
}

impl OodShifted {
    pub fn new(n: usize, d: usize, shift: f32, seed: u64) -> Self {
        Self {
            n,
            d,
            clusters: 32,
            sigma_w: 1.0,
            sigma_b: 1.0,
            shift,
            test: DEFAULT_TEST_QUERIES,
            train: DEFAULT_TRAIN_QUERIES,
            normalize: false,
            measure: Measure::Euclidean,
            seed,
        }
    }
}

/// Corpus, shift directions and queries use separate streams, so datasets
/// that differ only in `shift` share the corpus, and `shift = 0` yields
/// in-distribution queries.
pub fn generate_ood_shifted(p: &OodShifted) -> Result<Dataset> {
    check_mixture(p.n, p.d, p.clusters, p.sigma_w, p.sigma_b)?;
    if !(p.shift >= 0.0 && p.shift.is_finite()) {
        return Err(Error::invalid("shift must be nonnegative"));
    }
    if p.test == 0 || p.measure.is_binary() {
        return Err(Error::invalid("need dense test queries"));
    }
    let mut corpus_rng = stream(p.seed, 0);
    let means = cluster_means(&mut corpus_rng, p.clusters, p.d, p.sigma_b);
    let corpus = mixture_points(&mut corpus_rng, &means, p.n, p.sigma_w);

    let mut shift_rng = stream(p.seed, 1);
    let mut shifted = means.clone();
    for c in 0..shifted.rows() {
        for x in shifted.row_mut(c) {
            *x += p.shift * p.sigma_b * gaussian(&mut shift_rng);
        }
    }
    let test = mixture_points(&mut stream(p.seed, 2), &shifted, p.test, p.sigma_w);
    let train = mixture_points(&mut stream(p.seed, 3), &shifted, p.train, p.sigma_w);
    Ok(Dataset {
        name: format!("ood-shifted-{}x{}-s{}", p.n, p.d, p.shift),
        corpus: VectorSet::Dense(maybe_normalize(corpus, p.normalize)?),
        test: VectorSet::Dense(maybe_normalize(test, p.normalize)?),
        train: Some(VectorSet::Dense(maybe_normalize(train, p.normalize)?)),
        measure: p.measure,
        normalized: p.normalize,
        seed: p.seed,
        generator: serde_json::json!({ "kind": "ood-shifted", "params": p }),
    })
}

/// Inner-product workload: keys `N(0, I)` with a log-normal norm factor per
/// row; queries share a mean of norm `query_mean_norm` and have per-axis
/// standard deviations falling geometrically from `query_std_max` to
/// `query_std_min`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodMips {
    pub n: usize,
    pub d: usize,
    pub query_mean_norm: f32,
    /// Log-space standard deviation of the per-key norm factor.
    pub norm_jitter: f32,
    pub query_std_max: f32,
    pub query_std_min: f32,
    pub test: usize,
    pub train: usize,
    pub seed: u64,
}

impl OodMips {
    pub fn new(n: usize, d: usize, query_mean_norm: f32, seed: u64) -> Self {
        Self {
            n,
            d,
            query_mean_norm,
            norm_jitter: 0.25,
            query_std_max: 2.0,
            query_std_min: 0.05,
            test: DEFAULT_TEST_QUERIES,
            train: DEFAULT_TRAIN_QUERIES,
            seed,
        }
    }
}

pub fn generate_ood_mips(p: &OodMips) -> Result<Dataset> {
    if p.d < 2 || p.n == 0 || p.test == 0 {
        return Err(Error::invalid("ood-mips needs d >= 2 and nonempty corpus and queries"));
    }
    if !(p.query_mean_norm >= 0.0) || !(p.norm_jitter >= 0.0) || !(p.query_std_min > 0.0 && p.query_std_max >= p.query_std_min) {
        return Err(Error::invalid("invalid ood-mips parameters"));
    }
    let d = p.d;
    let mut key_rng = stream(p.seed, 0);
    let jitter = LogNormal::new(0.0f32, p.norm_jitter).map_err(|e| Error::invalid(e.to_string()))?;
    let mut corpus = DenseMatrix::with_capacity(d, p.n);
    let mut row = vec![0f32; d];
    for _ in 0..p.n {
        let s = jitter.sample(&mut key_rng);
        row.iter_mut().for_each(|x| *x = s * gaussian(&mut key_rng));
        corpus.push(&row)?;
    }

    let mut shape_rng = stream(p.seed, 1);
    let dir: Vec<f32> = (0..d).map(|_| gaussian(&mut shape_rng)).collect();
    let dir_norm = crate::vector::norm(&dir);
    let mean: Vec<f32> = dir.iter().map(|x| x / dir_norm * p.query_mean_norm).collect();
    let ratio = p.query_std_min / p.query_std_max;
    let stds: Vec<f32> = (0..d)
        .map(|j| p.query_std_max * ratio.powf(j as f32 / (d - 1) as f32))
        .collect();
    let queries = |rng: &mut ChaCha8Rng, count: usize| -> Result<DenseMatrix> {
        let mut out = DenseMatrix::with_capacity(d, count);
        let mut row = vec![0f32; d];
        for _ in 0..count {
            for ((x, m), s) in row.iter_mut().zip(&mean).zip(&stds) {
                *x = m + s * gaussian(rng);
            }
            out.push(&row)?;
        }
        Ok(out)
    };
    let test = queries(&mut stream(p.seed, 2), p.test)?;
    let train = queries(&mut stream(p.seed, 3), p.train)?;
    Ok(Dataset {
        name: format!("ood-mips-{}x{}", p.n, p.d),
        corpus: VectorSet::Dense(corpus),
        test: VectorSet::Dense(test),
        train: Some(VectorSet::Dense(train)),
        measure: Measure::NegInnerProduct,
        normalized: false,
        seed: p.seed,
        generator: serde_json::json!({ "kind": "ood-mips", "params": p }),
    })
}
