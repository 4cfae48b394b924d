//! Recall, throughput, relative contrast, distribution-shift diagnostics and
//! Pareto frontiers.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::GroundTruthRow;
use crate::vector::{DenseMatrix, Measure, Neighbor, Space, VectorRef, VectorSet};

/// Absolute slack on the ground-truth threshold when counting hits.
pub const RECALL_EPSILON: f32 = 1e-6;

/// Fraction of the `k` answer slots holding a true neighbor. A returned
/// point counts when its dissimilarity is within the ground-truth threshold,
/// so ties beyond the stored ids are not penalized. Missing slots are misses.
pub fn recall(returned: &[Neighbor], row: GroundTruthRow<'_>, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let hits = returned
        .iter()
        .take(k)
        .filter(|n| n.dissimilarity <= row.threshold + RECALL_EPSILON)
        .count();
    hits as f64 / k as f64
}

/// Queries per second over individually timed queries.
pub fn qps(latencies: &[f64]) -> Result<f64> {
    if latencies.is_empty() {
        return Err(Error::invalid("qps of an empty latency list"));
    }
    let total: f64 = latencies.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("total latency must be positive"));
    }
    Ok(latencies.len() as f64 / total)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Mean corpus dissimilarity over the k-th nearest dissimilarity, or `None`
/// when either is not positive.
pub fn relative_contrast(space: &Space, query: VectorRef<'_>, k: usize) -> Result<Option<f64>> {
    if k == 0 || k > space.len() {
        return Err(Error::invalid(format!("k = {k} outside 1..={}", space.len())));
    }
    let scorer = space.scorer(query)?;
    let mut all: Vec<f32> = (0..space.len()).map(|i| scorer.score(i)).collect();
    let total: f64 = all.iter().map(|&d| d as f64).sum();
    let avg = total / all.len() as f64;
    let (_, kth, _) = all.select_nth_unstable_by(k - 1, f32::total_cmp);
    let kth = *kth as f64;
    Ok((avg > 0.0 && kth > 0.0).then(|| avg / kth))
}

/// Relative contrast of every query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcProfile {
    pub k: usize,
    /// Measure the ratios were computed under.
    pub measure_used: Measure,
    /// One entry per query; `None` where the ratio is undefined.
    pub rc: Vec<Option<f64>>,
}

impl RcProfile {
    pub fn defined(&self) -> usize {
        self.rc.iter().flatten().count()
    }

    pub fn median(&self) -> Option<f64> {
        let mut v: Vec<f64> = self.rc.iter().flatten().copied().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        Some(if v.len() % 2 == 1 {
            v[m]
        } else {
            (v[m - 1] + v[m]) / 2.0
        })
    }
}

/// Relative contrast of each query. Under negative inner product both sides
/// are L2-normalized and scored with cosine dissimilarity, because raw inner
/// products can be negative.
pub fn rc_profile(space: &Space, queries: &VectorSet, k: usize) -> Result<RcProfile> {
    let (space, queries, measure_used) = if space.measure() == Measure::NegInnerProduct {
        let corpus = space.dense().expect("inner product implies dense").normalized()?;
        let q = match queries {
            VectorSet::Dense(m) => VectorSet::Dense(m.normalized()?),
            other => other.clone(),
        };
        let s = Space::new(Arc::new(VectorSet::Dense(corpus)), Measure::Cosine)?;
        (s, std::borrow::Cow::Owned(q), Measure::Cosine)
    } else {
        (
            space.clone(),
            std::borrow::Cow::Borrowed(queries),
            space.measure(),
        )
    };
    let rc = (0..queries.rows())
        .into_par_iter()
        .map(|q| relative_contrast(&space, queries.get(q), k))
        .collect::<Result<Vec<_>>>()?;
    Ok(RcProfile {
        k,
        measure_used,
        rc,
    })
}

/// The `m` lowest-contrast (hardest) and `m` highest-contrast (easiest)
/// query ids among those with a defined ratio. Ties order by id, so the
/// hardest take the lowest ids and the easiest the highest.
pub fn difficulty_split(profile: &RcProfile, m: usize) -> Result<(Vec<u32>, Vec<u32>)> {
    let mut scored: Vec<(f64, u32)> = profile
        .rc
        .iter()
        .enumerate()
        .filter_map(|(i, rc)| rc.map(|r| (r, i as u32)))
        .collect();
    if scored.len() < 2 * m {
        return Err(Error::invalid(format!(
            "difficulty split of {m} needs {} defined ratios, found {}",
            2 * m,
            scored.len()
        )));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let hardest = scored[..m].iter().map(|p| p.1).collect();
    let easiest = scored[scored.len() - m..].iter().rev().map(|p| p.1).collect();
    Ok((hardest, easiest))
}

/// Writes `query_id,rc,split`; `split` is `hardest`, `easiest` or empty and
/// undefined ratios are written as an empty field.
pub fn write_rc_csv(
    out: impl Write,
    profile: &RcProfile,
    hardest: &[u32],
    easiest: &[u32],
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["query_id", "rc", "split"])?;
    for (i, rc) in profile.rc.iter().enumerate() {
        let id = i as u32;
        let split = if hardest.contains(&id) {
            "hardest"
        } else if easiest.contains(&id) {
            "easiest"
        } else {
            ""
        };
        let rc = rc.map(|r| r.to_string()).unwrap_or_default();
        w.write_record([id.to_string(), rc, split.to_string()])?;
    }
    w.flush()
}

/// Rows fitted at most by [`MahalanobisModel::fit`].
pub const MAHALANOBIS_MAX_ROWS: usize = 100_000;

/// Gaussian fit used to score how far points sit from a sample's bulk.
#[derive(Debug, Clone)]
pub struct MahalanobisModel {
    mean: DVector<f64>,
    /// Lower Cholesky factor of the regularized covariance.
    factor: DMatrix<f64>,
    sample_size: usize,
}

impl MahalanobisModel {
    /// Fits mean and covariance on at most [`MAHALANOBIS_MAX_ROWS`] rows of
    /// `sample` (a seeded subsample when larger). The covariance gets
    /// `1e-6 * trace / d` added to its diagonal.
    pub fn fit(sample: &DenseMatrix, seed: u64) -> Result<Self> {
        let rows: Vec<usize> = if sample.rows() > MAHALANOBIS_MAX_ROWS {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ids =
                rand::seq::index::sample(&mut rng, sample.rows(), MAHALANOBIS_MAX_ROWS).into_vec();
            ids.sort_unstable();
            ids
        } else {
            (0..sample.rows()).collect()
        };
        let d = sample.dim();
        if rows.len() < 2 || d == 0 {
            return Err(Error::invalid("mahalanobis fit needs at least 2 rows"));
        }
        let n = rows.len() as f64;
        let mut mean = DVector::<f64>::zeros(d);
        for &i in &rows {
            for (m, &x) in mean.iter_mut().zip(sample.row(i)) {
                *m += x as f64;
            }
        }
        mean /= n;
        let mut cov = DMatrix::<f64>::zeros(d, d);
        let mut centered = DVector::<f64>::zeros(d);
        for &i in &rows {
            for (j, &x) in sample.row(i).iter().enumerate() {
                centered[j] = x as f64 - mean[j];
            }
            cov.syger(1.0, &centered, &centered, 1.0);
        }
        cov.fill_upper_triangle_with_lower_triangle();
        cov /= n - 1.0;
        let eps = 1e-6 * cov.trace() / d as f64;
        let eps = if eps > 0.0 { eps } else { 1e-12 };
        for j in 0..d {
            cov[(j, j)] += eps;
        }
        let chol = cov
            .cholesky()
            .ok_or_else(|| Error::Numerical("regularized covariance is not positive definite".into()))?;
        Ok(Self {
            mean,
            factor: chol.l(),
            sample_size: rows.len(),
        })
    }

    /// Model with identity covariance at `mean`.
    pub fn identity(mean: &[f32]) -> Self {
        let d = mean.len();
        Self {
            mean: DVector::from_iterator(d, mean.iter().map(|&x| x as f64)),
            factor: DMatrix::identity(d, d),
            sample_size: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample_size(&self) -> usize {
        self.sample_size
    }

    pub fn mean(&self) -> Vec<f64> {
        self.mean.iter().copied().collect()
    }

    pub fn score(&self, x: &[f32]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let diff = DVector::from_iterator(x.len(), x.iter().zip(self.mean.iter()).map(|(&a, m)| a as f64 - m));
        let y = self
            .factor
            .solve_lower_triangular(&diff)
            .ok_or_else(|| Error::Numerical("singular covariance factor".into()))?;
        Ok(y.norm())
    }

    pub fn score_all(&self, points: &DenseMatrix) -> Result<Vec<f64>> {
        points.iter().map(|p| self.score(p)).collect()
    }
}

/// Projection of `project` onto the top `components` principal axes of
/// `fit`. Each axis is signed so its largest-magnitude loading is positive.
pub fn pca_project(fit: &DenseMatrix, project: &DenseMatrix, components: usize) -> Result<DenseMatrix> {
    let d = fit.dim();
    if d < 2 || components > d || components == 0 {
        return Err(Error::invalid(format!(
            "cannot take {components} principal components in dimension {d}"
        )));
    }
    if fit.rows() < 2 {
        return Err(Error::invalid("pca needs at least 2 fit points"));
    }
    if project.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: project.dim(),
        });
    }
    let n = fit.rows() as f64;
    let data = DMatrix::from_row_iterator(fit.rows(), d, fit.as_slice().iter().map(|&x| x as f64));
    let mean = data.row_mean();
    let mut centered = data;
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.transpose() * &centered / (n - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axes: Vec<Vec<f64>> = order[..components]
        .iter()
        .map(|&c| {
            let v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            let lead = v
                .iter()
                .copied()
                .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
            if lead < 0.0 {
                v.into_iter().map(|x| -x).collect()
            } else {
                v
            }
        })
        .collect();
    let mut out = DenseMatrix::with_capacity(components, project.rows());
    let mut buf = vec![0f32; components];
    for row in project.iter() {
        for (o, axis) in buf.iter_mut().zip(&axes) {
            *o = row
                .iter()
                .zip(axis)
                .zip(mean.iter())
                .map(|((&x, a), m)| (x as f64 - m) * a)
                .sum::<f64>() as f32;
        }
        out.push(&buf)?;
    }
    Ok(out)
}

/// One benchmarked configuration on the recall/throughput plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint<C> {
    pub recall: f64,
    pub qps: f64,
    pub config: C,
}

impl<C> ParetoPoint<C> {
    pub fn new(recall: f64, qps: f64, config: C) -> Self {
        Self {
            recall,
            qps,
            config,
        }
    }

    /// At least as good on both axes and strictly better on one.
    pub fn dominates<D>(&self, other: &ParetoPoint<D>) -> bool {
        self.recall >= other.recall
            && self.qps >= other.qps
            && (self.recall > other.recall || self.qps > other.qps)
    }
}

/// Non-dominated points, sorted by recall ascending (ties by qps ascending,
/// then input order).
pub fn pareto_frontier<C: Clone>(points: &[ParetoPoint<C>]) -> Vec<ParetoPoint<C>> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&points[a], &points[b]);
        pb.recall
            .total_cmp(&pa.recall)
            .then(pb.qps.total_cmp(&pa.qps))
            .then(a.cmp(&b))
    });
    let mut keep = Vec::new();
    // best qps among points with strictly higher recall than the current group
    let mut best_above = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        let recall = points[order[i]].recall;
        let mut j = i;
        while j < order.len() && points[order[j]].recall == recall {
            j += 1;
        }
        let group_max = points[order[i]].qps;
        if group_max > best_above {
            for &p in &order[i..j] {
                if points[p].qps == group_max {
                    keep.push(p);
                }
            }
        }
        best_above = best_above.max(group_max);
        i = j;
    }
    keep.sort_by(|&a, &b| {
        let (pa, pb) = (&points[a], &points[b]);
        pa.recall
            .total_cmp(&pb.recall)
            .then(pa.qps.total_cmp(&pb.qps))
            .then(a.cmp(&b))
    });
    keep.into_iter().map(|p| points[p].clone()).collect()
}

/// Fastest point with recall at least `threshold`; ties go to the higher
/// recall, then the earlier point.
pub fn operating_point<C>(points: &[ParetoPoint<C>], threshold: f64) -> Option<&ParetoPoint<C>> {
    points
        .iter()
        .filter(|p| p.recall >= threshold)
        .fold(None, |best: Option<&ParetoPoint<C>>, p| match best {
            Some(b) if (b.qps, b.recall) >= (p.qps, p.recall) => Some(b),
            _ => Some(p),
        })
}
