//! Seeded k-means: k-means++ initialisation followed by Lloyd iterations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::vector::{l2_squared, DenseMatrix};

pub const MAX_ITERATIONS: usize = 25;
pub const RELATIVE_TOLERANCE: f64 = 1e-4;

/// Result of a k-means run.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroids {
    pub centroids: DenseMatrix,
    /// Cluster of every input point from the final assignment pass.
    pub assignments: Vec<u32>,
    pub members: Vec<Vec<u32>>,
    pub inertia: f64,
    pub iterations: usize,
}

impl Centroids {
    pub fn len(&self) -> usize {
        self.centroids.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Index of the nearest row of `centroids` to `point` (ties to the lowest index).
#[inline]
pub fn nearest_centroid(centroids: &DenseMatrix, point: &[f32]) -> (usize, f32) {
    let mut best = (0usize, f32::INFINITY);
    for (c, row) in centroids.iter().enumerate() {
        let d = l2_squared(point, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Clusters `points` into `clusters` groups.
///
/// Iterates until the relative inertia improvement drops below
/// [`RELATIVE_TOLERANCE`] or [`MAX_ITERATIONS`] updates have run. A cluster
/// that ends up empty takes over the point of the largest cluster that lies
/// farthest from its centroid.
pub fn kmeans(points: &DenseMatrix, clusters: usize, seed: u64) -> Result<Centroids> {
    let n = points.rows();
    if clusters == 0 {
        return Err(Error::invalid("k-means needs at least one cluster"));
    }
    if clusters > n {
        return Err(Error::invalid(format!(
            "k-means with {clusters} clusters over {n} points"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, clusters, &mut rng);

    let mut assignments = vec![0u32; n];
    let mut point_dists = vec![0f32; n];
    let mut prev_inertia = f64::INFINITY;
    let mut iterations = 0;
    let inertia = loop {
        assign(points, &centroids, &mut assignments, &mut point_dists);
        repair_empty(points, &mut centroids, &mut assignments, &mut point_dists);
        let inertia: f64 = point_dists.iter().map(|&d| d as f64).sum();
        let converged = inertia == 0.0
            || (prev_inertia.is_finite()
                && (prev_inertia - inertia) / prev_inertia < RELATIVE_TOLERANCE);
        if converged || iterations == MAX_ITERATIONS {
            break inertia;
        }
        prev_inertia = inertia;
        update_means(points, &mut centroids, &assignments);
        iterations += 1;
    };

    let mut members = vec![Vec::new(); clusters];
    for (i, &c) in assignments.iter().enumerate() {
        members[c as usize].push(i as u32);
    }
    Ok(Centroids {
        centroids,
        assignments,
        members,
        inertia,
        iterations,
    })
}

fn plus_plus_init(points: &DenseMatrix, clusters: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let n = points.rows();
    let mut out = DenseMatrix::with_capacity(points.dim(), clusters);
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    out.push(points.row(first)).expect("row of the input");
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| l2_squared(p, points.row(first)) as f64)
        .collect();

    while out.rows() < clusters {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave the target just past the last positive weight
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // every remaining point coincides with a centroid
            chosen.iter().position(|&c| !c).unwrap()
        };
        chosen[pick] = true;
        out.push(points.row(pick)).expect("row of the input");
        let c = points.row(pick);
        for (i, p) in points.iter().enumerate() {
            let d = l2_squared(p, c) as f64;
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    out
}

fn assign(points: &DenseMatrix, centroids: &DenseMatrix, out: &mut [u32], dists: &mut [f32]) {
    for (i, p) in points.iter().enumerate() {
        let (c, d) = nearest_centroid(centroids, p);
        out[i] = c as u32;
        dists[i] = d;
    }
}

fn repair_empty(
    points: &DenseMatrix,
    centroids: &mut DenseMatrix,
    assignments: &mut [u32],
    dists: &mut [f32],
) {
    let k = centroids.rows();
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a as usize] += 1;
    }
    while let Some(empty) = sizes.iter().position(|&s| s == 0) {
        let largest = (0..k).max_by_key(|&c| (sizes[c], std::cmp::Reverse(c))).unwrap();
        let mut far = None::<(usize, f32)>;
        for (i, &a) in assignments.iter().enumerate() {
            if a as usize == largest && far.is_none_or(|(_, d)| dists[i] > d) {
                far = Some((i, dists[i]));
            }
        }
        let (p, _) = far.expect("largest cluster has members");
        centroids.row_mut(empty).copy_from_slice(points.row(p));
        assignments[p] = empty as u32;
        dists[p] = 0.0;
        sizes[largest] -= 1;
        sizes[empty] += 1;
    }
}

fn update_means(points: &DenseMatrix, centroids: &mut DenseMatrix, assignments: &[u32]) {
    let (k, dim) = (centroids.rows(), centroids.dim());
    let mut sums = vec![0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        let a = a as usize;
        counts[a] += 1;
        for (s, &v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(p) {
            *s += v as f64;
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            continue;
        }
        let inv = 1.0 / counts[c] as f64;
        for (dst, s) in centroids
            .row_mut(c)
            .iter_mut()
            .zip(&sums[c * dim..(c + 1) * dim])
        {
            *dst = (s * inv) as f32;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn one_cluster_per_distinct_point() {
        let pts = DenseMatrix::from_rows(&[[0.0f32, 0.0], [5.0, 1.0], [-3.0, 2.0], [1.0, 9.0]])
            .unwrap();
        let km = kmeans(&pts, 4, 11).unwrap();
        assert_eq!(km.inertia, 0.0);
        let mut cs: Vec<Vec<f32>> = km.centroids.iter().map(|r| r.to_vec()).collect();
        let mut ps: Vec<Vec<f32>> = pts.iter().map(|r| r.to_vec()).collect();
        cs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(cs, ps);
    }

    #[test]
    fn separated_blobs_recover_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0f32, 0.3).unwrap();
        let mut pts = DenseMatrix::new(2);
        let centers = [[-10.0f32, 0.0], [10.0, 5.0]];
        for i in 0..400 {
            let c = centers[i % 2];
            pts.push(&[c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)])
                .unwrap();
        }
        // sample means computed independently of the clustering
        let mut means = [[0f64; 2]; 2];
        for (i, p) in pts.iter().enumerate() {
            means[i % 2][0] += p[0] as f64 / 200.0;
            means[i % 2][1] += p[1] as f64 / 200.0;
        }
        let km = kmeans(&pts, 2, 1).unwrap();
        for m in means {
            let close = km.centroids.iter().any(|c| {
                ((c[0] as f64 - m[0]).powi(2) + (c[1] as f64 - m[1]).powi(2)).sqrt() < 0.1
            });
            assert!(close, "no centroid near {m:?}");
        }
        assert!(km.members.iter().all(|m| m.len() == 200));
    }

    #[test]
    fn deterministic_under_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f32> = (0..300 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pts = DenseMatrix::from_vec(4, data).unwrap();
        let a = kmeans(&pts, 7, 42).unwrap();
        let b = kmeans(&pts, 7, 42).unwrap();
        assert_eq!(a, b);
        let bits = |c: &Centroids| c.centroids.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn duplicates_never_leave_empty_clusters() {
        let pts = DenseMatrix::from_rows(&[[1.0f32], [1.0], [1.0], [2.0], [2.0]]).unwrap();
        let km = kmeans(&pts, 4, 3).unwrap();
        assert!(km.members.iter().all(|m| !m.is_empty()));
        let total: usize = km.members.iter().map(Vec::len).sum();
        assert_eq!(total, 5);
    }

    #[test]
    fn too_many_clusters() {
        let pts = DenseMatrix::from_rows(&[[1.0f32], [2.0]]).unwrap();
        assert!(kmeans(&pts, 3, 0).is_err());
    }
}
