//! Exact k-NN and ground truth.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::vector::{Neighbor, Space, VectorRef, VectorSet};

/// Exact `k` nearest corpus rows to `query`, sorted by (dissimilarity, id).
pub fn exact_knn(space: &Space, query: VectorRef<'_>, k: usize) -> Result<Vec<Neighbor>> {
    check_k(k, space.len())?;
    let scorer = space.scorer(query)?;
    let mut all: Vec<Neighbor> = (0..space.len()).map(|i| scorer.neighbor(i)).collect();
    Ok(top_k(&mut all, k))
}

fn check_k(k: usize, m: usize) -> Result<()> {
    if k == 0 || k > m {
        return Err(Error::invalid(format!(
            "k = {k} outside 1..={m} for a corpus of {m} points"
        )));
    }
    Ok(())
}

/// Selects and sorts the `k` best entries of `all` under the rank order.
pub(crate) fn top_k(all: &mut Vec<Neighbor>, k: usize) -> Vec<Neighbor> {
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, Neighbor::cmp_rank);
        all.truncate(k);
    }
    all.sort_unstable_by(Neighbor::cmp_rank);
    std::mem::take(all)
}

/// Exact neighbors of a query set, stored at fixed width `k`.
///
/// Under ties the stored row keeps the lowest ids; `thresholds` holds the
/// k-th dissimilarity so tied points outside the stored ids still count as
/// correct answers.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    k: usize,
    ids: Vec<u32>,
    dists: Vec<f32>,
    thresholds: Vec<f32>,
}

#[derive(Debug, Clone, Copy)]
pub struct GroundTruthRow<'a> {
    pub ids: &'a [u32],
    pub dists: &'a [f32],
    pub threshold: f32,
}

impl GroundTruth {
    pub fn from_parts(k: usize, ids: Vec<u32>, dists: Vec<f32>, thresholds: Vec<f32>) -> Result<Self> {
        if k == 0 || ids.len() != dists.len() || ids.len() != thresholds.len() * k {
            return Err(Error::invalid("inconsistent ground truth shape"));
        }
        let gt = Self {
            k,
            ids,
            dists,
            thresholds,
        };
        for q in 0..gt.queries() {
            let row = gt.row(q);
            if row.dists.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::invalid(format!("ground truth row {q} is not sorted")));
            }
            if row.threshold.to_bits() != row.dists[k - 1].to_bits() {
                return Err(Error::invalid(format!(
                    "ground truth row {q} threshold differs from its k-th distance"
                )));
            }
        }
        Ok(gt)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn queries(&self) -> usize {
        self.thresholds.len()
    }

    pub fn row(&self, q: usize) -> GroundTruthRow<'_> {
        let r = q * self.k..(q + 1) * self.k;
        GroundTruthRow {
            ids: &self.ids[r.clone()],
            dists: &self.dists[r],
            threshold: self.thresholds[q],
        }
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn dists(&self) -> &[f32] {
        &self.dists
    }

    pub fn thresholds(&self) -> &[f32] {
        &self.thresholds
    }
}

/// Ground truth for every row of `queries`. Queries are processed in
/// parallel; each row is computed independently, so the output does not
/// depend on the thread count.
pub fn build_ground_truth(space: &Space, queries: &VectorSet, k: usize) -> Result<GroundTruth> {
    check_k(k, space.len())?;
    let rows: Vec<Vec<Neighbor>> = (0..queries.rows())
        .into_par_iter()
        .map(|q| exact_knn(space, queries.get(q), k))
        .collect::<Result<_>>()?;
    let mut ids = Vec::with_capacity(rows.len() * k);
    let mut dists = Vec::with_capacity(rows.len() * k);
    let mut thresholds = Vec::with_capacity(rows.len());
    for row in rows {
        thresholds.push(row[k - 1].dissimilarity);
        for n in row {
            ids.push(n.id);
            dists.push(n.dissimilarity);
        }
    }
    Ok(GroundTruth {
        k,
        ids,
        dists,
        thresholds,
    })
}
