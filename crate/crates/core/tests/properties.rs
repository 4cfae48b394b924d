mod common;

use std::sync::Arc;

use annbench::datasets::format::{decode_vectors, encode_vectors};
use annbench::indexes::{Family, IndexHandle};
use annbench::metrics::{pareto_frontier, relative_contrast, ParetoPoint};
use annbench::oracle::{build_ground_truth, exact_knn};
use annbench::quantization::{binarize, pq_train};
use annbench::vector::{dissimilarity, BitMatrix, DenseMatrix, Measure, Space, VectorRef, VectorSet};
use common::*;
use proptest::prelude::*;

const ALL_DENSE: [Measure; 3] = [Measure::Euclidean, Measure::Cosine, Measure::NegInnerProduct];

fn matrix(rows: std::ops::RangeInclusive<usize>, dim: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = DenseMatrix> {
    (rows, dim).prop_flat_map(|(r, d)| {
        prop::collection::vec(-4.0f32..4.0, r * d).prop_map(move |v| DenseMatrix::from_vec(d, v).unwrap())
    })
}

/// Small integer coordinates, so distinct points often tie.
fn grid_matrix(rows: std::ops::RangeInclusive<usize>, dim: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = DenseMatrix> {
    (rows, dim).prop_flat_map(|(r, d)| {
        prop::collection::vec(-2i8..=2, r * d)
            .prop_map(move |v| DenseMatrix::from_vec(d, v.into_iter().map(f32::from).collect()).unwrap())
    })
}

fn bits(rows: usize, dim: usize) -> impl Strategy<Value = BitMatrix> {
    prop::collection::vec(prop::collection::vec(any::<bool>(), dim), rows)
        .prop_map(|b| BitMatrix::from_bools(&b).unwrap())
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn nonzero_rows(m: &DenseMatrix) -> bool {
    m.iter().all(|r| r.iter().any(|&x| x != 0.0))
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn dissimilarity_is_symmetric(m in matrix(2..=2, 1..=40)) {
        let (a, b) = (VectorRef::Dense(m.row(0)), VectorRef::Dense(m.row(1)));
        for measure in ALL_DENSE {
            match (dissimilarity(a, b, measure), dissimilarity(b, a, measure)) {
                (Ok(x), Ok(y)) => prop_assert_eq!(x.to_bits(), y.to_bits()),
                (x, y) => prop_assert_eq!(x.is_err(), y.is_err()),
            }
        }
    }

    #[test]
    fn self_dissimilarity_vanishes(m in matrix(1..=1, 1..=40), b in bits(1, 130)) {
        let a = VectorRef::Dense(m.row(0));
        prop_assert_eq!(dissimilarity(a, a, Measure::Euclidean).unwrap(), 0.0);
        let bv = VectorRef::Bits { words: b.row(0), dim: 130 };
        prop_assert_eq!(dissimilarity(bv, bv, Measure::Hamming).unwrap(), 0.0);
        if let Ok(unit) = annbench::vector::normalize(m.row(0)) {
            let u = VectorRef::Dense(&unit);
            prop_assert!(dissimilarity(u, u, Measure::Cosine).unwrap().abs() <= 1e-6);
        }
    }

    #[test]
    fn hamming_counts_differing_bits(dim in 1usize..200, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<bool>> = (0..2).map(|_| (0..dim).map(|_| rng.random()).collect()).collect();
        let m = BitMatrix::from_bools(&rows).unwrap();
        let loop_count = (0..dim).filter(|&i| rows[0][i] != rows[1][i]).count();
        let d = dissimilarity(
            VectorRef::Bits { words: m.row(0), dim },
            VectorRef::Bits { words: m.row(1), dim },
            Measure::Hamming,
        ).unwrap();
        prop_assert_eq!(d as usize, loop_count);
        for i in 0..dim {
            prop_assert_eq!(m.get(0, i), rows[0][i]);
        }
    }

    #[test]
    fn unit_vectors_rank_alike_under_all_dense_measures(m in matrix(6..=40, 2..=8), q in matrix(1..=1, 2..=8)) {
        prop_assume!(m.dim() == q.dim() && nonzero_rows(&m) && nonzero_rows(&q));
        let corpus = m.normalized().unwrap();
        let query = annbench::vector::normalize(q.row(0)).unwrap();
        let n = corpus.rows();
        let order = exact_knn(&space(corpus.clone(), Measure::Euclidean), VectorRef::Dense(&query), n).unwrap();
        for measure in [Measure::Cosine, Measure::NegInnerProduct] {
            let s = space(corpus.clone(), measure);
            let sc = s.scorer(VectorRef::Dense(&query)).unwrap();
            // the Euclidean order is nondecreasing under the other measure,
            // up to rounding
            for w in order.windows(2) {
                prop_assert!(sc.score(w[0].id as usize) <= sc.score(w[1].id as usize) + 1e-5);
            }
        }
    }

    #[test]
    fn oracle_matches_loop_and_sort(m in grid_matrix(1..=60, 1..=6), q in grid_matrix(3..=3, 1..=6), k in 1usize..70) {
        prop_assume!(m.dim() == q.dim());
        let k = k.min(m.rows());
        let data = VectorSet::Dense(m.clone());
        for measure in ALL_DENSE {
            if measure == Measure::Cosine && (!nonzero_rows(&m) || !nonzero_rows(&q)) {
                continue;
            }
            let s = Space::new(Arc::new(data.clone()), measure).unwrap();
            for row in q.iter() {
                let got = exact_knn(&s, VectorRef::Dense(row), k).unwrap();
                prop_assert_eq!(&got, &reference_knn(&data, VectorRef::Dense(row), measure, k));
                // values agree with a double-precision recomputation
                for n in &got {
                    let p = m.row(n.id as usize);
                    let dot: f64 = p.iter().zip(row).map(|(&a, &b)| a as f64 * b as f64).sum();
                    let want = match measure {
                        Measure::Euclidean => p.iter().zip(row).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>().sqrt(),
                        Measure::Cosine => {
                            let na = p.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
                            let nb = row.iter().map(|&b| (b as f64).powi(2)).sum::<f64>().sqrt();
                            1.0 - dot / (na * nb)
                        }
                        _ => -dot,
                    };
                    prop_assert!((n.dissimilarity as f64 - want).abs() <= 1e-5 * want.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn oracle_matches_loop_and_sort_on_bits(b in bits(40, 20), k in 1usize..40) {
        let data = VectorSet::Bits(b.clone());
        let s = Space::new(Arc::new(data.clone()), Measure::Hamming).unwrap();
        for i in [0, 13, 39] {
            let q = VectorRef::Bits { words: b.row(i), dim: 20 };
            prop_assert_eq!(exact_knn(&s, q, k).unwrap(), reference_knn(&data, q, Measure::Hamming, k));
        }
    }

    #[test]
    fn ground_truth_threshold_separates(m in grid_matrix(5..=50, 1..=4), q in grid_matrix(4..=4, 1..=4), k in 1usize..10) {
        prop_assume!(m.dim() == q.dim());
        let k = k.min(m.rows());
        let s = space(m.clone(), Measure::Euclidean);
        let gt = build_ground_truth(&s, &VectorSet::Dense(q.clone()), k).unwrap();
        for (qi, row) in q.iter().enumerate() {
            let r = gt.row(qi);
            prop_assert_eq!(r.threshold, r.dists[k - 1]);
            for i in 0..m.rows() {
                let d = dissimilarity(VectorRef::Dense(row), VectorRef::Dense(m.row(i)), Measure::Euclidean).unwrap();
                let listed = r.ids.contains(&(i as u32));
                if d < r.threshold {
                    prop_assert!(listed, "point {} inside threshold missing", i);
                }
                if d > r.threshold {
                    prop_assert!(!listed, "point {} beyond threshold listed", i);
                }
            }
        }
    }

    #[test]
    fn binarize_ignores_positive_scaling(m in matrix(4..=20, 1..=70), exps in prop::collection::vec(-3i32..=3, 70), center in any::<bool>()) {
        // powers of two keep every value, mean and comparison exact
        let d = m.dim();
        let scaled: Vec<f32> = m.as_slice().iter().enumerate().map(|(i, &x)| x * 2f32.powi(exps[i % d])).collect();
        let s = DenseMatrix::from_vec(d, scaled).unwrap();
        prop_assert_eq!(binarize(&m, center).unwrap(), binarize(&s, center).unwrap());
    }

    #[test]
    fn adc_score_is_the_left_to_right_table_sum(seed in any::<u64>(), q in matrix(1..=1, 8..=8)) {
        let data = gaussian(64, 8, seed);
        let book = pq_train(&data, 4, 3, seed).unwrap();
        for measure in [Measure::Euclidean, Measure::NegInnerProduct] {
            let table = book.adc_table(q.row(0), measure).unwrap();
            for row in data.iter().take(10) {
                let codes = book.encode(row).unwrap();
                let mut sum = 0f32;
                for (j, &c) in codes.iter().enumerate() {
                    sum += table.entry(j, c as usize);
                }
                prop_assert_eq!(table.lookup_sum(&codes).to_bits(), sum.to_bits());
            }
        }
    }

    #[test]
    fn relative_contrast_ignores_scaling(m in matrix(5..=40, 1..=6), q in matrix(1..=1, 1..=6), factor in 0.01f32..100.0, k in 1usize..5) {
        prop_assume!(m.dim() == q.dim());
        let base = relative_contrast(&space(m.clone(), Measure::Euclidean), VectorRef::Dense(q.row(0)), k).unwrap();
        let scaled_q: Vec<f32> = q.row(0).iter().map(|x| x * factor).collect();
        let scaled = relative_contrast(&space(m.scaled(factor), Measure::Euclidean), VectorRef::Dense(&scaled_q), k).unwrap();
        match (base, scaled) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-4 * a.max(1.0), "{} vs {}", a, b),
            (a, b) => prop_assert_eq!(a.is_none(), b.is_none()),
        }
    }

    #[test]
    fn frontier_is_the_dominance_filter_and_a_fixpoint(pts in prop::collection::vec((0u8..20, 0u8..20), 0..80)) {
        let points: Vec<ParetoPoint<usize>> = pts
            .iter()
            .enumerate()
            .map(|(i, &(r, q))| ParetoPoint::new(r as f64 / 20.0, q as f64, i))
            .collect();
        let front = pareto_frontier(&points);
        let mut got: Vec<usize> = front.iter().map(|p| p.config).collect();
        got.sort_unstable();
        let want: Vec<usize> = points
            .iter()
            .filter(|p| !points.iter().any(|o| o.dominates(p)))
            .map(|p| p.config)
            .collect();
        prop_assert_eq!(&got, &want);
        let again: Vec<usize> = pareto_frontier(&front).iter().map(|p| p.config).collect();
        let mut again_sorted = again.clone();
        again_sorted.sort_unstable();
        prop_assert_eq!(again_sorted, got);
    }

    #[test]
    fn vector_files_round_trip(m in matrix(0..=30, 1..=9), b in bits(7, 77)) {
        for (set, norm) in [(VectorSet::Dense(m), false), (VectorSet::Bits(b), false)] {
            let bytes = encode_vectors(&set, norm);
            let (back, n) = decode_vectors(&bytes, std::path::Path::new("mem")).unwrap();
            prop_assert_eq!(&back, &set);
            prop_assert_eq!(n, norm);
            prop_assert_eq!(encode_vectors(&back, n), bytes);
        }
    }
}

proptest! {
    #![proptest_config(config(8))]

    #[test]
    fn ids_survive_power_of_two_scaling(seed in any::<u64>(), exp in prop::sample::select(vec![-3i32, -1, 1, 2, 5])) {
        let corpus = gaussian(160, 8, seed);
        let train = gaussian(60, 8, seed ^ 1);
        let queries = gaussian(4, 8, seed ^ 2);
        let factor = 2f32.powi(exp);
        for measure in [Measure::Euclidean, Measure::Cosine] {
            let a = space(corpus.clone(), measure);
            let b = space(corpus.scaled(factor), measure);
            let train_b = train.scaled(factor);
            for family in Family::ALL {
                if family == Family::Lsh && measure != Measure::Cosine {
                    continue;
                }
                let (bp, qp) = small_params(family);
                let ia = IndexHandle::build(family, a.clone(), &bp, seed, Some(&train)).unwrap();
                let ib = IndexHandle::build(family, b.clone(), &bp, seed, Some(&train_b)).unwrap();
                for q in queries.iter() {
                    let qs: Vec<f32> = q.iter().map(|x| x * factor).collect();
                    prop_assert_eq!(
                        ids(&search(&ia, q, 10, &qp).neighbors),
                        ids(&search(&ib, &qs, 10, &qp).neighbors),
                        "{} under {}", family, measure
                    );
                }
            }
        }
    }
}
