mod common;

use annbench::datasets::{generate_id_gaussian, IdGaussian};
use annbench::indexes::{Family, IndexHandle, QueryParams};
use annbench::metrics::*;
use annbench::oracle::{build_ground_truth, exact_knn, GroundTruth};
use annbench::runner::{expand_grid, run_benchmark, GridConfig, RunOptions};
use annbench::vector::{DenseMatrix, Measure, Neighbor, VectorSet};
use common::{gaussian, ids, params, space};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn line(points: &[f32]) -> DenseMatrix {
    let rows: Vec<[f32; 1]> = points.iter().map(|&p| [p]).collect();
    DenseMatrix::from_rows(&rows).unwrap()
}

fn one_query(q: &[f32]) -> VectorSet {
    VectorSet::Dense(DenseMatrix::from_rows(&[q]).unwrap())
}

#[test]
fn tie_at_threshold_counts_as_correct() {
    // point 2 duplicates point 1, which sits at the k-th distance
    let s = space(line(&[1.0, 2.0, 2.0, 5.0]), Measure::Euclidean);
    let gt = build_ground_truth(&s, &one_query(&[0.0]), 2).unwrap();
    assert_eq!(gt.row(0).ids, &[0, 1]);
    let answer = [Neighbor::new(0, 1.0), Neighbor::new(2, 2.0)];
    assert_eq!(recall(&answer, gt.row(0), 2), 1.0);
    let wrong = [Neighbor::new(0, 1.0), Neighbor::new(3, 5.0)];
    assert_eq!(recall(&wrong, gt.row(0), 2), 0.5);
    assert_eq!(recall(&answer[..1], gt.row(0), 2), 0.5);
}

#[test]
fn nine_of_ten() {
    let s = space(line(&(0..20).map(|i| i as f32).collect::<Vec<_>>()), Measure::Euclidean);
    let gt = build_ground_truth(&s, &one_query(&[-1.0]), 10).unwrap();
    let mut answer = exact_knn(&s, one_query(&[-1.0]).get(0), 10).unwrap();
    assert_eq!(recall(&answer, gt.row(0), 10), 1.0);
    answer[9] = Neighbor::new(15, 16.0);
    assert!((recall(&answer, gt.row(0), 10) - 0.9).abs() < 1e-12);
}

#[test]
fn qps_scales_inversely_with_latency() {
    let lat: Vec<f64> = (1..50).map(|i| i as f64 * 1e-4).collect();
    let doubled: Vec<f64> = lat.iter().map(|l| l * 2.0).collect();
    assert!((qps(&lat).unwrap() / qps(&doubled).unwrap() - 2.0).abs() < 1e-12);
    assert!((qps(&vec![0.001; 1000]).unwrap() - 1000.0).abs() < 1e-6);
    assert!(qps(&[]).is_err());
}

#[test]
fn rc_of_micro_corpus() {
    let s = space(line(&[1.0, 2.0, 4.0]), Measure::Euclidean);
    let q = one_query(&[0.0]);
    let rc1 = relative_contrast(&s, q.get(0), 1).unwrap().unwrap();
    let rc3 = relative_contrast(&s, q.get(0), 3).unwrap().unwrap();
    assert!((rc1 - 7.0 / 3.0).abs() < 1e-6);
    assert!((rc3 - 7.0 / 12.0).abs() < 1e-6);
    assert!(relative_contrast(&s, q.get(0), 4).is_err());
    // a query sitting on a corpus point has no defined contrast at k = 1
    assert_eq!(relative_contrast(&s, one_query(&[2.0]).get(0), 1).unwrap(), None);
}

#[test]
fn far_query_has_contrast_near_one() {
    let mut corpus = gaussian(500, 8, 3).scaled(0.01);
    let far = [100.0f32; 8];
    corpus.push(&far).unwrap();
    let s = space(corpus, Measure::Euclidean);
    let q = one_query(&[100.0, 100.0, 100.0, 100.0, 100.0, 100.0, 100.0, 100.5]);
    let rc = relative_contrast(&s, q.get(0), 10).unwrap().unwrap();
    assert!((rc - 1.0).abs() < 0.01, "rc {rc}");
    let near = one_query(&[0.0; 8]);
    let easy = relative_contrast(&s, near.get(0), 10).unwrap().unwrap();
    assert!(easy > 10.0 * rc);
}

#[test]
fn split_examples() {
    let profile = |rc: Vec<Option<f64>>| RcProfile {
        k: 1,
        measure_used: Measure::Euclidean,
        rc,
    };
    let p = profile(vec![Some(0.5), Some(3.0), Some(1.0), Some(2.0)]);
    assert_eq!(difficulty_split(&p, 1).unwrap(), (vec![0], vec![1]));
    let flat = profile(vec![Some(1.0); 6]);
    assert_eq!(difficulty_split(&flat, 2).unwrap(), (vec![0, 1], vec![5, 4]));
    let holes = profile(vec![None, Some(1.0), None, Some(2.0)]);
    assert_eq!(difficulty_split(&holes, 1).unwrap(), (vec![1], vec![3]));
    assert!(difficulty_split(&holes, 2).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = profile((0..50).map(|_| Some(rng.random_range(0.0..3.0))).collect());
    for m in 1..=25 {
        let (h, e) = difficulty_split(&p, m).unwrap();
        assert!(h.iter().all(|x| !e.contains(x)));
    }
}

#[test]
fn rc_csv_layout() {
    let p = RcProfile {
        k: 1,
        measure_used: Measure::Euclidean,
        rc: vec![Some(0.5), None, Some(2.0)],
    };
    let mut out = Vec::new();
    write_rc_csv(&mut out, &p, &[0], &[2]).unwrap();
    assert_eq!(
        String::from_utf8(out).unwrap(),
        "query_id,rc,split\n0,0.5,hardest\n1,,\n2,2,easiest\n"
    );
}

#[test]
fn negative_inner_product_contrast_uses_cosine() {
    let s = space(gaussian(300, 6, 8), Measure::NegInnerProduct);
    let q = VectorSet::Dense(gaussian(5, 6, 9));
    let p = rc_profile(&s, &q, 10).unwrap();
    assert_eq!(p.measure_used, Measure::Cosine);
    assert!(p.rc.iter().flatten().all(|&r| r > 0.0));
    let cos = space(gaussian(300, 6, 8).normalized().unwrap(), Measure::Cosine);
    let reference = rc_profile(&cos, &VectorSet::Dense(gaussian(5, 6, 9).normalized().unwrap()), 10).unwrap();
    for (a, b) in p.rc.iter().zip(&reference.rc) {
        assert!((a.unwrap() - b.unwrap()).abs() < 1e-9);
    }
}

#[test]
fn mahalanobis_examples() {
    let d = 64;
    let sample = gaussian(10_000, d, 4);
    let model = MahalanobisModel::fit(&sample, 0).unwrap();
    let mu: Vec<f32> = model.mean().iter().map(|&m| m as f32).collect();
    assert!(model.score(&mu).unwrap() < 1e-6);
    let fresh = gaussian(10_000, d, 5);
    let scores = model.score_all(&fresh).unwrap();
    let avg = scores.iter().sum::<f64>() / scores.len() as f64;
    assert!((avg / (d as f64).sqrt() - 1.0).abs() < 0.1, "mean {avg}");

    let id = MahalanobisModel::identity(&[1.0, -2.0, 0.5]);
    let x = [4.0f32, 2.0, 0.5];
    assert!((id.score(&x).unwrap() - 5.0).abs() < 1e-9);
    assert!(model.score(&x).is_err());
}

#[test]
fn mahalanobis_undoes_anisotropy() {
    // stretching one axis leaves the standardized distances unchanged
    let base = gaussian(5000, 4, 6);
    let mut stretched = DenseMatrix::new(4);
    for row in base.iter() {
        stretched.push(&[row[0] * 10.0, row[1], row[2], row[3]]).unwrap();
    }
    let a = MahalanobisModel::fit(&base, 0).unwrap().score_all(&base).unwrap();
    let b = MahalanobisModel::fit(&stretched, 0).unwrap().score_all(&stretched).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-3 * x.max(1.0));
    }
}

fn variance(m: &DenseMatrix, c: usize) -> f64 {
    let n = m.rows() as f64;
    let mean = m.iter().map(|r| r[c] as f64).sum::<f64>() / n;
    m.iter().map(|r| (r[c] as f64 - mean).powi(2)).sum::<f64>() / n
}

#[test]
fn pca_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut on_line = DenseMatrix::new(3);
    for _ in 0..200 {
        let t: f32 = rng.random_range(-5.0..5.0);
        on_line.push(&[t, 2.0 * t + 1.0, -t]).unwrap();
    }
    let p = pca_project(&on_line, &on_line, 2).unwrap();
    assert!(variance(&p, 1) < 1e-8 * variance(&p, 0));

    let cloud = gaussian(1000, 10, 3);
    let p = pca_project(&cloud, &cloud, 2).unwrap();
    assert!(variance(&p, 0) >= variance(&p, 1));
    assert_eq!(p, pca_project(&cloud, &cloud, 2).unwrap());

    assert!(pca_project(&line(&[1.0, 2.0]), &line(&[1.0]), 1).is_err());
    assert!(pca_project(&cloud, &gaussian(2, 9, 0), 2).is_err());
}

#[test]
fn frontier_and_operating_point_examples() {
    let pts = |v: &[(f64, f64)]| -> Vec<ParetoPoint<usize>> {
        v.iter().enumerate().map(|(i, &(r, q))| ParetoPoint::new(r, q, i)).collect()
    };
    let front = pareto_frontier(&pts(&[(0.9, 100.0), (0.95, 80.0), (0.8, 90.0)]));
    let got: Vec<(f64, f64)> = front.iter().map(|p| (p.recall, p.qps)).collect();
    assert_eq!(got, vec![(0.9, 100.0), (0.95, 80.0)]);
    assert_eq!(pareto_frontier(&pts(&[(0.5, 1.0)])).len(), 1);

    let f = pts(&[(0.9, 100.0), (0.96, 40.0)]);
    assert_eq!(operating_point(&f, 0.95).unwrap().config, 1);
    assert!(operating_point(&f, 0.99).is_none());
    assert_eq!(operating_point(&f, 0.0).unwrap().config, 0);
}

#[test]
fn oracle_examples() {
    let s = space(line(&[1.0, 2.0, 4.0]), Measure::Euclidean);
    let q = one_query(&[0.0]);
    let all = exact_knn(&s, q.get(0), 3).unwrap();
    assert_eq!(ids(&all), vec![0, 1, 2]);
    assert!(exact_knn(&s, q.get(0), 4).is_err());
    assert!(exact_knn(&s, q.get(0), 0).is_err());

    let dup = space(line(&[3.0, 1.0, 3.0, 1.0]), Measure::Euclidean);
    assert_eq!(ids(&exact_knn(&dup, q.get(0), 4).unwrap()), vec![1, 3, 0, 2]);
}

#[test]
fn ground_truth_shape_and_permutation() {
    let s = space(gaussian(10_000, 16, 11), Measure::Euclidean);
    let queries = gaussian(40, 16, 12);
    let gt = build_ground_truth(&s, &VectorSet::Dense(queries.clone()), 100).unwrap();
    assert_eq!((gt.k(), gt.queries()), (100, 40));
    for q in 0..gt.queries() {
        let row = gt.row(q);
        assert_eq!(row.ids.len(), 100);
        assert!(row.dists.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(row.threshold, row.dists[99]);
    }

    let perm: Vec<usize> = (0..40).rev().collect();
    let permuted = build_ground_truth(&s, &VectorSet::Dense(queries.select(&perm)), 100).unwrap();
    for (i, &p) in perm.iter().enumerate() {
        assert_eq!(permuted.row(i).ids, gt.row(p).ids);
        let a: Vec<u32> = permuted.row(i).dists.iter().map(|d| d.to_bits()).collect();
        let b: Vec<u32> = gt.row(p).dists.iter().map(|d| d.to_bits()).collect();
        assert_eq!(a, b);
    }
}

#[test]
fn brute_force_recall_is_exactly_one() {
    for measure in [Measure::Euclidean, Measure::Cosine, Measure::NegInnerProduct] {
        let s = space(gaussian(2000, 8, 13), measure);
        let queries = VectorSet::Dense(gaussian(30, 8, 14));
        let gt: GroundTruth = build_ground_truth(&s, &queries, 20).unwrap();
        let index = IndexHandle::build(Family::BruteForce, s, &params(&[]), 0, None).unwrap();
        for q in 0..30 {
            let out = index.search(queries.get(q), 20, &QueryParams::default()).unwrap();
            assert_eq!(recall(&out.neighbors, gt.row(q), 20), 1.0);
        }
    }
}

#[test]
fn easy_queries_score_at_least_as_well_as_hard_ones() {
    let mut p = IdGaussian::new(20_000, 32, 17);
    p.queries = 400;
    let ds = generate_id_gaussian(&p).unwrap();
    let s = ds.space().unwrap();
    let gt = build_ground_truth(&s, &ds.test_queries(), 10).unwrap();
    let profile = rc_profile(&s, &ds.test_queries(), 10).unwrap();
    let (hard, easy) = difficulty_split(&profile, 100).unwrap();
    let cfg: GridConfig = serde_json::from_str(
        r#"{"algorithms": {"ivf": {"build": [{"clusters": 128}],
            "query": [{"nprobe": 1}, {"nprobe": 2}, {"nprobe": 3}, {"nprobe": 4}, {"nprobe": 6}, {"nprobe": 8}, {"nprobe": 12}]}},
            "k": 10}"#,
    )
    .unwrap();
    let opts = RunOptions {
        k: 10,
        seed: 0,
        skip: Default::default(),
    };
    let records = run_benchmark(&ds, &gt, &expand_grid(&cfg).unwrap(), &opts, |_| Ok(())).unwrap();
    let subset = |r: &[f64], ids: &[u32]| ids.iter().map(|&i| r[i as usize]).sum::<f64>() / ids.len() as f64;
    let mut checked = 0;
    for r in &records {
        if r.mean_recall > 0.5 && r.mean_recall < 0.98 {
            let (h, e) = (subset(&r.recalls, &hard), subset(&r.recalls, &easy));
            assert!(e >= h - 0.02, "nprobe {}: easiest {e} hardest {h}", r.query_params["nprobe"]);
            checked += 1;
        }
    }
    assert!(checked >= 2, "only {checked} operating points in range");
}
