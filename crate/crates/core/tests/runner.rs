mod common;

use std::collections::BTreeMap;

use annbench::datasets::{generate_id_gaussian, generate_ood_shifted, Dataset, IdGaussian, OodShifted};
use annbench::indexes::Family;
use annbench::oracle::{build_ground_truth, GroundTruth};
use annbench::runner::*;
use common::params;

fn small() -> (Dataset, GroundTruth) {
    let mut p = IdGaussian::new(3000, 12, 21);
    p.queries = 150;
    let ds = generate_id_gaussian(&p).unwrap();
    let gt = build_ground_truth(&ds.space().unwrap(), &ds.test_queries(), 10).unwrap();
    (ds, gt)
}

fn config(json: &str) -> GridConfig {
    serde_json::from_str(json).unwrap()
}

fn run_all(ds: &Dataset, gt: &GroundTruth, cfg: &GridConfig) -> Vec<BenchmarkRecord> {
    let runs = expand_grid(cfg).unwrap();
    let opts = RunOptions {
        k: cfg.k,
        seed: cfg.seed,
        skip: Default::default(),
    };
    run_benchmark(ds, gt, &runs, &opts, |_| Ok(())).unwrap()
}

const GRID: &str = r#"{"algorithms": {
    "brute-force": {},
    "ivf": {"build": [{"clusters": 8}, {"clusters": 16}], "query": [{"nprobe": 1}, {"nprobe": 2}, {"nprobe": 4}]}
}, "k": 10, "seed": 5}"#;

#[test]
fn grid_counts_runs_and_builds() {
    let runs = expand_grid(&config(GRID)).unwrap();
    let ivf: Vec<&Run> = runs.iter().filter(|r| r.family == Family::Ivf).collect();
    assert_eq!(ivf.len(), 6);
    let builds: std::collections::BTreeSet<usize> = ivf.iter().map(|r| r.build_id).collect();
    assert_eq!(builds.len(), 2);
    assert_eq!(runs, expand_grid(&config(GRID)).unwrap());
    let empty = config(r#"{"algorithms": {"ivf": {"build": [{"clusters": 4}], "query": []}}}"#);
    assert!(expand_grid(&empty).is_err());
    let bad = config(r#"{"algorithms": {"ivf": {"build": [{"clusters": 4}], "query": [{"ef": 3}]}}}"#);
    assert_eq!(expand_grid(&bad).unwrap_err().category(), "params");
}

#[test]
fn records_are_self_consistent() {
    let (ds, gt) = small();
    let records = run_all(&ds, &gt, &config(GRID));
    assert_eq!(records.len(), 7);
    for r in &records {
        assert!(r.is_ok(), "{:?}", r.error);
        assert_eq!(r.latencies.len(), 150);
        assert_eq!(r.mean_recall, r.recalls.iter().sum::<f64>() / r.recalls.len() as f64);
        let qps = r.latencies.len() as f64 / r.latencies.iter().sum::<f64>();
        assert_eq!(r.qps, qps);
        // queries are timed one after another
        for i in 1..r.latencies.len() {
            assert!(r.query_start_offsets[i] >= r.query_start_offsets[i - 1] + r.latencies[i - 1] - 1e-9);
        }
    }
    let bf = records.iter().find(|r| r.family == Family::BruteForce).unwrap();
    assert_eq!(bf.mean_recall, 1.0);
    assert!(bf.recalls.iter().all(|&r| r == 1.0));
}

#[test]
fn same_seed_gives_same_recalls() {
    let (ds, gt) = small();
    let a = run_all(&ds, &gt, &config(GRID));
    let b = run_all(&ds, &gt, &config(GRID));
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.key(), y.key());
        assert_eq!(x.recalls, y.recalls);
    }
}

#[test]
fn failed_builds_are_recorded_and_the_grid_continues() {
    let (ds, gt) = small();
    let cfg = config(
        r#"{"algorithms": {
            "lsh": {"build": [{"tables": 2, "hash_bits": 4}], "query": [{}]},
            "brute-force": {}
        }, "k": 10}"#,
    );
    let records = run_all(&ds, &gt, &cfg);
    let lsh = records.iter().find(|r| r.family == Family::Lsh).unwrap();
    assert_eq!(lsh.status, Status::Failed);
    assert!(lsh.error.as_deref().unwrap().contains("unsupported"));
    assert!(records.iter().any(|r| r.family == Family::BruteForce && r.is_ok()));
}

#[test]
fn resume_skips_completed_runs() {
    let (ds, gt) = small();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.jsonl");
    let cfg = config(GRID);
    let runs = expand_grid(&cfg).unwrap();
    let opts = RunOptions {
        k: 10,
        seed: 5,
        skip: Default::default(),
    };
    run_benchmark(&ds, &gt, &runs[..3], &opts, |r| append_record(&path, r)).unwrap();
    let done = read_records(&path).unwrap();
    assert_eq!(done.len(), 3);
    let opts = RunOptions {
        skip: completed(&done),
        ..opts
    };
    let fresh = run_benchmark(&ds, &gt, &runs, &opts, |r| append_record(&path, r)).unwrap();
    assert_eq!(fresh.len(), runs.len() - 3);
    let all = read_records(&path).unwrap();
    assert_eq!(all.len(), runs.len());
    assert_eq!(all[..3], done[..]);
}

#[test]
fn schema_mismatch_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("old.jsonl");
    std::fs::write(&path, "{\"schema_version\": 99}\n").unwrap();
    let err = read_records(&path).unwrap_err();
    assert_eq!(err.category(), "format");
    assert!(err.to_string().contains("old.jsonl"));
}

fn record(family: Family, recall: f64, qps: f64, q: u64) -> BenchmarkRecord {
    BenchmarkRecord {
        schema_version: SCHEMA_VERSION,
        harness_version: String::new(),
        dataset: "d".into(),
        family,
        build_params: params(&[]),
        query_params: params(&[("nprobe", q)]),
        seed: 0,
        k: 10,
        status: Status::Ok,
        error: None,
        build_seconds: 0.0,
        latencies: vec![],
        recalls: vec![],
        query_start_offsets: vec![],
        mean_recall: recall,
        qps,
        mean_candidates: 0.0,
        timestamp: 0,
    }
}

#[test]
fn relative_throughput_examples() {
    let recs = vec![
        record(Family::Ivf, 0.97, 400.0, 1),
        record(Family::Ivf, 0.99, 100.0, 2),
        record(Family::BeamGraph, 0.96, 200.0, 1),
        record(Family::Lsh, 0.5, 9000.0, 1),
    ];
    let rel = relative_throughput(&recs, 0.95);
    assert_eq!(rel[&Family::Ivf], Some(1.0));
    assert_eq!(rel[&Family::BeamGraph], Some(0.5));
    assert_eq!(rel[&Family::Lsh], None);
}

#[test]
fn ood_gap_examples() {
    let id = vec![record(Family::Ivf, 0.95, 100.0, 1), record(Family::BeamGraph, 0.92, 50.0, 1)];
    let ood = vec![record(Family::Ivf, 0.93, 40.0, 4), record(Family::BeamGraph, 0.7, 80.0, 1)];
    let gaps: BTreeMap<Family, OodGap> = ood_gap(&id, &ood, 0.9);
    assert_eq!(gaps[&Family::Ivf].ratio, Some(0.4));
    let g = gaps[&Family::BeamGraph];
    assert_eq!((g.qps_id, g.qps_ood, g.ratio), (Some(50.0), None, None));
    let same = ood_gap(&id, &id, 0.9);
    assert!(same.values().all(|g| g.ratio == Some(1.0)));
}

#[test]
fn identical_query_sets_give_a_ratio_near_one() {
    let (ds, gt) = small();
    let cfg = config(r#"{"algorithms": {"ivf": {"build": [{"clusters": 8}], "query": [{"nprobe": 8}]}}, "k": 10}"#);
    // take the faster of a few repeats on each side to damp timer noise
    let best = || {
        (0..3)
            .map(|_| run_all(&ds, &gt, &cfg))
            .max_by(|a, b| a[0].qps.total_cmp(&b[0].qps))
            .unwrap()
    };
    let (a, b) = (best(), best());
    let ratio = ood_gap(&a, &b, 0.9)[&Family::Ivf].ratio.unwrap();
    assert!((ratio - 1.0).abs() < 0.1, "ratio {ratio}");
}

#[test]
fn shifted_queries_slow_ivf_down() {
    let mut p = OodShifted::new(20_000, 16, 0.0, 12);
    p.test = 300;
    p.train = 10;
    let id = generate_ood_shifted(&p).unwrap();
    p.shift = 3.0;
    let ood = generate_ood_shifted(&p).unwrap();
    let cfg = config(
        r#"{"algorithms": {"ivf": {"build": [{"clusters": 128}],
            "query": [{"nprobe": 1}, {"nprobe": 2}, {"nprobe": 4}, {"nprobe": 8}, {"nprobe": 16}, {"nprobe": 32}, {"nprobe": 64}, {"nprobe": 128}]}},
            "k": 10}"#,
    );
    let gt_id = build_ground_truth(&id.space().unwrap(), &id.test_queries(), 10).unwrap();
    let gt_ood = build_ground_truth(&ood.space().unwrap(), &ood.test_queries(), 10).unwrap();
    let ri = run_all(&id, &gt_id, &cfg);
    let ro = run_all(&ood, &gt_ood, &cfg);
    let op = |rs: &[BenchmarkRecord]| family_operating_points(rs, 0.9)[&Family::Ivf].unwrap().query_params["nprobe"];
    assert!(op(&ro) > op(&ri), "ood needs nprobe {} vs id {}", op(&ro), op(&ri));
}
