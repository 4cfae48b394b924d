//! Grid expansion, timed benchmark execution and JSONL result persistence.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::indexes::{Family, IndexHandle, ParamMap, QueryParams};
use crate::metrics::{self, operating_point, ParetoPoint};
use crate::oracle::GroundTruth;
use crate::vector::{DenseMatrix, VectorSet};
use crate::HARNESS_VERSION;

pub const SCHEMA_VERSION: u32 = 1;
/// Untimed queries executed before each timed pass.
pub const WARMUP_QUERIES: usize = 100;

/// Build and query grids of one family.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmGrid {
    #[serde(default)]
    pub build: Vec<ParamMap>,
    #[serde(default)]
    pub query: Vec<ParamMap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub algorithms: BTreeMap<Family, AlgorithmGrid>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_k() -> usize {
    100
}

impl GridConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_owned(),
            source,
        })
    }
}

/// One (family, build params, query params) combination. Runs sharing a
/// `build_id` reuse one index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Run {
    pub family: Family,
    pub build_id: usize,
    pub build: ParamMap,
    pub query: ParamMap,
}

/// Cartesian product of each family's grids: families in declaration order,
/// build configurations outer, query configurations inner. A family without
/// build (or query) knobs may omit that grid; it then runs once with no
/// parameters.
pub fn expand_grid(config: &GridConfig) -> Result<Vec<Run>> {
    if config.k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    let mut runs = Vec::new();
    let mut build_id = 0;
    for (&family, grid) in &config.algorithms {
        let defaulted = |list: &Vec<ParamMap>, keys: &[&str], what: &str| -> Result<Vec<ParamMap>> {
            match (list.is_empty(), keys.is_empty()) {
                (false, _) => Ok(list.clone()),
                (true, true) => Ok(vec![ParamMap::new()]),
                (true, false) => Err(Error::invalid(format!("{family}: empty {what} grid"))),
            }
        };
        let builds = defaulted(&grid.build, family.build_keys(), "build")?;
        let queries = defaulted(&grid.query, family.query_keys(), "query")?;
        for q in &queries {
            QueryParams::parse(family, q)?;
        }
        for b in builds {
            family.check_keys(&b, family.build_keys())?;
            for q in &queries {
                runs.push(Run {
                    family,
                    build_id,
                    build: b.clone(),
                    query: q.clone(),
                });
            }
            build_id += 1;
        }
    }
    Ok(runs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub schema_version: u32,
    pub harness_version: String,
    pub dataset: String,
    pub family: Family,
    pub build_params: ParamMap,
    pub query_params: ParamMap,
    pub seed: u64,
    pub k: usize,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub build_seconds: f64,
    /// Seconds per query, in query order.
    pub latencies: Vec<f64>,
    pub recalls: Vec<f64>,
    /// Start of each timed query, seconds after the timed pass began.
    pub query_start_offsets: Vec<f64>,
    pub mean_recall: f64,
    pub qps: f64,
    pub mean_candidates: f64,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl BenchmarkRecord {
    /// Identity used for resume: reruns with the same key are skipped.
    pub fn key(&self) -> RunKey {
        RunKey {
            dataset: self.dataset.clone(),
            family: self.family,
            build: self.build_params.clone(),
            query: self.query_params.clone(),
            k: self.k,
            seed: self.seed,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    pub fn pareto_point(&self) -> ParetoPoint<&BenchmarkRecord> {
        ParetoPoint::new(self.mean_recall, self.qps, self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct RunKey {
    pub dataset: String,
    pub family: Family,
    pub build: ParamMap,
    pub query: ParamMap,
    pub k: usize,
    pub seed: u64,
}

/// Measurements of one timed pass over a query set.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPass {
    pub latencies: Vec<f64>,
    pub recalls: Vec<f64>,
    pub candidates: Vec<usize>,
    pub start_offsets: Vec<f64>,
}

impl QueryPass {
    pub fn mean_recall(&self) -> f64 {
        metrics::mean(&self.recalls)
    }

    pub fn qps(&self) -> Result<f64> {
        metrics::qps(&self.latencies)
    }

    pub fn mean_candidates(&self) -> f64 {
        let n = self.candidates.len().max(1) as f64;
        self.candidates.iter().sum::<usize>() as f64 / n
    }
}

/// Runs an untimed warmup over the first `min(100, q)` queries, then times
/// every query on the calling thread, one after another.
pub fn time_queries(
    index: &IndexHandle,
    queries: &VectorSet,
    gt: &GroundTruth,
    k: usize,
    qp: &QueryParams,
) -> Result<QueryPass> {
    if gt.k() != k {
        return Err(Error::invalid(format!(
            "ground truth has k = {}, run asks for k = {k}",
            gt.k()
        )));
    }
    if gt.queries() != queries.rows() || queries.rows() == 0 {
        return Err(Error::invalid(format!(
            "{} queries but {} ground-truth rows",
            queries.rows(),
            gt.queries()
        )));
    }
    for i in 0..queries.rows().min(WARMUP_QUERIES) {
        std::hint::black_box(index.search(queries.get(i), k, qp)?);
    }
    let q = queries.rows();
    let mut pass = QueryPass {
        latencies: Vec::with_capacity(q),
        recalls: Vec::with_capacity(q),
        candidates: Vec::with_capacity(q),
        start_offsets: Vec::with_capacity(q),
    };
    let origin = Instant::now();
    for i in 0..q {
        let query = queries.get(i);
        let start = Instant::now();
        let out = index.search(query, k, qp)?;
        let elapsed = start.elapsed();
        pass.start_offsets.push((start - origin).as_secs_f64());
        // a zero reading would make qps infinite on coarse clocks
        pass.latencies.push(elapsed.as_secs_f64().max(1e-9));
        pass.recalls.push(metrics::recall(&out.neighbors, gt.row(i), k));
        pass.candidates.push(out.candidates);
    }
    Ok(pass)
}

/// Builds `family` on the calling thread and reports the wall-clock seconds.
pub fn timed_build(
    dataset: &Dataset,
    family: Family,
    params: &ParamMap,
    seed: u64,
) -> Result<(IndexHandle, f64)> {
    let space = dataset.space()?;
    let train: Option<DenseMatrix> = match family {
        Family::QueryAwareIvf => dataset
            .train_queries()
            .and_then(|t| t.as_dense().cloned()),
        _ => None,
    };
    let start = Instant::now();
    let index = IndexHandle::build(family, space, params, seed, train.as_ref())?;
    Ok((index, start.elapsed().as_secs_f64()))
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub k: usize,
    pub seed: u64,
    /// Completed runs to skip.
    pub skip: BTreeSet<RunKey>,
}

/// Executes `runs` against the dataset's test queries, handing each record
/// to `sink` as soon as it is complete. Builds are reused across consecutive
/// runs with the same `build_id`. A failed build produces failed records and
/// the run list continues.
pub fn run_benchmark(
    dataset: &Dataset,
    gt: &GroundTruth,
    runs: &[Run],
    opts: &RunOptions,
    mut sink: impl FnMut(&BenchmarkRecord) -> Result<()>,
) -> Result<Vec<BenchmarkRecord>> {
    let queries = dataset.test_queries();
    let mut out = Vec::new();
    let mut built: Option<(usize, std::result::Result<(IndexHandle, f64), String>)> = None;
    for run in runs {
        let mut record = BenchmarkRecord {
            schema_version: SCHEMA_VERSION,
            harness_version: HARNESS_VERSION.to_string(),
            dataset: dataset.name.clone(),
            family: run.family,
            build_params: run.build.clone(),
            query_params: run.query.clone(),
            seed: opts.seed,
            k: opts.k,
            status: Status::Ok,
            error: None,
            build_seconds: 0.0,
            latencies: Vec::new(),
            recalls: Vec::new(),
            query_start_offsets: Vec::new(),
            mean_recall: 0.0,
            qps: 0.0,
            mean_candidates: 0.0,
            timestamp: now(),
        };
        if opts.skip.contains(&record.key()) {
            continue;
        }
        if built.as_ref().map(|b| b.0) != Some(run.build_id) {
            drop(built.take()); // free the previous index before building the next
            let result = timed_build(dataset, run.family, &run.build, opts.seed).map_err(|e| e.to_string());
            built = Some((run.build_id, result));
        }
        let outcome = match &built.as_ref().expect("set above").1 {
            Err(e) => Err(format!("build failed: {e}")),
            Ok((index, secs)) => {
                record.build_seconds = *secs;
                QueryParams::parse(run.family, &run.query)
                    .and_then(|qp| time_queries(index, &queries, gt, opts.k, &qp))
                    .and_then(|pass| Ok((pass.qps()?, pass)))
                    .map_err(|e| format!("search failed: {e}"))
            }
        };
        match outcome {
            Ok((qps, pass)) => {
                record.mean_recall = pass.mean_recall();
                record.mean_candidates = pass.mean_candidates();
                record.qps = qps;
                record.latencies = pass.latencies;
                record.recalls = pass.recalls;
                record.query_start_offsets = pass.start_offsets;
            }
            Err(e) => {
                record.status = Status::Failed;
                record.error = Some(e);
            }
        }
        record.timestamp = now();
        sink(&record)?;
        out.push(record);
    }
    Ok(out)
}

/// Appends one JSON line.
pub fn append_record(path: &Path, record: &BenchmarkRecord) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut line = serde_json::to_string(record).expect("record serializes");
    line.push('\n');
    f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads a JSONL record file. A missing file is an empty record set.
pub fn read_records(path: &Path) -> Result<Vec<BenchmarkRecord>> {
    let f = match std::fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|source| Error::Json {
            path: path.to_owned(),
            source,
        })?;
        let version = value.get("schema_version").and_then(|v| v.as_u64());
        if version != Some(SCHEMA_VERSION as u64) {
            return Err(Error::format(
                path,
                format!("line {}: schema version {version:?}, expected {SCHEMA_VERSION}", n + 1),
            ));
        }
        out.push(serde_json::from_value(value).map_err(|source| Error::Json {
            path: path.to_owned(),
            source,
        })?);
    }
    Ok(out)
}

/// Keys of successful records, for resuming.
pub fn completed(records: &[BenchmarkRecord]) -> BTreeSet<RunKey> {
    records.iter().filter(|r| r.is_ok()).map(BenchmarkRecord::key).collect()
}

/// Fastest successful configuration of each family reaching `threshold`.
pub fn family_operating_points(
    records: &[BenchmarkRecord],
    threshold: f64,
) -> BTreeMap<Family, Option<&BenchmarkRecord>> {
    let mut by_family: BTreeMap<Family, Vec<ParetoPoint<&BenchmarkRecord>>> = BTreeMap::new();
    for r in records {
        let entry = by_family.entry(r.family).or_default();
        if r.is_ok() {
            entry.push(r.pareto_point());
        }
    }
    by_family
        .into_iter()
        .map(|(f, pts)| (f, operating_point(&pts, threshold).map(|p| p.config)))
        .collect()
}

/// Each family's operating-point qps divided by the best family's; `None`
/// for families that never reach `threshold`.
pub fn relative_throughput(records: &[BenchmarkRecord], threshold: f64) -> BTreeMap<Family, Option<f64>> {
    let ops = family_operating_points(records, threshold);
    let best = ops
        .values()
        .flatten()
        .map(|r| r.qps)
        .fold(f64::NEG_INFINITY, f64::max);
    ops.into_iter()
        .map(|(f, r)| (f, r.map(|r| r.qps / best)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OodGap {
    pub qps_id: Option<f64>,
    pub qps_ood: Option<f64>,
    /// `qps_ood / qps_id` when both sides reach the threshold.
    pub ratio: Option<f64>,
}

/// Operating-point throughput of every family on in-distribution versus
/// out-of-distribution queries.
pub fn ood_gap(
    records_id: &[BenchmarkRecord],
    records_ood: &[BenchmarkRecord],
    threshold: f64,
) -> BTreeMap<Family, OodGap> {
    let id = family_operating_points(records_id, threshold);
    let ood = family_operating_points(records_ood, threshold);
    let families: BTreeSet<Family> = id.keys().chain(ood.keys()).copied().collect();
    families
        .into_iter()
        .map(|f| {
            let qps_id = id.get(&f).copied().flatten().map(|r| r.qps);
            let qps_ood = ood.get(&f).copied().flatten().map(|r| r.qps);
            let ratio = qps_id.zip(qps_ood).map(|(a, b)| b / a);
            (
                f,
                OodGap {
                    qps_id,
                    qps_ood,
                    ratio,
                },
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(pairs: &[(&str, u64)]) -> ParamMap {
        pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect()
    }

    #[test]
    fn grid_is_build_outer_query_inner() {
        let mut algorithms = BTreeMap::new();
        algorithms.insert(
            Family::Ivf,
            AlgorithmGrid {
                build: vec![params(&[("clusters", 4)]), params(&[("clusters", 8)])],
                query: vec![
                    params(&[("nprobe", 1)]),
                    params(&[("nprobe", 2)]),
                    params(&[("nprobe", 4)]),
                ],
            },
        );
        algorithms.insert(Family::BruteForce, AlgorithmGrid::default());
        let cfg = GridConfig {
            algorithms,
            k: 10,
            seed: 0,
        };
        let runs = expand_grid(&cfg).unwrap();
        assert_eq!(runs.len(), 7);
        assert_eq!(runs[0].family, Family::BruteForce);
        let ivf: Vec<_> = runs.iter().filter(|r| r.family == Family::Ivf).collect();
        assert_eq!(ivf.len(), 6);
        assert_eq!(ivf.iter().map(|r| r.build_id).collect::<BTreeSet<_>>().len(), 2);
        assert_eq!(ivf[1].query, params(&[("nprobe", 2)]));
        assert_eq!(ivf[3].build, params(&[("clusters", 8)]));
        assert_eq!(runs, expand_grid(&cfg).unwrap());
    }

    #[test]
    fn grid_errors() {
        let mut algorithms = BTreeMap::new();
        algorithms.insert(
            Family::Ivf,
            AlgorithmGrid {
                build: vec![params(&[("clusters", 4)])],
                query: vec![],
            },
        );
        let mut cfg = GridConfig {
            algorithms,
            k: 10,
            seed: 0,
        };
        assert!(expand_grid(&cfg).is_err());
        cfg.algorithms.get_mut(&Family::Ivf).unwrap().query = vec![params(&[("ef", 4)])];
        assert!(matches!(expand_grid(&cfg), Err(Error::UnknownParameter { .. })));
    }

    #[test]
    fn config_json_defaults() {
        let cfg: GridConfig =
            serde_json::from_str(r#"{"algorithms": {"brute-force": {}, "ivf": {"build": [{"clusters": 2}], "query": [{"nprobe": 1}]}}}"#)
                .unwrap();
        assert_eq!(cfg.k, 100);
        assert_eq!(expand_grid(&cfg).unwrap().len(), 2);
        assert!(serde_json::from_str::<GridConfig>(r#"{"algorithms": {}, "bogus": 1}"#).is_err());
    }
}
