//! Static report: CSV tables and one HTML page with SVG recall/QPS plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::indexes::{Family, ParamMap};
use crate::metrics::{self, pareto_frontier, RcProfile};
use crate::runner::{family_operating_points, relative_throughput, BenchmarkRecord, OodGap};

pub fn fmt_params(p: &ParamMap) -> String {
    p.iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrontierRow {
    pub dataset: String,
    pub family: Family,
    pub build_params: String,
    pub query_params: String,
    pub recall: f64,
    pub qps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatingRow {
    pub dataset: String,
    pub threshold: f64,
    pub family: Family,
    /// Empty when the family never reaches the threshold.
    pub build_params: Option<String>,
    pub query_params: Option<String>,
    pub recall: Option<f64>,
    pub qps: Option<f64>,
    pub relative_qps: Option<f64>,
    pub build_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DifficultyRow {
    pub dataset: String,
    pub threshold: f64,
    pub family: Family,
    pub mean_recall: f64,
    pub hardest_recall: f64,
    pub easiest_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OodGapRow {
    pub dataset_id: String,
    pub dataset_ood: String,
    pub threshold: f64,
    pub family: Family,
    pub qps_id: Option<f64>,
    pub qps_ood: Option<f64>,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RcSummaryRow {
    pub dataset: String,
    pub k: usize,
    pub measure_used: String,
    pub queries: usize,
    pub defined: usize,
    pub min: Option<f64>,
    pub median: Option<f64>,
    pub mean: Option<f64>,
    pub max: Option<f64>,
}

/// Everything the report renders. Every number derives from the records and
/// the relative-contrast profiles passed in.
#[derive(Debug, Clone, Default)]
pub struct ReportBundle {
    pub frontiers: Vec<FrontierRow>,
    pub operating_points: Vec<OperatingRow>,
    pub difficulty: Vec<DifficultyRow>,
    pub ood_gaps: Vec<OodGapRow>,
    pub rc_summaries: Vec<RcSummaryRow>,
    /// Successful (dataset, family, recall, qps) points for plotting.
    points: Vec<(String, Family, f64, f64)>,
}

fn by_dataset(records: &[BenchmarkRecord]) -> BTreeMap<&str, Vec<BenchmarkRecord>> {
    let mut out: BTreeMap<&str, Vec<BenchmarkRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.dataset.as_str()).or_default().push(r.clone());
    }
    out
}

impl ReportBundle {
    pub fn from_records(records: &[BenchmarkRecord], thresholds: &[f64]) -> Self {
        let mut b = Self::default();
        for (dataset, recs) in by_dataset(records) {
            let mut families: BTreeMap<Family, Vec<&BenchmarkRecord>> = BTreeMap::new();
            for r in recs.iter().filter(|r| r.is_ok()) {
                families.entry(r.family).or_default().push(r);
                b.points.push((dataset.to_string(), r.family, r.mean_recall, r.qps));
            }
            for (family, rs) in &families {
                let pts: Vec<_> = rs.iter().map(|r| r.pareto_point()).collect();
                for p in pareto_frontier(&pts) {
                    b.frontiers.push(FrontierRow {
                        dataset: dataset.to_string(),
                        family: *family,
                        build_params: fmt_params(&p.config.build_params),
                        query_params: fmt_params(&p.config.query_params),
                        recall: p.recall,
                        qps: p.qps,
                    });
                }
            }
            for &t in thresholds {
                let rel = relative_throughput(&recs, t);
                for (family, op) in family_operating_points(&recs, t) {
                    b.operating_points.push(OperatingRow {
                        dataset: dataset.to_string(),
                        threshold: t,
                        family,
                        build_params: op.map(|r| fmt_params(&r.build_params)),
                        query_params: op.map(|r| fmt_params(&r.query_params)),
                        recall: op.map(|r| r.mean_recall),
                        qps: op.map(|r| r.qps),
                        relative_qps: rel.get(&family).copied().flatten(),
                        build_seconds: op.map(|r| r.build_seconds),
                    });
                }
            }
        }
        b
    }

    /// Recall of the hardest and easiest query ids at each family's
    /// operating point on `dataset`.
    pub fn add_difficulty(
        &mut self,
        records: &[BenchmarkRecord],
        dataset: &str,
        threshold: f64,
        hardest: &[u32],
        easiest: &[u32],
    ) {
        let recs: Vec<BenchmarkRecord> = records.iter().filter(|r| r.dataset == dataset).cloned().collect();
        for (family, op) in family_operating_points(&recs, threshold) {
            if let Some(r) = op {
                self.difficulty.push(DifficultyRow {
                    dataset: dataset.to_string(),
                    threshold,
                    family,
                    mean_recall: r.mean_recall,
                    hardest_recall: subset_recall(r, hardest),
                    easiest_recall: subset_recall(r, easiest),
                });
            }
        }
    }

    pub fn add_ood_gap(&mut self, id: &str, ood: &str, threshold: f64, gaps: &BTreeMap<Family, OodGap>) {
        for (&family, g) in gaps {
            self.ood_gaps.push(OodGapRow {
                dataset_id: id.to_string(),
                dataset_ood: ood.to_string(),
                threshold,
                family,
                qps_id: g.qps_id,
                qps_ood: g.qps_ood,
                ratio: g.ratio,
            });
        }
    }

    pub fn add_rc_summary(&mut self, dataset: &str, profile: &RcProfile) {
        let vals: Vec<f64> = profile.rc.iter().flatten().copied().collect();
        let (min, max) = if vals.is_empty() {
            (None, None)
        } else {
            (
                Some(vals.iter().copied().fold(f64::INFINITY, f64::min)),
                Some(vals.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
            )
        };
        self.rc_summaries.push(RcSummaryRow {
            dataset: dataset.to_string(),
            k: profile.k,
            measure_used: profile.measure_used.to_string(),
            queries: profile.rc.len(),
            defined: vals.len(),
            min,
            median: profile.median(),
            mean: (!vals.is_empty()).then(|| metrics::mean(&vals)),
            max,
        });
    }

    /// Writes the CSV tables and `report.html` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_csv(&dir.join("frontier.csv"), &self.frontiers)?;
        write_csv(&dir.join("operating_points.csv"), &self.operating_points)?;
        if !self.difficulty.is_empty() {
            write_csv(&dir.join("difficulty.csv"), &self.difficulty)?;
        }
        if !self.ood_gaps.is_empty() {
            write_csv(&dir.join("ood_gap.csv"), &self.ood_gaps)?;
        }
        if !self.rc_summaries.is_empty() {
            write_csv(&dir.join("rc_summary.csv"), &self.rc_summaries)?;
        }
        let html = dir.join("report.html");
        std::fs::write(&html, self.html()).map_err(|e| Error::io(&html, e))
    }

    pub fn html(&self) -> String {
        let mut s = String::from(
            "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>ANN benchmark report</title>\n\
             <style>body{font-family:sans-serif;margin:2em}table{border-collapse:collapse;margin:1em 0}\
             td,th{border:1px solid #ccc;padding:2px 6px;font-size:13px}svg{border:1px solid #ddd}</style>\
             </head><body>\n<h1>ANN benchmark report</h1>\n",
        );
        let datasets: Vec<&str> = {
            let mut d: Vec<&str> = self.points.iter().map(|p| p.0.as_str()).collect();
            d.dedup();
            d.sort();
            d.dedup();
            d
        };
        for ds in datasets {
            let _ = writeln!(s, "<h2>{}</h2>", escape(ds));
            s.push_str(&self.plot(ds));
            let rows: Vec<&OperatingRow> = self.operating_points.iter().filter(|r| r.dataset == ds).collect();
            if !rows.is_empty() {
                s.push_str("<table><tr><th>threshold</th><th>family</th><th>recall</th><th>QPS</th><th>relative</th><th>build s</th><th>params</th></tr>\n");
                for r in rows {
                    let _ = writeln!(
                        s,
                        "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td></tr>",
                        r.threshold,
                        r.family,
                        opt(r.recall, 4),
                        opt(r.qps, 1),
                        opt(r.relative_qps, 3),
                        opt(r.build_seconds, 2),
                        escape(&format!(
                            "{} | {}",
                            r.build_params.as_deref().unwrap_or("-"),
                            r.query_params.as_deref().unwrap_or("-")
                        )),
                    );
                }
                s.push_str("</table>\n");
            }
        }
        if !self.difficulty.is_empty() {
            s.push_str("<h2>Hardest vs easiest queries</h2>\n<table><tr><th>dataset</th><th>threshold</th><th>family</th><th>mean</th><th>hardest</th><th>easiest</th></tr>\n");
            for r in &self.difficulty {
                let _ = writeln!(
                    s,
                    "<tr><td>{}</td><td>{}</td><td>{}</td><td>{:.4}</td><td>{:.4}</td><td>{:.4}</td></tr>",
                    escape(&r.dataset),
                    r.threshold,
                    r.family,
                    r.mean_recall,
                    r.hardest_recall,
                    r.easiest_recall
                );
            }
            s.push_str("</table>\n");
        }
        if !self.ood_gaps.is_empty() {
            s.push_str("<h2>In- vs out-of-distribution throughput</h2>\n<table><tr><th>ID</th><th>OOD</th><th>threshold</th><th>family</th><th>QPS ID</th><th>QPS OOD</th><th>ratio</th></tr>\n");
            for r in &self.ood_gaps {
                let _ = writeln!(
                    s,
                    "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td></tr>",
                    escape(&r.dataset_id),
                    escape(&r.dataset_ood),
                    r.threshold,
                    r.family,
                    opt(r.qps_id, 1),
                    opt(r.qps_ood, 1),
                    opt(r.ratio, 3)
                );
            }
            s.push_str("</table>\n");
        }
        if !self.rc_summaries.is_empty() {
            s.push_str("<h2>Relative contrast</h2>\n<table><tr><th>dataset</th><th>k</th><th>measure</th><th>defined</th><th>min</th><th>median</th><th>mean</th><th>max</th></tr>\n");
            for r in &self.rc_summaries {
                let _ = writeln!(
                    s,
                    "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}/{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td></tr>",
                    escape(&r.dataset),
                    r.k,
                    r.measure_used,
                    r.defined,
                    r.queries,
                    opt(r.min, 3),
                    opt(r.median, 3),
                    opt(r.mean, 3),
                    opt(r.max, 3)
                );
            }
            s.push_str("</table>\n");
        }
        s.push_str("</body></html>\n");
        s
    }

    /// Recall on x, log-scaled QPS on y; every configuration as a faint dot,
    /// each family's frontier as a line.
    fn plot(&self, dataset: &str) -> String {
        const W: f64 = 640.0;
        const H: f64 = 400.0;
        const M: f64 = 50.0;
        let pts: Vec<&(String, Family, f64, f64)> = self
            .points
            .iter()
            .filter(|p| p.0 == dataset && p.3 > 0.0)
            .collect();
        if pts.is_empty() {
            return String::new();
        }
        let x_min = pts.iter().map(|p| p.2).fold(1.0, f64::min).min(0.9).max(0.0);
        let x_min = (x_min * 10.0).floor() / 10.0;
        let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &pts {
            y_lo = y_lo.min(p.3.log10());
            y_hi = y_hi.max(p.3.log10());
        }
        let (y_lo, y_hi) = (y_lo.floor(), y_hi.ceil().max(y_lo.floor() + 1.0));
        let sx = |x: f64| M + (x - x_min) / (1.0 - x_min).max(1e-9) * (W - 2.0 * M);
        let sy = |q: f64| H - M - (q.log10() - y_lo) / (y_hi - y_lo) * (H - 2.0 * M);

        let mut s = String::new();
        let _ = writeln!(
            s,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
        );
        let _ = writeln!(
            s,
            "<line x1=\"{M}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/><line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{0}\" stroke=\"black\"/>",
            H - M,
            W - M
        );
        let ticks = ((1.0 - x_min) * 10.0).round() as usize;
        for i in 0..=ticks {
            let x = x_min + i as f64 / 10.0;
            let _ = writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"middle\">{x:.1}</text>",
                sx(x),
                H - M + 16.0
            );
        }
        let mut e = y_lo as i32;
        while e as f64 <= y_hi {
            let _ = writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"end\">1e{e}</text>",
                M - 4.0,
                sy(10f64.powi(e)) + 4.0
            );
            e += 1;
        }
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">recall</text><text x=\"14\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">QPS (log)</text>",
            W / 2.0,
            H - 10.0,
            H / 2.0,
            H / 2.0
        );
        let families: Vec<Family> = Family::ALL.into_iter().filter(|f| pts.iter().any(|p| p.1 == *f)).collect();
        for (i, f) in families.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            for p in pts.iter().filter(|p| p.1 == *f) {
                let _ = writeln!(
                    s,
                    "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"2.5\" fill=\"{color}\" fill-opacity=\"0.35\"/>",
                    sx(p.2),
                    sy(p.3)
                );
            }
            let line: Vec<String> = self
                .frontiers
                .iter()
                .filter(|r| r.dataset == dataset && r.family == *f && r.qps > 0.0)
                .map(|r| format!("{:.1},{:.1}", sx(r.recall), sy(r.qps)))
                .collect();
            let _ = writeln!(
                s,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
                line.join(" ")
            );
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{f}</text>",
                W - M - 110.0,
                M + 14.0 * i as f64
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

const COLORS: [&str; 7] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"];

/// Mean recall of the given query ids in one record.
pub fn subset_recall(r: &BenchmarkRecord, ids: &[u32]) -> f64 {
    let vals: Vec<f64> = ids
        .iter()
        .filter_map(|&i| r.recalls.get(i as usize).copied())
        .collect();
    metrics::mean(&vals)
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_else(|| "-".into())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let io = |e: csv::Error| Error::format(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One row per record: dataset, family, parameters, status and summary numbers.
pub fn write_summary_csv(path: &Path, records: &[BenchmarkRecord]) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        dataset: &'a str,
        family: Family,
        build_params: String,
        query_params: String,
        status: &'a str,
        mean_recall: f64,
        qps: f64,
        build_seconds: f64,
        mean_candidates: f64,
    }
    let rows: Vec<Row> = records
        .iter()
        .map(|r| Row {
            dataset: &r.dataset,
            family: r.family,
            build_params: fmt_params(&r.build_params),
            query_params: fmt_params(&r.query_params),
            status: if r.is_ok() { "ok" } else { "failed" },
            mean_recall: r.mean_recall,
            qps: r.qps,
            build_seconds: r.build_seconds,
            mean_candidates: r.mean_candidates,
        })
        .collect();
    write_csv(path, &rows)
}
