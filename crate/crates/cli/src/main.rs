use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use annbench::datasets::{self, Dataset, IdGaussian, OodMips, OodShifted, Split};
use annbench::error::Error;
use annbench::metrics::{difficulty_split, pareto_frontier, rc_profile, write_rc_csv};
use annbench::oracle::build_ground_truth;
use annbench::report::{fmt_params, subset_recall, ReportBundle};
use annbench::runner::{
    append_record, completed, expand_grid, family_operating_points, ood_gap, read_records, run_benchmark,
    BenchmarkRecord, GridConfig, RunOptions,
};

#[derive(Parser)]
#[command(name = "annbench", version, about = "Synthetic ANN benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Generate(GenerateArgs),
    /// Compute exact ground truth for the test (and train) queries.
    Groundtruth {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 100)]
        k: usize,
    },
    /// Run a parameter grid and append JSONL records.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's k.
        #[arg(long)]
        k: Option<usize>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Start over instead of skipping runs already in `out`.
        #[arg(long)]
        force: bool,
    },
    /// Print the recall/QPS frontier of each dataset and family.
    Pareto {
        records: PathBuf,
        /// Also print each family's operating point at these recall levels.
        #[arg(long)]
        threshold: Vec<f64>,
    },
    /// Relative contrast per test query and the hardest/easiest split.
    Difficulty {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 100)]
        k: usize,
        /// Queries on each side of the split.
        #[arg(long, default_value_t = 100)]
        m: usize,
        /// Records whose operating points are broken down by split.
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long, default_value_t = 0.9)]
        threshold: f64,
        /// CSV of per-query contrast.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Operating-point throughput on in-distribution vs out-of-distribution queries.
    Oodgap {
        id_records: PathBuf,
        ood_records: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        threshold: f64,
    },
    /// Write CSV tables and a static HTML report.
    Report {
        #[arg(required = true)]
        records: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Operating-point recall levels; defaults to 0.95 and 0.9.
        #[arg(long)]
        threshold: Vec<f64>,
        /// Dataset directories to summarize relative contrast and difficulty for.
        #[arg(long)]
        dataset: Vec<PathBuf>,
        /// Dataset names to compare as `ID:OOD`.
        #[arg(long = "ood-pair")]
        ood_pair: Vec<String>,
        #[arg(long, default_value_t = 100)]
        k: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    IdGaussian,
    OodShifted,
    OodMips,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
    /// Mixture components (id-gaussian, ood-shifted).
    #[arg(long)]
    clusters: Option<usize>,
    /// Test queries.
    #[arg(long)]
    queries: Option<usize>,
    /// Training queries (ood kinds).
    #[arg(long)]
    train: Option<usize>,
    /// Query displacement in units of the between-cluster spread (ood-shifted).
    #[arg(long, default_value_t = 3.0)]
    shift: f32,
    /// Norm of the query mean (ood-mips).
    #[arg(long, default_value_t = 3.0)]
    query_norm: f32,
    /// L2-normalize and use cosine (id-gaussian, ood-shifted).
    #[arg(long)]
    cosine: bool,
    /// Threshold at corpus column means and use Hamming.
    #[arg(long)]
    binarize: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.downcast_ref::<Error>().map_or("error", Error::category);
            eprintln!("error[{category}]: {}", one_line(&e));
            ExitCode::FAILURE
        }
    }
}

/// The error chain on one line, skipping causes already quoted by their parent.
fn one_line(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg.replace('\n', " ")
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Generate(args) => generate(&args),
        Command::Groundtruth { dataset, k } => groundtruth(&dataset, k),
        Command::Run {
            dataset,
            config,
            out,
            k,
            seed,
            force,
        } => run(&dataset, &config, &out, k, seed, force),
        Command::Pareto { records, threshold } => pareto(&records, &threshold),
        Command::Difficulty {
            dataset,
            k,
            m,
            records,
            threshold,
            out,
        } => difficulty(&dataset, k, m, records.as_deref(), threshold, out.as_deref()),
        Command::Oodgap {
            id_records,
            ood_records,
            threshold,
        } => oodgap(&id_records, &ood_records, threshold),
        Command::Report {
            records,
            out,
            threshold,
            dataset,
            ood_pair,
            k,
        } => report(&records, &out, &threshold, &dataset, &ood_pair, k),
    }
}

fn generate(a: &GenerateArgs) -> Result<()> {
    if a.out.join(datasets::META_FILE).exists() && !a.force {
        return Err(Error::InvalidParameter(format!(
            "{} already holds a dataset; pass --force to overwrite",
            a.out.display()
        ))
        .into());
    }
    let measure = if a.cosine {
        annbench::vector::Measure::Cosine
    } else {
        annbench::vector::Measure::Euclidean
    };
    let mut ds = match a.kind {
        Kind::IdGaussian => {
            let mut p = IdGaussian::new(a.n, a.d, a.seed);
            p.clusters = a.clusters.unwrap_or(p.clusters);
            p.queries = a.queries.unwrap_or(p.queries);
            p.normalize = a.cosine;
            p.measure = measure;
            datasets::generate_id_gaussian(&p)?
        }
        Kind::OodShifted => {
            let mut p = OodShifted::new(a.n, a.d, a.shift, a.seed);
            p.clusters = a.clusters.unwrap_or(p.clusters);
            p.test = a.queries.unwrap_or(p.test);
            p.train = a.train.unwrap_or(p.train);
            p.normalize = a.cosine;
            p.measure = measure;
            datasets::generate_ood_shifted(&p)?
        }
        Kind::OodMips => {
            if a.cosine {
                bail!(Error::InvalidParameter("ood-mips is an inner-product workload".into()));
            }
            let mut p = OodMips::new(a.n, a.d, a.query_norm, a.seed);
            p.test = a.queries.unwrap_or(p.test);
            p.train = a.train.unwrap_or(p.train);
            datasets::generate_ood_mips(&p)?
        }
    };
    if a.binarize {
        ds = ds.binarized()?;
    }
    ds.save(&a.out)?;
    // ground truth from an earlier dataset in the same directory is stale
    for split in [Split::Test, Split::Train] {
        let p = datasets::gt_path(&a.out, split);
        if p.exists() {
            std::fs::remove_file(&p).with_context(|| format!("removing {}", p.display()))?;
        }
    }
    println!(
        "{}: {} corpus x {} dims, {} test, {} train queries",
        ds.name,
        ds.corpus.rows(),
        ds.corpus.dim(),
        ds.test.rows(),
        ds.train.as_ref().map_or(0, |t| t.rows())
    );
    Ok(())
}

fn groundtruth(dir: &Path, k: usize) -> Result<()> {
    let ds = Dataset::load(dir)?;
    let space = ds.space()?;
    let mut splits = vec![(Split::Test, ds.test_queries())];
    if let Some(t) = ds.train_queries() {
        splits.push((Split::Train, t));
    }
    for (split, queries) in splits {
        let gt = build_ground_truth(&space, &queries, k)?;
        let path = datasets::gt_path(dir, split);
        datasets::write_ground_truth(&path, &gt)?;
        println!("{}: {} queries, k={}", path.display(), gt.queries(), gt.k());
    }
    Ok(())
}

fn run(dir: &Path, config: &Path, out: &Path, k: Option<usize>, seed: Option<u64>, force: bool) -> Result<()> {
    let cfg = GridConfig::load(config)?;
    let runs = expand_grid(&cfg)?;
    let ds = Dataset::load(dir)?;
    let gt = datasets::load_ground_truth(dir, Split::Test)?;
    let k = k.unwrap_or(cfg.k);
    if k > gt.k() {
        bail!(Error::InvalidParameter(format!(
            "k={k} exceeds the ground truth depth {}; rerun groundtruth with a larger k",
            gt.k()
        )));
    }
    if force && out.exists() {
        std::fs::remove_file(out).with_context(|| format!("removing {}", out.display()))?;
    }
    let skip = if out.exists() {
        completed(&read_records(out)?)
    } else {
        Default::default()
    };
    let opts = RunOptions {
        k,
        seed: seed.unwrap_or(cfg.seed),
        skip,
    };
    let mut stdout = std::io::stdout().lock();
    let records = run_benchmark(&ds, &gt, &runs, &opts, |r| {
        append_record(out, r)?;
        let _ = writeln!(stdout, "{}", summary_line(r));
        Ok(())
    })?;
    let failed = records.iter().filter(|r| !r.is_ok()).count();
    eprintln!("{} runs recorded, {failed} failed", records.len());
    Ok(())
}

fn summary_line(r: &BenchmarkRecord) -> String {
    match &r.error {
        Some(e) => format!("{} {} {} FAILED {e}", r.family, fmt_params(&r.build_params), fmt_params(&r.query_params)),
        None => format!(
            "{} {} {} recall={:.4} qps={:.1}",
            r.family,
            fmt_params(&r.build_params),
            fmt_params(&r.query_params),
            r.mean_recall,
            r.qps
        ),
    }
}

/// Records for analysis; unlike resuming a run, a missing file is an error.
fn load_records(path: &Path) -> Result<Vec<BenchmarkRecord>> {
    if !path.exists() {
        return Err(Error::Io {
            path: path.to_owned(),
            source: std::io::ErrorKind::NotFound.into(),
        }
        .into());
    }
    Ok(read_records(path)?)
}

fn pareto(path: &Path, thresholds: &[f64]) -> Result<()> {
    let records = load_records(path)?;
    let bundle = ReportBundle::from_records(&records, thresholds);
    println!("dataset\tfamily\tbuild\tquery\trecall\tqps");
    for f in &bundle.frontiers {
        println!(
            "{}\t{}\t{}\t{}\t{:.6}\t{:.3}",
            f.dataset, f.family, f.build_params, f.query_params, f.recall, f.qps
        );
    }
    if !thresholds.is_empty() {
        println!();
        println!("dataset\tthreshold\tfamily\tbuild\tquery\trecall\tqps\trelative_qps");
        for o in &bundle.operating_points {
            let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
            println!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                o.dataset,
                o.threshold,
                o.family,
                o.build_params.as_deref().unwrap_or("-"),
                o.query_params.as_deref().unwrap_or("-"),
                opt(o.recall),
                opt(o.qps),
                opt(o.relative_qps)
            );
        }
    }
    Ok(())
}

fn difficulty(
    dir: &Path,
    k: usize,
    m: usize,
    records: Option<&Path>,
    threshold: f64,
    out: Option<&Path>,
) -> Result<()> {
    let ds = Dataset::load(dir)?;
    let profile = rc_profile(&ds.space()?, &ds.test_queries(), k)?;
    let (hardest, easiest) = difficulty_split(&profile, m)?;
    match out {
        Some(p) => {
            let f = std::fs::File::create(p).map_err(|e| Error::Io {
                path: p.to_owned(),
                source: e,
            })?;
            write_rc_csv(std::io::BufWriter::new(f), &profile, &hardest, &easiest)
                .with_context(|| format!("writing {}", p.display()))?;
        }
        None => write_rc_csv(std::io::stdout().lock(), &profile, &hardest, &easiest)?,
    }
    if let Some(rpath) = records {
        let recs: Vec<BenchmarkRecord> = load_records(rpath)?
            .into_iter()
            .filter(|r| r.dataset == ds.name)
            .collect();
        eprintln!("family\tmean\thardest\teasiest");
        for (family, op) in family_operating_points(&recs, threshold) {
            match op {
                Some(r) => eprintln!(
                    "{family}\t{:.4}\t{:.4}\t{:.4}",
                    r.mean_recall,
                    subset_recall(r, &hardest),
                    subset_recall(r, &easiest)
                ),
                None => eprintln!("{family}\t-\t-\t-"),
            }
        }
    }
    Ok(())
}

fn oodgap(id: &Path, ood: &Path, threshold: f64) -> Result<()> {
    let gaps = ood_gap(&load_records(id)?, &load_records(ood)?, threshold);
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
    println!("family\tqps_id\tqps_ood\tratio");
    for (family, g) in gaps {
        println!("{family}\t{}\t{}\t{}", opt(g.qps_id), opt(g.qps_ood), opt(g.ratio));
    }
    Ok(())
}

fn report(
    paths: &[PathBuf],
    out: &Path,
    thresholds: &[f64],
    dataset_dirs: &[PathBuf],
    pairs: &[String],
    k: usize,
) -> Result<()> {
    let mut records = Vec::new();
    for p in paths {
        records.extend(load_records(p)?);
    }
    let thresholds = if thresholds.is_empty() { &[0.95, 0.9][..] } else { thresholds };
    let mut bundle = ReportBundle::from_records(&records, thresholds);
    for dir in dataset_dirs {
        let ds = Dataset::load(dir)?;
        let profile = rc_profile(&ds.space()?, &ds.test_queries(), k)?;
        bundle.add_rc_summary(&ds.name, &profile);
        let m = (profile.defined() / 2).min(100);
        if m > 0 {
            let (hardest, easiest) = difficulty_split(&profile, m)?;
            for &t in thresholds {
                bundle.add_difficulty(&records, &ds.name, t, &hardest, &easiest);
            }
        }
    }
    let mut by_name: BTreeMap<&str, Vec<BenchmarkRecord>> = BTreeMap::new();
    for r in &records {
        by_name.entry(r.dataset.as_str()).or_default().push(r.clone());
    }
    for pair in pairs {
        let (id, ood) = pair
            .split_once(':')
            .ok_or_else(|| Error::InvalidParameter(format!("--ood-pair `{pair}` is not ID:OOD")))?;
        let (Some(a), Some(b)) = (by_name.get(id), by_name.get(ood)) else {
            bail!(Error::InvalidParameter(format!("no records for both sides of `{pair}`")));
        };
        for &t in thresholds {
            bundle.add_ood_gap(id, ood, t, &ood_gap(a, b, t));
        }
    }
    bundle.write(out)?;
    let points: usize = records.iter().filter(|r| r.is_ok()).count();
    let frontier = pareto_frontier(
        &records
            .iter()
            .filter(|r| r.is_ok())
            .map(|r| r.pareto_point())
            .collect::<Vec<_>>(),
    )
    .len();
    println!(
        "{}: {points} points, {frontier} on the overall frontier",
        out.join("report.html").display()
    );
    Ok(())
}
