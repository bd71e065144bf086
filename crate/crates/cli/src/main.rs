use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use streamclust::benchmark::{format_table, summarize, write_rows_csv, BenchMatrix};
use streamclust::events::write_ndjson;
use streamclust::io::{parse_columns, CsvPoints};
use streamclust::synth::{generate, write_csv, SyntheticSpec};
use streamclust::{Engine, EngineConfig, Error, Execution, MergeMode, MetricMode, ModelSnapshot, RunReport};

#[derive(Parser)]
#[command(name = "streamclust", version, about = "Single-pass clustering of correlated data streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster a CSV stream and write a JSON report.
    Cluster(ClusterArgs),
    /// Generate a synthetic Gaussian-mixture stream as CSV.
    Synth(SynthArgs),
    /// Run the synthetic benchmark matrix.
    Bench(BenchArgs),
    /// Summarize a report written by `cluster`.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Full,
    Diagonal,
}

impl From<Metric> for MetricMode {
    fn from(m: Metric) -> Self {
        match m {
            Metric::Full => MetricMode::Full,
            Metric::Diagonal => MetricMode::Diagonal,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Merge {
    Stop,
    Exhaustive,
}

#[derive(Args)]
struct EngineFlags {
    /// Points between secondary compressions.
    #[arg(long)]
    chunk: Option<usize>,
    /// Significance level of the Hotelling regions.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum)]
    metric: Option<Metric>,
    #[arg(long)]
    init_clusters: Option<usize>,
    #[arg(long)]
    bootstrap_size: Option<usize>,
    #[arg(long)]
    rs_capacity: Option<usize>,
    #[arg(long)]
    theta0: Option<f64>,
    #[arg(long)]
    theta1: Option<f64>,
    /// Chi-square level of the point/point pairing threshold.
    #[arg(long)]
    theta2_level: Option<f64>,
    #[arg(long, value_enum)]
    merge: Option<Merge>,
    /// Evaluate distances on the calling thread only.
    #[arg(long)]
    sequential: bool,
}

impl EngineFlags {
    fn apply(&self, mut c: EngineConfig) -> EngineConfig {
        if let Some(v) = self.chunk {
            c.chunk_size = v;
        }
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.metric {
            c.metric_mode = v.into();
        }
        if let Some(v) = self.init_clusters {
            c.init_clusters = v;
        }
        if self.bootstrap_size.is_some() {
            c.bootstrap_size = self.bootstrap_size;
        }
        if self.rs_capacity.is_some() {
            c.rs_capacity = self.rs_capacity;
        }
        if let Some(v) = self.theta0 {
            c.theta0 = v;
        }
        if let Some(v) = self.theta1 {
            c.theta1 = v;
        }
        if let Some(v) = self.theta2_level {
            c.theta2_level = v;
        }
        if let Some(m) = self.merge {
            c.merge_mode = match m {
                Merge::Stop => MergeMode::StopAtFirstFailure,
                Merge::Exhaustive => MergeMode::Exhaustive,
            };
        }
        if self.sequential {
            c.execution = Execution::Sequential;
        }
        c
    }
}

#[derive(Args)]
struct ClusterArgs {
    /// Input CSV; standard input when absent.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Report path; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write decision and merge events as NDJSON.
    #[arg(long)]
    events: Option<PathBuf>,
    /// Write the cluster count at every secondary compression as CSV.
    #[arg(long)]
    series: Option<PathBuf>,
    /// Columns to use, by header name or 1-based position.
    #[arg(long)]
    cols: Option<String>,
    /// Continue from a saved report or snapshot.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    engine: EngineFlags,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 5)]
    p: usize,
    #[arg(long, default_value_t = 1000)]
    n_per_cluster: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Append the true component as a `label` column.
    #[arg(long)]
    labels: bool,
    /// Emit components one after another instead of interleaved.
    #[arg(long)]
    no_shuffle: bool,
    /// Eigenvalue interval, `lo,hi`.
    #[arg(long, value_parser = parse_range)]
    eig_range: Option<(f64, f64)>,
    #[arg(long, value_parser = parse_range)]
    mean_range: Option<(f64, f64)>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [5, 20])]
    k: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [5, 10, 20])]
    p: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [25, 50])]
    chunk: Vec<usize>,
    #[arg(long, value_delimiter = ',', value_enum, default_values = ["full", "diagonal"])]
    metric: Vec<Metric>,
    /// Number of seeds per cell.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value_t = 1000)]
    n_per_cluster: usize,
    /// Seeded clusters per run; half the true count by default.
    #[arg(long)]
    init_clusters: Option<usize>,
    /// Per-run rows as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Run cells one after another.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct InspectArgs {
    report: PathBuf,
    /// Also list every cluster.
    #[arg(long)]
    clusters: bool,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo = a.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let hi = b.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((lo, hi))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn cmd_cluster(a: ClusterArgs) -> anyhow::Result<()> {
    let input: Box<dyn Read> = match &a.input {
        Some(p) => Box::new(BufReader::new(
            File::open(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(io::stdin().lock()),
    };
    let cols = a.cols.as_deref().map(parse_columns).transpose()?;
    let points = CsvPoints::new(input, cols.as_deref())?;

    let engine = match &a.resume {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            let mut snap = ModelSnapshot::from_json(&text)?;
            snap.config = a.engine.apply(snap.config);
            info!("resuming after {} points", snap.counters.processed);
            Engine::resume(&snap)?
        }
        None => Engine::new(a.engine.apply(EngineConfig::default()))?,
    };
    let mut engine = engine.record_events(a.events.is_some());
    for x in points {
        engine.push(&x?)?;
    }
    let (_, report, events) = engine.finish()?;
    info!(
        "{} points, {} clusters, {} retained, {:.3}s",
        report.counters.processed,
        report.cluster_count,
        report.retained.len(),
        report.wall_time_secs
    );

    let mut out = output(a.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &report)?;
    writeln!(out)?;
    out.flush()?;
    if let Some(p) = &a.events {
        write_ndjson(create(p)?, &events)?;
    }
    if let Some(p) = &a.series {
        let mut w = create(p)?;
        writeln!(w, "processed,clusters_before,clusters_after,retained,merges")?;
        for s in &report.series {
            writeln!(w, "{},{},{},{},{}", s.processed, s.clusters_before, s.clusters_after, s.retained, s.merges)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> anyhow::Result<()> {
    let mut spec = SyntheticSpec {
        k: a.k,
        p: a.p,
        points_per_cluster: a.n_per_cluster,
        seed: a.seed,
        shuffle: !a.no_shuffle,
        ..SyntheticSpec::default()
    };
    if let Some(r) = a.eig_range {
        spec.eig_range = r;
    }
    if let Some(r) = a.mean_range {
        spec.mean_range = r;
    }
    let data = generate(&spec)?;
    write_csv(output(a.out.as_deref())?, &data, a.labels)?;
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> anyhow::Result<()> {
    let matrix = BenchMatrix {
        ks: a.k,
        ps: a.p,
        chunks: a.chunk,
        metrics: a.metric.into_iter().map(Into::into).collect(),
        seeds: (0..a.seeds).collect(),
        points_per_cluster: a.n_per_cluster,
        init_clusters: a.init_clusters,
        ..BenchMatrix::default()
    };
    let exec = if a.sequential { Execution::Sequential } else { Execution::Parallel };
    info!("running {} cells", matrix.cells().len());
    let rows = matrix.run(exec)?;
    if let Some(p) = &a.csv {
        write_rows_csv(create(p)?, &rows)?;
    }
    print!("{}", format_table(&summarize(&rows)));
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&a.report).map_err(|e| Error::Io(format!("{}: {e}", a.report.display())))?;
    let report: RunReport = serde_json::from_str(&text).map_err(Error::from)?;
    // The embedded snapshot must restore to a consistent model.
    let model = report.snapshot.to_model()?;
    let c = &report.counters;
    println!("dimension        {}", report.dim.map_or("-".into(), |d| d.to_string()));
    println!("processed        {}", c.processed);
    println!("clusters         {}", report.cluster_count);
    println!("retained         {}", report.retained.len());
    println!("outliers         {} ({} evicted, {} non-finite)", report.outliers.len(), c.evicted, c.non_finite);
    println!("clustered points {}", model.clustered_points());
    println!(
        "merges           {} cluster/cluster, {} point/cluster, {} point/point",
        c.cluster_merges, c.point_cluster_merges, c.point_pair_merges
    );
    println!("peak scalars     {}", report.peak_stored_scalars);
    println!("wall time        {:.3}s", report.wall_time_secs);
    if a.clusters {
        let mut sorted: Vec<_> = report.clusters.iter().collect();
        sorted.sort_by(|x, y| y.n.cmp(&x.n).then(x.id.cmp(&y.id)));
        println!("\n{:>6} {:>8} {:>8} {:>8}  fallback", "id", "n", "lambda_i", "lambda_d");
        for cl in sorted {
            let fb = cl.weights.fallback.map_or("-".to_string(), |f| format!("{f:?}"));
            println!("{:>6} {:>8} {:>8.4} {:>8.4}  {fb}", cl.id, cl.n, cl.weights.lambda_i, cl.weights.lambda_d);
        }
    }
    Ok(())
}

/// 2 for bad input, 3 for broken internal invariants.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Invariant(_)) => 3,
        Some(
            Error::Parse { .. }
            | Error::Io(_)
            | Error::InvalidInput(_)
            | Error::DimensionMismatch { .. }
            | Error::StreamDimension { .. }
            | Error::LabelMismatch(_)
            | Error::Serde(_),
        ) => 2,
        Some(_) => 3,
        None if err.downcast_ref::<io::Error>().is_some() => 2,
        None => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STREAMCLUST_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Cluster(a) => cmd_cluster(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Inspect(a) => cmd_inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
