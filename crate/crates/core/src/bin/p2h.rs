use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use p2hnns::bench::{run_bench, Algorithm, BenchConfig, BudgetSpec};
use p2hnns::index::HEADER_BYTES;
use p2hnns::oracle::{CacheStatus, GroundTruthCache};
use p2hnns::{
    gaussian_points, generate_queries, load_vectors, AnyTree, Error, IndexHeader, PointSet,
    Preference, TreeKind, VectorFormat,
};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;

#[derive(Parser)]
#[command(
    name = "p2h",
    version,
    about = "Point-to-hyperplane nearest neighbor search"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build Ball-Tree or BC-Tree index files.
    Build(BuildArgs),
    /// Compute (or reuse cached) exact ground truth for generated queries.
    Groundtruth(GroundtruthArgs),
    /// Sweep algorithms, leaf sizes, k and budgets; write CSV and JSON reports.
    Bench(BenchArgs),
    /// Describe a dataset and/or an index file.
    Info(InfoArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Vector file (fvecs, bvecs, csv or raw f32).
    #[arg(long, required_unless_present = "synthetic")]
    data: Option<PathBuf>,
    /// File format; inferred from the extension when omitted.
    #[arg(long)]
    format: Option<VectorFormat>,
    /// Use `N,D` standard Gaussian points instead of a file.
    #[arg(long, conflicts_with = "data", value_name = "N,D")]
    synthetic: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BuildArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_delimiter = ',', default_value = "bc")]
    algo: Vec<Algorithm>,
    #[arg(long, value_delimiter = ',', default_value = "100")]
    n0: Vec<usize>,
    /// Output file, or a directory when several indexes are built.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GroundtruthArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 100)]
    queries: usize,
    /// Largest k to store; a list uses its maximum.
    #[arg(long, value_delimiter = ',', default_value = "40")]
    k: Vec<usize>,
    /// Cache directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_delimiter = ',', default_value = "ball,bc")]
    algo: Vec<Algorithm>,
    #[arg(long, value_delimiter = ',', default_value = "100")]
    n0: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,10,20,40")]
    k: Vec<usize>,
    /// `inf`, an absolute count, a fraction such as `0.05`, or a percentage.
    #[arg(long, value_delimiter = ',', default_value = "inf")]
    budget: Vec<BudgetSpec>,
    #[arg(long, default_value_t = Preference::Center)]
    preference: Preference,
    #[arg(long, default_value_t = 100)]
    queries: usize,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Report prefix: writes `<out>.csv` and `<out>.json`.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth cache directory; defaults to the report's directory.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args)]
struct InfoArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    format: Option<VectorFormat>,
    #[arg(long)]
    index: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Build(a) => cmd_build(a),
        Command::Groundtruth(a) => cmd_groundtruth(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Info(a) => cmd_info(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_DATA)
        }
    }
}

fn resolve_format(
    path: &Path,
    format: Option<VectorFormat>,
) -> std::result::Result<VectorFormat, Failure> {
    format
        .or_else(|| VectorFormat::from_extension(path))
        .ok_or_else(|| {
            Failure::Usage(format!(
                "cannot infer format of {}; pass --format",
                path.display()
            ))
        })
}

fn load_data(args: &DataArgs) -> std::result::Result<PointSet, Failure> {
    if let Some(spec) = &args.synthetic {
        let parsed: Option<(usize, usize)> = spec
            .split_once(',')
            .and_then(|(n, d)| Some((n.trim().parse().ok()?, d.trim().parse().ok()?)));
        let (n, d) = parsed
            .ok_or_else(|| Failure::Usage(format!("bad --synthetic '{spec}', expected N,D")))?;
        return Ok(gaussian_points(n, d, args.seed)?);
    }
    let path = args
        .data
        .as_ref()
        .expect("clap requires --data or --synthetic");
    let format = resolve_format(path, args.format)?;
    Ok(load_vectors(path, format)?)
}

fn tree_kind(algo: Algorithm) -> std::result::Result<TreeKind, Failure> {
    match algo {
        Algorithm::Ball => Ok(TreeKind::Ball),
        Algorithm::Bc | Algorithm::BcWoCone | Algorithm::BcWoBall | Algorithm::BcWoBoth => {
            Ok(TreeKind::Bc)
        }
        Algorithm::Oracle => Err(Failure::Usage("the oracle has no index to build".into())),
    }
}

fn cmd_build(args: BuildArgs) -> CmdResult {
    let data = load_data(&args.data)?;
    let mut kinds: Vec<TreeKind> = Vec::new();
    for &a in &args.algo {
        let kind = tree_kind(a)?;
        if !kinds.contains(&kind) {
            kinds.push(kind);
        }
    }
    let single = kinds.len() == 1 && args.n0.len() == 1;
    if !single {
        std::fs::create_dir_all(&args.out).map_err(Error::from)?;
    }
    for &kind in &kinds {
        for &n0 in &args.n0 {
            let started = Instant::now();
            let tree = AnyTree::build(kind, &data, n0, args.data.seed)?;
            let build_time_us = started.elapsed().as_secs_f64() * 1e6;
            let bytes = tree.to_bytes();
            let path = if single {
                args.out.clone()
            } else {
                args.out.join(format!("{}-n0{n0}.p2ht", kind.name()))
            };
            std::fs::write(&path, &bytes).map_err(Error::from)?;
            println!(
                "{}",
                json!({
                    "algorithm": kind.name(),
                    "n0": n0,
                    "seed": args.data.seed,
                    "n": data.len(),
                    "dim": data.dim(),
                    "build_time_us": build_time_us,
                    "index_bytes": bytes.len(),
                    "nodes": tree.num_nodes(),
                    "leaves": tree.num_leaves(),
                    "depth": tree.depth(),
                    "path": path.display().to_string(),
                })
            );
        }
    }
    Ok(())
}

fn cmd_groundtruth(args: GroundtruthArgs) -> CmdResult {
    let data = load_data(&args.data)?;
    let k_max = args.k.iter().copied().max().unwrap_or(1);
    if k_max == 0 || args.queries == 0 {
        return Err(Failure::Usage("k and --queries must be positive".into()));
    }
    let queries = generate_queries(&data, args.queries, args.data.seed)?;
    let cache = GroundTruthCache::new(&args.out);
    let (gt, status, path) =
        cache.load_or_compute(&data, data.fingerprint(), &queries, args.data.seed, k_max)?;
    println!(
        "{}",
        json!({
            "path": path.display().to_string(),
            "cache": if status == CacheStatus::Hit { "hit" } else { "miss" },
            "queries": gt.neighbors.len(),
            "k_max": gt.k_max,
        })
    );
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> CmdResult {
    let config = BenchConfig {
        algorithms: args.algo.clone(),
        leaf_sizes: args.n0.clone(),
        ks: args.k.clone(),
        budgets: args.budget.clone(),
        preference: args.preference,
        seed: args.data.seed,
        queries: args.queries,
        repetitions: args.reps,
        threads: args.threads,
    };
    config
        .validate()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let data = load_data(&args.data)?;
    let queries = generate_queries(&data, config.queries, config.seed)?;
    let cache_dir = args.cache.clone().unwrap_or_else(|| {
        args.out
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    });
    let (truth, status, _) = GroundTruthCache::new(cache_dir).load_or_compute(
        &data,
        data.fingerprint(),
        &queries,
        config.seed,
        config.k_max(),
    )?;
    let report = run_bench(&data, &queries, &truth, &config)?;
    let csv_path = with_suffix(&args.out, "csv");
    let json_path = with_suffix(&args.out, "json");
    report.write_csv(&csv_path)?;
    report.write_json(&json_path)?;
    eprintln!(
        "ground truth: {}",
        if status == CacheStatus::Hit {
            "cached"
        } else {
            "computed"
        }
    );
    for a in &report.aggregates {
        println!(
            "{:<11} n0={:<5} k={:<3} budget={:<6} recall={:.4} time_us={:.1} verified={:.1} ips={:.1}",
            a.algorithm.name(),
            a.leaf_size,
            a.k,
            a.budget,
            a.recall.mean,
            a.time_us.mean,
            a.candidates_verified.mean,
            a.center_ip_count.mean,
        );
    }
    eprintln!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(())
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn cmd_info(args: InfoArgs) -> CmdResult {
    if args.data.is_none() && args.index.is_none() {
        return Err(Failure::Usage("pass --data, --index or both".into()));
    }
    let data = match &args.data {
        Some(path) => {
            let format = resolve_format(path, args.format)?;
            let data = load_vectors(path, format)?;
            println!(
                "{}",
                json!({
                    "dataset": path.display().to_string(),
                    "n": data.len(),
                    "raw_dim": data.raw_dim(),
                    "dim": data.dim(),
                    "fingerprint": format!("{:016x}", data.fingerprint()),
                    "mean_norm": data.mean_raw_norm(),
                })
            );
            Some(data)
        }
        None => None,
    };
    if let Some(path) = &args.index {
        let bytes = std::fs::read(path).map_err(Error::from)?;
        let header = IndexHeader::parse(&bytes)?;
        let mut info = json!({
            "index": path.display().to_string(),
            "kind": header.kind.name(),
            "version": header.version,
            "n": header.n,
            "dim": header.dim,
            "n0": header.leaf_size,
            "seed": header.seed,
            "bytes": bytes.len(),
            "header_bytes": HEADER_BYTES,
        });
        if let Some(data) = &data {
            let tree = AnyTree::from_bytes(&bytes, data)?;
            info["nodes"] = json!(tree.num_nodes());
            info["leaves"] = json!(tree.num_leaves());
            info["depth"] = json!(tree.depth());
        }
        println!("{info}");
    }
    Ok(())
}
