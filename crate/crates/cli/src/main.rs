//! `tio` — train, score, retrieve, explain, and benchmark over embedding
//! bundles.
//!
//! Exit codes: 0 success, 1 runtime abort (e.g. non-finite gradient),
//! 2 usage or validation error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tio_core::bench::{bench_csv, run_bench, BenchParams};
use tio_core::bundle::{load_bundle, write_bundle};
use tio_core::explain::{explain_frame, explanations_to_jsonl};
use tio_core::gat::attention;
use tio_core::grad::TrainError;
use tio_core::graph::{build_graph, RelationPolicy};
use tio_core::infer::{retrieve_keywords, score_video, video_index_by_id};
use tio_core::metrics::{metrics_csv, recall_at_k};
use tio_core::model::Model;
use tio_core::synth::{generate_synthetic_bundle, SynthSpec};
use tio_core::train::{history_to_csv, train, TrainConfig};
use tio_core::Bundle64;

#[derive(Parser)]
#[command(name = "tio", version, about = "Knowledge-graph attention engine over embedding bundles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic embedding bundle.
    Synth(SynthArgs),
    /// Train on every video of a bundle and write a checkpoint.
    Train(TrainArgs),
    /// Emit frame-level and video-level anomaly scores.
    Detect(DetectArgs),
    /// Rank the keyword gallery against a query video.
    Retrieve(RetrieveArgs),
    /// Emit a frame's top attention triples as JSON Lines.
    Explain(ExplainArgs),
    /// Benchmark multi-head dot-product vs distance-kernel scoring.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output bundle directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 8)]
    videos: usize,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Class count including the trailing non-violence class.
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 6.0)]
    separation: f64,
    #[arg(long, default_value_t = 2)]
    objects: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Bundle directory.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 5e-5)]
    lr0: f64,
    #[arg(long, default_value_t = 0.95)]
    decay: f64,
    #[arg(long, default_value_t = 0.9)]
    margin: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_gat: f64,
    #[arg(long, default_value_t = 1.4)]
    w_cls: f64,
    #[arg(long, default_value_t = 1.3)]
    w_ret: f64,
    #[arg(long, default_value_t = 1.0)]
    w_gat: f64,
    #[arg(long, default_value_t = 0.25)]
    sigma_kernel: f64,
    #[arg(long, default_value_t = 3.0)]
    sigma_time: f64,
    /// Per-epoch loss history CSV output path.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Disable the learnable distance projection (frozen attention).
    #[arg(long)]
    frozen: bool,
    /// Keep only the nearest keyword per frame-object pair.
    #[arg(long)]
    nearest_keyword: bool,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Restrict to one video id (default: all videos).
    #[arg(long)]
    video: Option<String>,
    /// Decision threshold; adds a 0/1 decision column.
    #[arg(long)]
    theta: Option<f64>,
    /// Output CSV path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Query video id.
    #[arg(long)]
    video: String,
    /// Ranking CSV path; metrics always go to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    video: String,
    /// Frame index (1-based).
    #[arg(long)]
    frame: usize,
    /// Number of triples to keep; clamped to the incident edge count.
    #[arg(long, default_value_t = 5)]
    topk: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated ascending sequence lengths.
    #[arg(long, default_value = "64,256,1024,2048")]
    n_list: String,
    #[arg(long, default_value_t = 8)]
    heads: usize,
    #[arg(long, default_value_t = 1024)]
    dim_in: usize,
    #[arg(long, default_value_t = 64)]
    dim_head: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Error carrying the process exit code.
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Detect(args) => cmd_detect(args),
        Command::Retrieve(args) => cmd_retrieve(args),
        Command::Explain(args) => cmd_explain(args),
        Command::Bench(args) => cmd_bench(args),
    }
}

/// --seed flag, then the TIO_SEED environment variable, then 0.
fn resolve_seed(flag: Option<u64>) -> Result<u64, CliError> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var("TIO_SEED") {
        Ok(raw) => raw
            .parse::<u64>()
            .map_err(|_| CliError::usage(format!("TIO_SEED={raw:?} is not a valid seed"))),
        Err(_) => Ok(0),
    }
}

fn emit(out: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, content)
            .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn load_inputs(data: &Path, checkpoint: &Path) -> Result<(Bundle64, Model<f64>), CliError> {
    let bundle = load_bundle::<f64>(data)
        .map_err(|e| CliError::usage(format!("cannot load bundle: {e}")))?;
    let model = Model::<f64>::load(checkpoint)
        .map_err(|e| CliError::usage(format!("cannot load checkpoint: {e}")))?;
    if bundle.dim != model.dim() {
        return Err(CliError::usage(format!(
            "bundle dim {} does not match checkpoint dim {}",
            bundle.dim,
            model.dim()
        )));
    }
    Ok((bundle, model))
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let seed = resolve_seed(args.seed)?;
    let spec = SynthSpec {
        num_videos: args.videos,
        frames_per_video: args.frames,
        dim: args.dim,
        num_classes: args.classes,
        class_separation: args.separation,
        objects_per_frame: args.objects,
    };
    let bundle =
        generate_synthetic_bundle::<f64>(seed, &spec).map_err(|e| CliError::usage(e.to_string()))?;
    write_bundle(&bundle, &args.out).map_err(|e| CliError::runtime(e.to_string()))?;
    eprintln!(
        "wrote bundle: {} videos, {} classes, dim {} -> {}",
        args.videos,
        args.classes,
        args.dim,
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let seed = resolve_seed(args.seed)?;
    let bundle = load_bundle::<f64>(&args.data)
        .map_err(|e| CliError::usage(format!("cannot load bundle: {e}")))?;
    let cfg = TrainConfig {
        lr0: args.lr0,
        decay_per_epoch: args.decay,
        margin_alpha: args.margin,
        lambda_gat: args.lambda_gat,
        w_cls: args.w_cls,
        w_ret: args.w_ret,
        w_gat: args.w_gat,
        epochs: args.epochs,
        seed,
        sigma_kernel: args.sigma_kernel,
        sigma_time: args.sigma_time,
        use_projection: !args.frozen,
        relation_policy: if args.nearest_keyword {
            RelationPolicy::NearestKeyword
        } else {
            RelationPolicy::All
        },
        ..TrainConfig::default()
    };
    let outcome = train(&bundle, &cfg).map_err(|e| match e {
        TrainError::NonFiniteGradient => CliError::runtime(e.to_string()),
        other => CliError::usage(other.to_string()),
    })?;
    outcome
        .model
        .save(&args.out)
        .map_err(|e| CliError::runtime(format!("cannot write checkpoint: {e}")))?;
    if let Some(history) = &args.history {
        std::fs::write(history, history_to_csv(&outcome.history))
            .map_err(|e| CliError::runtime(format!("cannot write history: {e}")))?;
    }
    if let Some(last) = outcome.history.last() {
        eprintln!(
            "trained {} epochs; final losses cls {:.6} ret {:.6} gat {:.6} total {:.6}",
            outcome.history.len(),
            last.report.l_cls,
            last.report.l_ret,
            last.report.l_gat,
            last.report.l_total
        );
    }
    Ok(())
}

fn cmd_detect(args: DetectArgs) -> Result<(), CliError> {
    if let Some(theta) = args.theta {
        if !(0.0..=1.0).contains(&theta) {
            return Err(CliError::usage(format!(
                "--theta must lie in [0, 1], got {theta}"
            )));
        }
    }
    let (bundle, model) = load_inputs(&args.data, &args.checkpoint)?;
    let video_indices: Vec<usize> = match &args.video {
        Some(id) => vec![video_index_by_id(&bundle, id)
            .map_err(|e| CliError::usage(e.to_string()))?],
        None => (0..bundle.videos.len()).collect(),
    };

    let mut csv = String::from(if args.theta.is_some() {
        "video,frame,score,decision\n"
    } else {
        "video,frame,score\n"
    });
    for v in video_indices {
        let scores = score_video(&bundle, v, &model).map_err(|e| CliError::usage(e.to_string()))?;
        let mut push_row = |frame: String, score: f64| {
            match args.theta {
                Some(theta) => {
                    let decision = if score >= theta { 1 } else { 0 };
                    csv.push_str(&format!("{},{},{},{}\n", scores.video_id, frame, score, decision));
                }
                None => csv.push_str(&format!("{},{},{}\n", scores.video_id, frame, score)),
            }
        };
        for (i, &score) in scores.frame_scores.iter().enumerate() {
            push_row((i + 1).to_string(), score);
        }
        // video-level row carries an empty frame column
        push_row(String::new(), scores.video_score);
    }
    emit(&args.out, &csv)
}

fn cmd_retrieve(args: RetrieveArgs) -> Result<(), CliError> {
    let (bundle, model) = load_inputs(&args.data, &args.checkpoint)?;
    let video_index =
        video_index_by_id(&bundle, &args.video).map_err(|e| CliError::usage(e.to_string()))?;
    let (_, ranking) =
        retrieve_keywords(&bundle, video_index, &model).map_err(|e| CliError::usage(e.to_string()))?;

    let mut ranking_csv = String::from("rank,keyword_id,keyword_text,similarity,relevant\n");
    for (rank, &gallery_index) in ranking.order.iter().enumerate() {
        let kw = &bundle.keywords[gallery_index];
        ranking_csv.push_str(&format!(
            "{},{},{},{},{}\n",
            rank + 1,
            kw.id,
            kw.text,
            ranking.similarities[gallery_index],
            ranking.relevance[gallery_index] as u8
        ));
    }

    // R@k at k clamped to the gallery size
    let n = ranking.len();
    let mut rows = Vec::new();
    for k in [1usize, 5, 10] {
        let r = recall_at_k(&ranking, k.min(n)).map_err(|e| CliError::usage(e.to_string()))?;
        rows.push(("recall", format!("R@{k}"), r));
    }
    let metric_rows: Vec<(&str, &str, f64)> = rows
        .iter()
        .map(|(m, name, v)| (*m, name.as_str(), *v))
        .collect();
    let metrics = metrics_csv(&metric_rows);

    match &args.out {
        Some(_) => {
            emit(&args.out, &ranking_csv)?;
            print!("{metrics}");
        }
        None => {
            print!("{ranking_csv}{metrics}");
        }
    }
    Ok(())
}

fn cmd_explain(args: ExplainArgs) -> Result<(), CliError> {
    let (bundle, model) = load_inputs(&args.data, &args.checkpoint)?;
    let video_index =
        video_index_by_id(&bundle, &args.video).map_err(|e| CliError::usage(e.to_string()))?;
    let graph = build_graph(&bundle, video_index, model.relation_policy)
        .map_err(|e| CliError::usage(e.to_string()))?;
    let report = attention(&graph, &model.gat).map_err(|e| CliError::usage(e.to_string()))?;
    let explanations = explain_frame(&bundle, &graph, &report, args.frame, args.topk)
        .map_err(|e| CliError::usage(e.to_string()))?;
    emit(&args.out, &explanations_to_jsonl(&explanations))
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    let seed = resolve_seed(args.seed)?;
    let n_values: Vec<usize> = args
        .n_list
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| CliError::usage(format!("bad n value {s:?}")))
        })
        .collect::<Result<_, _>>()?;
    let params = BenchParams {
        input_dim: args.dim_in,
        num_heads: args.heads,
        head_dim: args.dim_head,
    };
    let outcome = run_bench(&n_values, &params, args.repeats, seed)
        .map_err(|e| CliError::usage(e.to_string()))?;
    emit(&args.out, &bench_csv(&outcome, &params, args.repeats, seed))
}
