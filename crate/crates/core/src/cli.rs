//! Command-line entry point: `synth`, `fingerprint`, `train` and `analyze`
//! subcommands driven by an optional JSON config file with flag overrides
//! (defaults < config file < flags).

use crate::analysis::{analyze_node, class_average_csv, class_average_responses, node_analysis_csv};
use crate::error::{Error, Result};
use crate::fingerprint::{compute_fingerprint, make_projection, FingerprintMode};
use crate::graph::{
    generate_csbm_anomaly_graph, load_graph, make_splits, save_graph, CsbmParams, SparseGraph,
};
use crate::trainer::{
    ablation_suite, ablation_table, run_protocol, train_once, ModelState, TrainConfig,
};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

/// JSON config document: training hyperparameters plus data sources and the
/// output directory. Unknown keys are rejected.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub train: TrainConfig,
    pub data: Option<DataPaths>,
    pub synthetic: Option<CsbmParams>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
}

#[derive(Debug, Parser)]
#[command(name = "spectral-adapt", version, about = "Spectral-adaptive multi-head graph anomaly detection")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config file (defaults < config < flags).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base RNG seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Suppress progress logging.
    #[arg(long, global = true)]
    quiet: bool,
}

impl Cli {
    pub fn quiet(&self) -> bool {
        self.quiet
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic camouflaged-anomaly benchmark graph.
    Synth(SynthArgs),
    /// Compute the 20-dimensional spectral fingerprint of a graph.
    Fingerprint(FingerprintArgs),
    /// Train with the multi-run protocol (or a single run / ablation grid).
    Train(TrainArgs),
    /// Frequency-response analysis with a trained checkpoint.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.05)]
    rate: f64,
    #[arg(long, default_value_t = 0.02)]
    p_in: f64,
    #[arg(long, default_value_t = 0.002)]
    p_out: f64,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 1.3)]
    signal: f64,
}

#[derive(Debug, Args)]
struct FingerprintArgs {
    #[arg(long)]
    edges: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<FingerprintMode>,
    /// Extremal window size w.
    #[arg(long)]
    w: Option<usize>,
    /// Write the JSON fingerprint here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> std::result::Result<FingerprintMode, String> {
    match s {
        "exact" => Ok(FingerprintMode::Exact),
        "stochastic" => Ok(FingerprintMode::Stochastic),
        other => Err(format!("unknown mode {other:?}; use exact or stochastic")),
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    edges: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    train_ratio: Option<f64>,
    /// Run the six-variant ablation grid instead of a single configuration.
    #[arg(long)]
    ablation: bool,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    edges: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Comma-separated node ids to analyze.
    #[arg(long, value_delimiter = ',')]
    nodes: Vec<usize>,
    /// Produce class-averaged curves over test-split samples.
    #[arg(long)]
    class_average: bool,
    #[arg(long, default_value_t = 20)]
    samples: usize,
}

fn load_config(path: Option<&Path>) -> Result<CliConfig> {
    match path {
        None => Ok(CliConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn resolve_graph(
    config: &CliConfig,
    edges: Option<&Path>,
    features: Option<&Path>,
    labels: Option<&Path>,
) -> Result<(SparseGraph, Option<CsbmParams>)> {
    if let (Some(e), Some(f), Some(l)) = (edges, features, labels) {
        return Ok((load_graph(e, f, l)?, None));
    }
    if let Some(data) = &config.data {
        return Ok((load_graph(&data.edges, &data.features, &data.labels)?, None));
    }
    if let Some(params) = &config.synthetic {
        return Ok((generate_csbm_anomaly_graph(params)?, Some(params.clone())));
    }
    Err(Error::InvalidInput(
        "no data source: pass --edges/--features/--labels or configure data/synthetic".into(),
    ))
}

/// Report written by `train`.
#[derive(Debug, Serialize)]
struct TrainReportFile {
    version: String,
    config_echo: TrainConfig,
    synthetic_echo: Option<CsbmParams>,
    f1_threshold_mode: String,
    aggregate: Option<crate::metrics::RunAggregate>,
    runs: Vec<RunSummary>,
}

#[derive(Debug, Serialize)]
struct RunSummary {
    seed: u64,
    best_epoch: usize,
    best_validation_auc: f64,
    test_auc: f64,
    test_f1_macro: f64,
    log_file: String,
    checkpoint_file: String,
}

#[derive(Debug, Serialize)]
struct AblationReportFile {
    version: String,
    config_echo: TrainConfig,
    synthetic_echo: Option<CsbmParams>,
    rows: Vec<crate::trainer::AblationRow>,
}

pub fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.train.seed = seed;
    }
    let out_dir = cli
        .out_dir
        .clone()
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));

    match &cli.command {
        Command::Synth(args) => synth(args, &config, &out_dir),
        Command::Fingerprint(args) => fingerprint_cmd(args, &config),
        Command::Train(args) => train_cmd(args, &config, &out_dir),
        Command::Analyze(args) => analyze_cmd(args, &config, &out_dir),
    }
}

fn synth(args: &SynthArgs, config: &CliConfig, out_dir: &Path) -> Result<()> {
    if args.n == 0 {
        return Err(Error::InvalidInput("n must be positive".into()));
    }
    let params = CsbmParams {
        num_nodes: args.n,
        anomaly_rate: args.rate,
        p_in: args.p_in,
        p_out: args.p_out,
        feature_dim: args.dim,
        signal_strength: args.signal,
        seed: config.train.seed,
    };
    let graph = generate_csbm_anomaly_graph(&params)?;
    ensure_dir(out_dir)?;
    let edges = out_dir.join("edges.txt");
    let features = out_dir.join("features.csv");
    let labels = out_dir.join("labels.txt");
    save_graph(&graph, &edges, &features, &labels)?;
    #[derive(Serialize)]
    struct Manifest {
        version: String,
        params: CsbmParams,
        nodes: usize,
        edges: usize,
        anomalies: usize,
        files: [String; 3],
    }
    let manifest = Manifest {
        version: crate::VERSION.to_string(),
        params: params.clone(),
        nodes: graph.num_nodes(),
        edges: graph.num_edges(),
        anomalies: graph
            .labels()
            .map(|l| l.iter().filter(|&&v| v == 1).count())
            .unwrap_or(0),
        files: [
            "edges.txt".to_string(),
            "features.csv".to_string(),
            "labels.txt".to_string(),
        ],
    };
    write_file(
        &out_dir.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest)?,
    )?;
    log::info!(
        "wrote {} nodes / {} edges to {}",
        graph.num_nodes(),
        graph.num_edges(),
        out_dir.display()
    );
    Ok(())
}

fn fingerprint_cmd(args: &FingerprintArgs, config: &CliConfig) -> Result<()> {
    let (graph, _) = resolve_graph(
        config,
        args.edges.as_deref(),
        args.features.as_deref(),
        args.labels.as_deref(),
    )?;
    let mut fp_config = config.train.fingerprint;
    if let Some(mode) = args.mode {
        fp_config.mode = mode;
    }
    if let Some(w) = args.w {
        fp_config.w = w;
    }
    let seed = config.train.seed;
    let projection = make_projection(graph.feature_dim(), seed);
    let fp = compute_fingerprint(&graph, &projection, &fp_config, seed)?;
    let json = serde_json::to_string(&fp.combined().to_vec())?;
    match &args.out {
        Some(path) => write_file(path, &json)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn train_cmd(args: &TrainArgs, config: &CliConfig, out_dir: &Path) -> Result<()> {
    let mut train = config.train.clone();
    if let Some(runs) = args.runs {
        train.runs = runs;
    }
    if let Some(epochs) = args.epochs {
        train.epochs = epochs;
    }
    if let Some(ratio) = args.train_ratio {
        train.train_ratio = ratio;
    }
    train.validate()?;
    let (graph, synthetic_echo) = resolve_graph(
        config,
        args.edges.as_deref(),
        args.features.as_deref(),
        args.labels.as_deref(),
    )?;
    ensure_dir(out_dir)?;

    if args.ablation {
        let rows = ablation_suite(&graph, &train)?;
        let table = ablation_table(&rows);
        let report = AblationReportFile {
            version: crate::VERSION.to_string(),
            config_echo: train,
            synthetic_echo,
            rows,
        };
        write_file(
            &out_dir.join("ablation.json"),
            &serde_json::to_string_pretty(&report)?,
        )?;
        write_file(&out_dir.join("ablation.txt"), &table)?;
        println!("{table}");
        return Ok(());
    }

    let (aggregate, reports, states) = if train.runs == 1 {
        let splits = make_splits(&graph, train.train_ratio, train.seed)?;
        let outcome = train_once(&graph, &splits, &train, train.seed)?;
        (None, vec![outcome.report], vec![outcome.state])
    } else {
        let out = run_protocol(&graph, &train)?;
        (Some(out.aggregate), out.reports, out.states)
    };

    let mut summaries = Vec::with_capacity(reports.len());
    for (report, state) in reports.iter().zip(&states) {
        let log_file = format!("run_{:02}.jsonl", report.seed - train.seed);
        let checkpoint_file = format!("checkpoint_{:02}.json", report.seed - train.seed);
        let mut log_body = String::new();
        for record in &report.epochs {
            log_body.push_str(&serde_json::to_string(record)?);
            log_body.push('\n');
        }
        write_file(&out_dir.join(&log_file), &log_body)?;
        state.save(&out_dir.join(&checkpoint_file))?;
        summaries.push(RunSummary {
            seed: report.seed,
            best_epoch: report.best_epoch,
            best_validation_auc: report.best_validation_auc,
            test_auc: report.test_at_best.auc,
            test_f1_macro: report.test_at_best.f1_macro,
            log_file,
            checkpoint_file,
        });
    }
    let report_file = TrainReportFile {
        version: crate::VERSION.to_string(),
        config_echo: train.clone(),
        synthetic_echo,
        f1_threshold_mode: if train.f1_threshold_sweep {
            "validation_sweep_51".to_string()
        } else {
            "argmax".to_string()
        },
        aggregate,
        runs: summaries,
    };
    write_file(
        &out_dir.join("report.json"),
        &serde_json::to_string_pretty(&report_file)?,
    )?;
    if let Some(agg) = &report_file.aggregate {
        println!(
            "trimmed-mean test AUC {:.4}, F1-macro {:.4} over {} runs",
            agg.auc_trimmed_mean,
            agg.f1_trimmed_mean,
            report_file.runs.len()
        );
    } else if let Some(run) = report_file.runs.first() {
        println!(
            "test AUC {:.4}, F1-macro {:.4} (single run)",
            run.test_auc, run.test_f1_macro
        );
    }
    Ok(())
}

fn analyze_cmd(args: &AnalyzeArgs, config: &CliConfig, out_dir: &Path) -> Result<()> {
    let state = ModelState::load(&args.checkpoint)?;
    let (graph, _) = resolve_graph(
        config,
        args.edges.as_deref(),
        args.features.as_deref(),
        args.labels.as_deref(),
    )?;
    ensure_dir(out_dir)?;

    if args.class_average {
        let splits = make_splits(&graph, state.config.train_ratio, state.seed)?;
        let report =
            class_average_responses(&state, &graph, &splits, args.samples, state.config.seed)?;
        write_file(&out_dir.join("class_average.csv"), &class_average_csv(&report))?;
        write_file(
            &out_dir.join("class_average.json"),
            &serde_json::to_string(&report)?,
        )?;
        log::info!("wrote class averages to {}", out_dir.display());
        return Ok(());
    }
    if args.nodes.is_empty() {
        return Err(Error::InvalidInput(
            "pass --nodes id[,id…] or --class-average".into(),
        ));
    }
    for &node in &args.nodes {
        let analysis = analyze_node(&state, &graph, node)?;
        write_file(
            &out_dir.join(format!("node_{node}.csv")),
            &node_analysis_csv(&analysis),
        )?;
        write_file(
            &out_dir.join(format!("node_{node}.json")),
            &serde_json::to_string(&analysis)?,
        )?;
    }
    Ok(())
}
