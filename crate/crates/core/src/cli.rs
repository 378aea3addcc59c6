//! Command-line front end behind the `infercarbon` binary.
//!
//! Exit codes: 0 success, 2 configuration or validation error, 3 runtime failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::arch::{enumerate_layer_kernels, ArchCatalog, InferenceConfig, LlmArchitecture};
use crate::carbon::{estimate_request, DatacenterParams, EmbodiedParams, EnergyPredictor};
use crate::gnn::{train, Checkpoint, EvalReport, GnnError, TrainHyper};
use crate::graph::{featurize, export_raw, FeatureStats, GraphFormat};
use crate::roofline::{GpuCatalog, GPU_CATALOG_ENV};
use crate::sampler::{
    config_hash, encode_labeled, extract_labeled, focused_sampling_loop, predict_all, read_dataset,
    write_dataset, LabeledPoint, LoopConfig, PriorSpace, SamplerError, SamplingManifest, SyntheticOracle,
};
use crate::traces::{empirical_prior, parse_trace, trace_stats, BatchMixture, ColumnMap};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

fn config(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn sampler_error(e: SamplerError) -> CliError {
    match e {
        SamplerError::OracleFailure { .. } | SamplerError::Model(GnnError::NonFiniteLoss { .. }) => runtime(e),
        other => config(other),
    }
}

fn gnn_error(e: GnnError) -> CliError {
    match e {
        GnnError::NonFiniteLoss { .. } => runtime(e),
        other => config(other),
    }
}

#[derive(Debug, Parser)]
#[command(name = "infercarbon", version, about = "Energy and carbon estimates for LLM inference")]
pub struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Architecture catalog (TOML) replacing the built-in one.
    #[arg(long, global = true)]
    pub arch_file: Option<PathBuf>,
    /// GPU catalog (TOML) replacing the built-in one.
    #[arg(long, global = true, env = GPU_CATALOG_ENV)]
    pub gpu_catalog: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Carbon report for one request.
    Estimate(EstimateArgs),
    /// Export the costed layer graph.
    Graph(GraphArgs),
    /// Build a dataset with the focused sampling loop.
    Sample(SampleArgs),
    /// Train a predictor on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Percentiles and histograms of a request trace.
    TraceStats(TraceStatsArgs),
}

#[derive(Debug, Args, Clone, Serialize)]
pub struct RequestArgs {
    #[arg(long)]
    pub arch: String,
    #[arg(long, default_value = "A100")]
    pub gpu: String,
    #[arg(long, default_value_t = 1)]
    pub batch: u64,
    #[arg(long, default_value_t = 128)]
    pub prompt: u64,
    #[arg(long, default_value_t = 32)]
    pub gen: u64,
    /// Number of GPUs (tensor parallel).
    #[arg(long, default_value_t = 1)]
    pub gpus: u64,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub request: RequestArgs,
    /// Trained model checkpoint.
    #[arg(long, conflicts_with = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Use the analytic synthetic oracle instead of a trained model.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long, default_value_t = 1.2)]
    pub pue: f64,
    /// Grid carbon intensity, gCO2eq/kWh.
    #[arg(long, default_value_t = 400.0)]
    pub intensity: f64,
    /// Embodied carbon per die area, gCO2eq/mm².
    #[arg(long, default_value_t = 1.0)]
    pub cpa: f64,
    #[arg(long, default_value_t = 1.5768e8)]
    pub lifetime_s: f64,
    #[arg(long, default_value_t = 0.0)]
    pub packaging_g: f64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    #[command(flatten)]
    pub request: RequestArgs,
    /// Output format: json or dot.
    #[arg(long, default_value = "json")]
    pub format: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum Scale {
    Desk,
    Campaign,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long, value_enum, default_value = "desk")]
    pub scale: Scale,
    /// Initial draw size A.
    #[arg(long)]
    pub initial: Option<usize>,
    /// Points per high-error center B.
    #[arg(long)]
    pub refine: Option<usize>,
    /// High-error centers per round k.
    #[arg(long)]
    pub worst_k: Option<usize>,
    /// Stop when test MAPE (percent) is at most this.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Request trace for the workload prior; synthetic traces otherwise.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Batch-size mixture, e.g. `1:0.6,2:0.3,4:0.1`.
    #[arg(long)]
    pub batch_mixture: Option<String>,
    #[arg(long, default_value = "dataset.jsonl")]
    pub dataset: PathBuf,
    /// Manifest path; defaults to the dataset path with `.manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Also save the loop's final model.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "model.json")]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 60)]
    pub epochs: usize,
    #[arg(long, default_value_t = 512)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TraceStatsArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long, default_value = "TIMESTAMP")]
    pub timestamp_col: String,
    #[arg(long, default_value = "ContextTokens")]
    pub prompt_col: String,
    #[arg(long, default_value = "GeneratedTokens")]
    pub generated_col: String,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Paths and settings shared by every subcommand, echoed into manifests.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub arch_file: Option<PathBuf>,
    pub gpu_catalog: Option<PathBuf>,
    pub threads: Option<usize>,
}

struct Context {
    run: RunConfig,
    archs: ArchCatalog,
    gpus: GpuCatalog,
}

impl Context {
    fn load(cli: &Cli) -> Result<Self, CliError> {
        let archs = match &cli.arch_file {
            Some(p) => ArchCatalog::load(p).map_err(config)?,
            None => ArchCatalog::builtin(),
        };
        let gpus = match &cli.gpu_catalog {
            Some(p) => GpuCatalog::load(p).map_err(config)?,
            None => GpuCatalog::builtin(),
        };
        Ok(Self {
            run: RunConfig {
                arch_file: cli.arch_file.clone(),
                gpu_catalog: cli.gpu_catalog.clone(),
                threads: cli.threads,
            },
            archs,
            gpus,
        })
    }

    fn request(&self, r: &RequestArgs) -> Result<(LlmArchitecture, InferenceConfig), CliError> {
        let arch = self.archs.get(&r.arch).map_err(config)?.clone();
        let cfg = InferenceConfig::new(r.batch, r.prompt, r.gen, r.gpus);
        cfg.validate().map_err(config)?;
        let gpu = self.gpus.get(&r.gpu).map_err(config)?;
        if r.gpus > gpu.node_size {
            return Err(config(format!("{} GPUs exceed the node size {} of {}", r.gpus, gpu.node_size, gpu.name)));
        }
        Ok((arch, cfg))
    }

    /// Provenance block embedded in every artifact.
    fn manifest(&self, command: &str, seed: Option<u64>, settings: &impl Serialize) -> serde_json::Value {
        json!({
            "tool": "infercarbon",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "seed": seed,
            "run": self.run,
            "settings": settings,
            "config_hash": config_hash(&json!({ "run": self.run, "settings": settings })),
        })
    }
}

fn emit(out: &mut dyn Write, path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| runtime(format!("{}: {e}", p.display()))),
        None => writeln!(out, "{text}").map_err(runtime),
    }
}

/// Parses arguments and runs the command, returning the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = if code == 0 {
                write!(out, "{}", e.render())
            } else {
                write!(err, "{}", e.render())
            };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "infercarbon: {e}");
            e.code()
        }
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(config("--threads must be ≥ 1"));
        }
        // a second initialization (tests, embedding) keeps the existing pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let ctx = Context::load(cli)?;
    match &cli.command {
        Command::Estimate(a) => cmd_estimate(&ctx, a, out),
        Command::Graph(a) => cmd_graph(&ctx, a, out),
        Command::Sample(a) => cmd_sample(&ctx, a, out),
        Command::Train(a) => cmd_train(&ctx, a, out),
        Command::Eval(a) => cmd_eval(&ctx, a, out),
        Command::TraceStats(a) => cmd_trace_stats(&ctx, a, out),
    }
}

fn cmd_estimate(ctx: &Context, a: &EstimateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (arch, cfg) = ctx.request(&a.request)?;
    let gpu = ctx.gpus.get(&a.request.gpu).map_err(config)?;
    let predictor: Box<dyn EnergyPredictor> = match (&a.checkpoint, a.oracle) {
        (_, true) => Box::new(SyntheticOracle::new(ctx.gpus.clone())),
        (Some(path), false) => Box::new(Checkpoint::load(path).map_err(config)?.predictor()),
        (None, false) => return Err(config("either --checkpoint or --oracle is required")),
    };
    let dc = DatacenterParams {
        pue: a.pue,
        carbon_intensity: a.intensity,
    };
    let ep = EmbodiedParams {
        cpa: a.cpa,
        lifetime_seconds: a.lifetime_s,
        packaging_g: a.packaging_g,
    };
    let report = estimate_request(predictor.as_ref(), &arch, &cfg, gpu, &dc, &ep).map_err(config)?;
    if !report.total_g.is_finite() {
        return Err(runtime("non-finite carbon estimate"));
    }
    if a.json {
        let manifest = ctx.manifest("estimate", None, &json!({ "request": a.request, "checkpoint": a.checkpoint }));
        let mut value = serde_json::to_value(&report).map_err(runtime)?;
        value["manifest"] = manifest;
        emit(out, None, &serde_json::to_string_pretty(&value).map_err(runtime)?)
    } else {
        emit(out, None, &report.to_string())
    }
}

fn cmd_graph(ctx: &Context, a: &GraphArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let format: GraphFormat = a.format.parse().map_err(config)?;
    let (arch, cfg) = ctx.request(&a.request)?;
    let gpu = ctx.gpus.get(&a.request.gpu).map_err(config)?;
    let graph = enumerate_layer_kernels(&arch, cfg.gpu_count);
    let fg = featurize(&graph, &arch, &cfg, gpu, &FeatureStats::identity()).map_err(config)?;
    let text = export_raw(&fg.raw, format).map_err(config)?;
    emit(out, a.out.as_deref(), &text)
}

fn cmd_sample(ctx: &Context, a: &SampleArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = match a.scale {
        Scale::Desk => LoopConfig::desk(),
        Scale::Campaign => LoopConfig::campaign(),
    };
    cfg.seed = a.seed;
    cfg.hyper.seed = a.seed;
    if let Some(v) = a.initial {
        cfg.initial_points = v;
    }
    if let Some(v) = a.refine {
        cfg.refine_per_center = v;
    }
    if let Some(v) = a.worst_k {
        cfg.worst_k = v;
    }
    if let Some(v) = a.threshold {
        cfg.e_threshold = v;
    }
    if let Some(v) = a.max_iterations {
        cfg.max_iterations = v;
    }
    if let Some(v) = a.epochs {
        cfg.hyper.epochs = v;
    }
    let mut space = PriorSpace::builtin(4096, a.seed).map_err(sampler_error)?;
    space.archs = ctx.archs.architectures.clone();
    space.gpus = ctx.gpus.clone();
    let mixture = match &a.batch_mixture {
        Some(m) => m.parse::<BatchMixture>().map_err(config)?,
        None => BatchMixture::default(),
    };
    if let Some(path) = &a.trace {
        let records = parse_trace(path, &ColumnMap::default()).map_err(config)?;
        space.inference = empirical_prior(&records, mixture).map_err(config)?;
    } else if a.batch_mixture.is_some() {
        return Err(config("--batch-mixture requires --trace"));
    }
    let oracle = SyntheticOracle::new(ctx.gpus.clone());
    let outcome = focused_sampling_loop(&space, &oracle, &cfg).map_err(sampler_error)?;

    write_dataset(&a.dataset, &outcome.train, &outcome.test).map_err(sampler_error)?;
    let manifest_path = a
        .manifest
        .clone()
        .unwrap_or_else(|| a.dataset.with_extension("manifest.json"));
    let mut manifest = serde_json::to_value(SamplingManifest::new(&cfg, &oracle, &outcome)).map_err(runtime)?;
    manifest["run"] = ctx.manifest("sample", Some(a.seed), &json!({ "trace": a.trace, "batch_mixture": a.batch_mixture }));
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).map_err(runtime)?)
        .map_err(|e| runtime(format!("{}: {e}", manifest_path.display())))?;
    if let Some(path) = &a.checkpoint {
        let mut ck = Checkpoint::new(&outcome.predictor, cfg.seed);
        ck.manifest = Some(manifest.clone());
        ck.save(path).map_err(runtime)?;
    }
    let last = outcome.trace.last().expect("trace has the initial entry");
    emit(
        out,
        None,
        &format!(
            "{} train / {} test points, {} rounds, test MAPE {:.2}% ({:?})",
            outcome.train.len(),
            outcome.test.len(),
            last.iteration,
            last.test_mape,
            outcome.termination
        ),
    )
}

fn evaluate(
    ctx: &Context,
    ck: &Checkpoint,
    points: &[LabeledPoint],
) -> Result<EvalReport, CliError> {
    let raw = extract_labeled(&ctx.gpus, points).map_err(sampler_error)?;
    let xs = encode_labeled(&raw, points, &ck.stats).map_err(sampler_error)?;
    let predictor = ck.predictor();
    let inputs: Vec<_> = xs.iter().map(|x| &x.input).collect();
    let preds = predict_all(&predictor.params, &inputs).map_err(sampler_error)?;
    let truths: Vec<f64> = xs.iter().map(|x| x.energy_joules).collect();
    EvalReport::compute(&preds, &truths).map_err(config)
}

fn file_hash(path: &Path) -> Result<String, CliError> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn cmd_train(ctx: &Context, a: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (train_pts, test_pts) = read_dataset(&a.dataset).map_err(sampler_error)?;
    if train_pts.is_empty() {
        return Err(config("dataset has no training records"));
    }
    let hyper = TrainHyper {
        learning_rate: a.lr,
        batch_size: a.batch_size,
        epochs: a.epochs,
        seed: a.seed,
        hidden: a.hidden,
        ..TrainHyper::default()
    };
    hyper.validate().map_err(config)?;
    let raw = extract_labeled(&ctx.gpus, &train_pts).map_err(sampler_error)?;
    let stats = FeatureStats::fit(&raw).map_err(config)?;
    let xs = encode_labeled(&raw, &train_pts, &stats).map_err(sampler_error)?;
    let outcome = train(&xs, &hyper).map_err(gnn_error)?;
    let predictor = crate::gnn::Predictor {
        params: outcome.params,
        stats,
    };
    let mut ck = Checkpoint::new(&predictor, a.seed);
    let mut metrics = serde_json::Map::new();
    metrics.insert("train".into(), serde_json::to_value(evaluate(ctx, &ck, &train_pts)?).map_err(runtime)?);
    if !test_pts.is_empty() {
        metrics.insert("test".into(), serde_json::to_value(evaluate(ctx, &ck, &test_pts)?).map_err(runtime)?);
    }
    let mut manifest = ctx.manifest(
        "train",
        Some(a.seed),
        &json!({ "hyper": hyper, "dataset": a.dataset, "dataset_sha256": file_hash(&a.dataset)? }),
    );
    manifest["metrics"] = serde_json::Value::Object(metrics);
    manifest["loss_history"] = json!(outcome.loss_history);
    ck.manifest = Some(manifest);
    ck.save(&a.checkpoint).map_err(runtime)?;
    emit(
        out,
        None,
        &format!(
            "trained on {} records for {} epochs; final loss {:.6}; wrote {}",
            train_pts.len(),
            a.epochs,
            outcome.loss_history.last().copied().unwrap_or(f64::NAN),
            a.checkpoint.display()
        ),
    )
}

fn cmd_eval(ctx: &Context, a: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ck = Checkpoint::load(&a.checkpoint).map_err(config)?;
    let (train_pts, test_pts) = read_dataset(&a.dataset).map_err(sampler_error)?;
    let points: Vec<LabeledPoint> = match a.split {
        SplitArg::Train => train_pts,
        SplitArg::Test => test_pts,
        SplitArg::All => train_pts.into_iter().chain(test_pts).collect(),
    };
    if points.is_empty() {
        return Err(config("selected split is empty"));
    }
    let report = evaluate(ctx, &ck, &points)?;
    let manifest = ctx.manifest(
        "eval",
        Some(ck.seed),
        &json!({ "dataset": a.dataset, "dataset_sha256": file_hash(&a.dataset)?, "checkpoint": a.checkpoint, "split": a.split }),
    );
    let value = json!({ "report": report, "manifest": manifest });
    emit(out, a.out.as_deref(), &serde_json::to_string_pretty(&value).map_err(runtime)?)
}

fn cmd_trace_stats(ctx: &Context, a: &TraceStatsArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let map = ColumnMap {
        timestamp: a.timestamp_col.clone(),
        prompt: a.prompt_col.clone(),
        generated: a.generated_col.clone(),
    };
    let records = parse_trace(&a.trace, &map).map_err(config)?;
    let stats = trace_stats(&records).map_err(config)?;
    let text = if a.json {
        let manifest = ctx.manifest("trace-stats", None, &json!({ "trace": a.trace, "columns": map }));
        serde_json::to_string_pretty(&json!({ "stats": stats, "manifest": manifest })).map_err(runtime)?
    } else {
        stats.to_table()
    };
    emit(out, a.out.as_deref(), &text)
}
