//! `hml`: the pipeline stages as subcommands with hashed manifests.
//!
//! The binary is a thin wrapper over [`run_from`], which parses arguments,
//! runs one command and returns its exit code.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error,
//! 3 non-converged fit, 4 checkpoint mismatch.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use hml_core::corpus::{load_corpus, Corpus};
use hml_core::diffcore::{load_checkpoint, save_checkpoint, DiffError, ModelState};
use hml_core::encoder::{
    self, edge_weights, predict, save_metrics_csv, train_classifier, write_embeddings_tsv,
    EncoderConfig, EncoderError, GraphTransformerConfig, MetricsRow,
};
use hml_core::hetgraph::{export_graph, import_graph, load_edge_specs, GraphError, HetGraph};
use hml_core::pipeline::{
    self, encoder_features, infer_graph, Ablation, InferConfig, PipelineError, Stage,
};
use hml_core::simgen::{generate_world, save_world, SimError, WorldConfig};
use hml_core::ssl::{pretrain, AugmentationConfig, SslError};

const DEFAULT_SEED: u64 = 7;

#[derive(Parser)]
#[command(
    name = "hml",
    version,
    about = "Latent-network fake news detection pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Pipeline config (JSON); sections default when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed for every named random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and its ground truth; `--config` is
    /// required and may be a pipeline config or a bare world config.
    Simulate(SimulateArgs),
    /// Fit the point process and build the heterogeneous graph.
    InferGraph(InferArgs),
    /// Self-supervised multimodal pretraining.
    Pretrain(PretrainArgs),
    /// Train the graph transformer classifier.
    Train(TrainArgs),
    /// Score a trained classifier.
    Evaluate(ModelArgs),
    /// Write final node embeddings.
    Export(ModelArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Edge types (JSON array); overrides the config.
    #[arg(long)]
    edge_spec: Option<PathBuf>,
    #[arg(long)]
    allow_nonconverged: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    ablate: Vec<Ablation>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    /// Pretraining checkpoint; raw features are used without one.
    #[arg(long)]
    pretrained: Option<PathBuf>,
    #[arg(long)]
    ablate: Vec<Ablation>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    pretrained: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PipelineConfig {
    seed: Option<u64>,
    world: WorldConfig,
    infer: InferConfig,
    ssl: AugmentationConfig,
    encoder: EncoderConfig,
}

const RUNTIME: u8 = 1;
const CONFIG: u8 = 2;
const NOT_CONVERGED: u8 = 3;
const CHECKPOINT: u8 = 4;

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: std::error::Error + Send + Sync + 'static> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure {
            code: RUNTIME,
            error: e.into(),
        }
    }
}

trait Coded<T> {
    fn code(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Coded<T> for Result<T, E> {
    fn code(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code,
            error: e.into(),
        })
    }
}

fn fail(code: u8, error: anyhow::Error) -> Failure {
    Failure { code, error }
}

fn graph_code(e: &GraphError) -> u8 {
    match e {
        GraphError::InvalidSpec { .. }
        | GraphError::EventInfluencePlacement
        | GraphError::UnknownAttribute(_)
        | GraphError::UnknownModality(_)
        | GraphError::Similarity(_) => CONFIG,
        _ => RUNTIME,
    }
}

fn pipeline_code(e: &PipelineError) -> u8 {
    match e {
        PipelineError::Graph(g) => graph_code(g),
        PipelineError::Forgetting(_) | PipelineError::UnknownAblation(_) => CONFIG,
        PipelineError::PointProc(hml_core::pointproc::PointProcError::InvalidParams(_)) => CONFIG,
        PipelineError::Ssl(s) => ssl_code(s),
        PipelineError::PointProc(_) => RUNTIME,
    }
}

fn ssl_code(e: &SslError) -> u8 {
    match e {
        SslError::InvalidConfig(_) | SslError::SingleModality(_) => CONFIG,
        _ => RUNTIME,
    }
}

fn encoder_code(e: &EncoderError) -> u8 {
    match e {
        EncoderError::InvalidConfig(_) => CONFIG,
        EncoderError::LayerCount(..) | EncoderError::DimensionMismatch { .. } => CHECKPOINT,
        _ => RUNTIME,
    }
}

fn diff_code(e: &DiffError) -> u8 {
    match e {
        DiffError::CheckpointVersion { .. }
        | DiffError::Checkpoint(_)
        | DiffError::Json(_)
        | DiffError::UnknownParam(_) => CHECKPOINT,
        _ => RUNTIME,
    }
}

/// Resolved inputs of one command.
struct Ctx {
    config: PipelineConfig,
    seed: u64,
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
    let Some(path) = path else {
        return Ok(PipelineConfig::default());
    };
    let text = fs::read_to_string(path)
        .with_context(|| format!("--config {}", path.display()))
        .code(CONFIG)?;
    serde_json::from_str(&text)
        .with_context(|| format!("--config {}: invalid pipeline config", path.display()))
        .code(CONFIG)
}

fn file_digest(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .code(RUNTIME)?;
    Ok(pipeline::sha256_hex(&bytes))
}

/// Builds the manifest of a command, writes it into `out` and returns its
/// hash. Inputs enter by content digest, so output paths never change it.
fn write_manifest(
    out: &Path,
    command: &str,
    seed: u64,
    config: Value,
    ablations: &[Ablation],
    inputs: &[(&str, &Path)],
) -> Result<String, Failure> {
    let mut input_digests = serde_json::Map::new();
    for (name, path) in inputs {
        input_digests.insert(name.to_string(), Value::String(file_digest(path)?));
    }
    let mut ablations = ablations.to_vec();
    ablations.sort();
    ablations.dedup();
    let manifest = json!({
        "tool": "hml",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": seed,
        "config": config,
        "ablations": ablations,
        "inputs": input_digests,
    });
    let hash = pipeline::manifest_hash(&manifest)?;
    fs::create_dir_all(out)
        .with_context(|| format!("--out {}", out.display()))
        .code(RUNTIME)?;
    write_json(
        &out.join("manifest.json"),
        &json!({ "manifest_hash": hash, "manifest": manifest }),
    )?;
    Ok(hash)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .code(RUNTIME)
}

fn with_hash<T: Serialize>(hash: &str, value: &T) -> Result<Value, Failure> {
    let mut v = serde_json::to_value(value)?;
    match v.as_object_mut() {
        Some(map) => {
            map.insert("manifest_hash".into(), Value::String(hash.to_string()));
            Ok(v)
        }
        None => Ok(json!({ "manifest_hash": hash, "value": v })),
    }
}

fn corpus_at(path: &Path) -> Result<Corpus, Failure> {
    load_corpus(path)
        .with_context(|| format!("--corpus {}", path.display()))
        .code(RUNTIME)
}

fn graph_at(path: &Path) -> Result<HetGraph, Failure> {
    let (graph, _) = import_graph(path)
        .with_context(|| format!("--graph {}", path.display()))
        .code(RUNTIME)?;
    Ok(graph)
}

fn check_stage(ablations: &[Ablation], stage: Stage, command: &str) -> Result<(), Failure> {
    match ablations.iter().find(|a| a.stage() != stage) {
        Some(a) => Err(fail(
            CONFIG,
            anyhow!("--ablate {a} does not apply to `{command}`"),
        )),
        None => Ok(()),
    }
}

/// Loads a checkpoint of the given kind, mapping format and kind
/// mismatches to the checkpoint exit code.
fn checkpoint_at(path: &Path, kind: &str) -> Result<(ModelState, Value), Failure> {
    let ckpt = load_checkpoint(path).map_err(|e| {
        let code = diff_code(&e);
        fail(
            code,
            anyhow::Error::new(e).context(format!("checkpoint {}", path.display())),
        )
    })?;
    let found = ckpt
        .metadata
        .get("kind")
        .and_then(Value::as_str)
        .unwrap_or("");
    if found != kind {
        return Err(fail(
            CHECKPOINT,
            anyhow!(
                "checkpoint {} is of kind '{found}', expected '{kind}'",
                path.display()
            ),
        ));
    }
    let state = ckpt.to_state().map_err(|e| fail(CHECKPOINT, e.into()))?;
    Ok((state, ckpt.metadata))
}

fn cmd_simulate(
    config_path: Option<&Path>,
    cli_seed: Option<u64>,
    args: &SimulateArgs,
) -> Result<(), Failure> {
    let path = config_path.ok_or_else(|| {
        fail(
            CONFIG,
            anyhow!("`simulate` requires --config <world config>"),
        )
    })?;
    let text = fs::read_to_string(path)
        .with_context(|| format!("--config {}", path.display()))
        .code(CONFIG)?;
    // Either a full pipeline config or a bare world config.
    let mut world: WorldConfig = match serde_json::from_str::<PipelineConfig>(&text) {
        Ok(p) => p.world,
        Err(_) => serde_json::from_str(&text)
            .with_context(|| {
                format!(
                    "--config {}: neither a pipeline nor a world config",
                    path.display()
                )
            })
            .code(CONFIG)?,
    };
    let file_seed = serde_json::from_str::<PipelineConfig>(&text)
        .ok()
        .and_then(|p| p.seed);
    if let Some(s) = cli_seed.or(file_seed) {
        world.seed = s;
    }
    world.validate().code(CONFIG)?;
    let hash = write_manifest(
        &args.out,
        "simulate",
        world.seed,
        serde_json::to_value(&world)?,
        &[],
        &[],
    )?;
    let mut generated = generate_world(&world).map_err(|e| match e {
        SimError::InvalidConfig(_) | SimError::Unstable { .. } => fail(CONFIG, e.into()),
        other => other.into(),
    })?;
    generated.truth.manifest_hash = Some(hash);
    save_world(&generated, &args.out)?;
    log::info!(
        "simulated {} items in {} events into {}",
        generated.corpus.len(),
        generated.corpus.events.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_infer(ctx: &Ctx, args: &InferArgs) -> Result<(), Failure> {
    let corpus = corpus_at(&args.corpus)?;
    let mut config = ctx.config.infer.clone();
    let mut inputs = vec![("corpus", args.corpus.as_path())];
    if let Some(path) = &args.edge_spec {
        config.edge_types = load_edge_specs(path)
            .with_context(|| format!("--edge-spec {}", path.display()))
            .code(CONFIG)?;
        inputs.push(("edge_spec", path.as_path()));
    }
    let hash = write_manifest(
        &args.out,
        "infer-graph",
        ctx.seed,
        serde_json::to_value(&config)?,
        &[],
        &inputs,
    )?;
    let inference =
        infer_graph(&corpus, &config, ctx.seed).map_err(|e| fail(pipeline_code(&e), e.into()))?;
    write_json(
        &args.out.join("report.json"),
        &with_hash(&hash, &inference.report)?,
    )?;
    if !inference.report.converged && !args.allow_nonconverged {
        return Err(fail(
            NOT_CONVERGED,
            anyhow!(
                "point-process fit did not converge after {} iterations (pass --allow-nonconverged to keep the graph)",
                inference.report.iterations
            ),
        ));
    }
    write_json(
        &args.out.join("adjacencies.json"),
        &json!({ "manifest_hash": hash, "adjacencies": inference.adjacencies }),
    )?;
    export_graph(&inference.graph, Some(&hash), &args.out.join("graph.tsv")).code(RUNTIME)?;
    Ok(())
}

fn cmd_pretrain(ctx: &Ctx, args: &PretrainArgs) -> Result<(), Failure> {
    check_stage(&args.ablate, Stage::Pretrain, "pretrain")?;
    let corpus = corpus_at(&args.corpus)?;
    let config = args
        .ablate
        .iter()
        .fold(ctx.config.ssl.clone(), |c, a| a.apply_ssl(&c));
    let hash = write_manifest(
        &args.out,
        "pretrain",
        ctx.seed,
        serde_json::to_value(&config)?,
        &args.ablate,
        &[("corpus", args.corpus.as_path())],
    )?;
    let output = pretrain(&corpus, &config, ctx.seed).map_err(|e| fail(ssl_code(&e), e.into()))?;
    let metadata = json!({
        "kind": "ssl",
        "manifest_hash": hash,
        "schema": corpus.schema,
    });
    save_checkpoint(&args.out.join("ssl.ckpt.json"), &output.state, metadata).code(RUNTIME)?;
    write_json(
        &args.out.join("pretrain.json"),
        &json!({
            "manifest_hash": hash,
            "config": config,
            "seed": ctx.seed,
            "epochs": config.epochs,
            "loss_trace": output.loss_trace,
            "retained_ids": output.retained_ids,
        }),
    )?;
    Ok(())
}

fn pretrained_state(path: Option<&Path>) -> Result<Option<ModelState>, Failure> {
    path.map(|p| checkpoint_at(p, "ssl").map(|(s, _)| s))
        .transpose()
}

fn cmd_train(ctx: &Ctx, args: &TrainArgs) -> Result<(), Failure> {
    check_stage(&args.ablate, Stage::Train, "train")?;
    let corpus = corpus_at(&args.corpus)?;
    let base = graph_at(&args.graph)?;
    let pretrained = pretrained_state(args.pretrained.as_deref())?;
    let mut inputs = vec![
        ("corpus", args.corpus.as_path()),
        ("graph", args.graph.as_path()),
    ];
    if let Some(p) = &args.pretrained {
        inputs.push(("pretrained", p.as_path()));
    }
    let config = &ctx.config.encoder;
    let hash = write_manifest(
        &args.out,
        "train",
        ctx.seed,
        serde_json::to_value(config)?,
        &args.ablate,
        &inputs,
    )?;
    let graph = args.ablate.iter().fold(base, |g, a| a.apply_graph(&g));
    let features = encoder_features(&corpus, pretrained.as_ref())
        .map_err(|e| fail(pipeline_code(&e), e.into()))?;
    let output = train_classifier(&corpus, &graph, &features, config, ctx.seed)
        .map_err(|e| fail(encoder_code(&e), e.into()))?;

    let id_of = |rows: &[usize]| {
        rows.iter()
            .map(|&r| corpus.items[r].id.clone())
            .collect::<Vec<_>>()
    };
    let metadata = json!({
        "kind": "encoder",
        "manifest_hash": hash,
        "transformer": config.transformer,
        "input_dim": features.cols(),
        "features": if pretrained.is_some() { "pretrained" } else { "raw" },
        "ablations": args.ablate,
        "epochs": config.epochs,
        "test_ids": id_of(&output.split.test),
    });
    save_checkpoint(&args.out.join("model.ckpt.json"), &output.state, metadata).code(RUNTIME)?;
    save_metrics_csv(&output.trace, Some(&hash), &args.out.join("metrics.csv")).code(RUNTIME)?;
    let last = |split: &str| {
        output
            .trace
            .iter()
            .rev()
            .find(|r| r.split == split)
            .map(|r| r.metrics)
    };
    write_json(
        &args.out.join("train.json"),
        &json!({
            "manifest_hash": hash,
            "layers": graph.layers.iter().map(|l| l.name.clone()).collect::<Vec<_>>(),
            "edge_weights": edge_weights(&output.state).map_err(|e| fail(encoder_code(&e), e.into()))?,
            "final_train": last("train"),
            "final_test": last("test"),
            "losses": output.losses,
        }),
    )?;
    if let Some(m) = last("test") {
        log::info!("final test accuracy {:.4}, f1 {:.4}", m.accuracy, m.f1);
    }
    Ok(())
}

/// A trained classifier with the graph and features it expects.
struct Loaded {
    corpus: Corpus,
    graph: HetGraph,
    state: ModelState,
    metadata: Value,
    transformer: GraphTransformerConfig,
    features: hml_core::diffcore::Tensor,
}

fn load_model(args: &ModelArgs) -> Result<Loaded, Failure> {
    let corpus = corpus_at(&args.corpus)?;
    let (state, metadata) = checkpoint_at(&args.checkpoint, "encoder")?;
    let transformer: GraphTransformerConfig = metadata
        .get("transformer")
        .cloned()
        .ok_or_else(|| anyhow!("checkpoint has no transformer config"))
        .and_then(|v| serde_json::from_value(v).map_err(Into::into))
        .code(CHECKPOINT)?;
    let ablations: Vec<Ablation> = metadata
        .get("ablations")
        .cloned()
        .map(serde_json::from_value)
        .transpose()
        .map_err(|e| fail(CHECKPOINT, e.into()))?
        .unwrap_or_default();
    let wants_pretrained = metadata.get("features").and_then(Value::as_str) == Some("pretrained");
    if wants_pretrained != args.pretrained.is_some() {
        return Err(fail(
            CONFIG,
            anyhow!(
                "checkpoint was trained on {} features; {}",
                if wants_pretrained {
                    "pretrained"
                } else {
                    "raw"
                },
                if wants_pretrained {
                    "pass --pretrained"
                } else {
                    "drop --pretrained"
                }
            ),
        ));
    }
    let pretrained = pretrained_state(args.pretrained.as_deref())?;
    let features = encoder_features(&corpus, pretrained.as_ref())
        .map_err(|e| fail(pipeline_code(&e), e.into()))?;
    let expected = metadata
        .get("input_dim")
        .and_then(Value::as_u64)
        .unwrap_or(0) as usize;
    if features.cols() != expected {
        return Err(fail(
            CHECKPOINT,
            anyhow!(
                "features have width {} but the checkpoint expects {expected}",
                features.cols()
            ),
        ));
    }
    let graph = ablations
        .iter()
        .fold(graph_at(&args.graph)?, |g, a| a.apply_graph(&g));
    Ok(Loaded {
        corpus,
        graph,
        state,
        metadata,
        transformer,
        features,
    })
}

fn model_inputs(args: &ModelArgs) -> Vec<(&'static str, &Path)> {
    let mut inputs = vec![
        ("corpus", args.corpus.as_path()),
        ("graph", args.graph.as_path()),
        ("checkpoint", args.checkpoint.as_path()),
    ];
    if let Some(p) = &args.pretrained {
        inputs.push(("pretrained", p.as_path()));
    }
    inputs
}

fn cmd_evaluate(ctx: &Ctx, args: &ModelArgs) -> Result<(), Failure> {
    let m = load_model(args)?;
    let hash = write_manifest(
        &args.out,
        "evaluate",
        ctx.seed,
        Value::Null,
        &[],
        &model_inputs(args),
    )?;
    let (probs, _) = predict(&m.features, &m.graph, &m.state, &m.transformer)
        .map_err(|e| fail(encoder_code(&e), e.into()))?;
    let test: Vec<usize> = m
        .metadata
        .get("test_ids")
        .and_then(Value::as_array)
        .map(|ids| {
            ids.iter()
                .filter_map(Value::as_str)
                .filter_map(|id| m.corpus.position(id))
                .filter(|&r| m.corpus.items[r].label.is_labeled())
                .collect()
        })
        .unwrap_or_default();
    let labeled: Vec<usize> = (0..m.corpus.len())
        .filter(|&r| m.corpus.items[r].label.is_labeled())
        .collect();
    let epoch = m
        .metadata
        .get("epochs")
        .and_then(Value::as_u64)
        .unwrap_or(0) as usize;
    let mut rows = Vec::new();
    for (split, idx) in [("test", &test), ("all", &labeled)] {
        if idx.is_empty() {
            continue;
        }
        let metrics = encoder::evaluate(&probs, &m.corpus, idx)
            .map_err(|e| fail(encoder_code(&e), e.into()))?;
        log::info!(
            "{split}: accuracy {:.4}, f1 {:.4}",
            metrics.accuracy,
            metrics.f1
        );
        rows.push(MetricsRow {
            epoch,
            split: split.to_string(),
            metrics,
        });
    }
    if rows.is_empty() {
        return Err(fail(
            RUNTIME,
            anyhow!("the corpus has no labeled items to evaluate"),
        ));
    }
    save_metrics_csv(&rows, Some(&hash), &args.out.join("metrics.csv")).code(RUNTIME)?;
    Ok(())
}

fn cmd_export(ctx: &Ctx, args: &ModelArgs) -> Result<(), Failure> {
    let m = load_model(args)?;
    let hash = write_manifest(
        &args.out,
        "export",
        ctx.seed,
        Value::Null,
        &[],
        &model_inputs(args),
    )?;
    let (_, embeddings) = predict(&m.features, &m.graph, &m.state, &m.transformer)
        .map_err(|e| fail(encoder_code(&e), e.into()))?;
    let ids: Vec<String> = m.corpus.items.iter().map(|it| it.id.clone()).collect();
    let path = args.out.join("embeddings.tsv");
    let f = fs::File::create(&path)
        .with_context(|| format!("writing {}", path.display()))
        .code(RUNTIME)?;
    let mut w = BufWriter::new(f);
    write_embeddings_tsv(&ids, &embeddings, Some(&hash), &mut w).code(RUNTIME)?;
    w.flush().code(RUNTIME)?;
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    if let Command::Simulate(a) = &cli.command {
        return cmd_simulate(cli.config.as_deref(), cli.seed, a);
    }
    let config = load_config(cli.config.as_deref())?;
    let ctx = Ctx {
        seed: cli.seed.or(config.seed).unwrap_or(DEFAULT_SEED),
        config,
    };
    match &cli.command {
        Command::Simulate(_) => unreachable!("simulate returns before config loading"),
        Command::InferGraph(a) => cmd_infer(&ctx, a),
        Command::Pretrain(a) => cmd_pretrain(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Evaluate(a) => cmd_evaluate(&ctx, a),
        Command::Export(a) => cmd_export(&ctx, a),
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match cli.workers {
        None => dispatch(cli),
        Some(0) => Err(fail(CONFIG, anyhow!("--workers must be at least 1"))),
        // a scoped pool, so repeated in-process runs can differ in width
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .code(RUNTIME)?
            .install(|| dispatch(cli)),
    }
}

/// Runs one `hml` invocation (`args[0]` is the program name) and returns
/// the process exit code. Errors are reported on stderr.
pub fn run_from<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { CONFIG } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            code
        }
    }
}
