//! Command-line pipeline: generate, augment, train, eval, predict,
//! gradcheck and ablate. Every run writes its fully-resolved configuration
//! next to its outputs; errors print machine-readable JSON on stderr with
//! exit 1 (usage), 2 (data/validation) or 3 (numerical failure).

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::{Overrides, RunConfig};
use privacyguard::augment::{class_ratio, cpos_augment, smote_augment, AugmentError};
use privacyguard::dataset::{DatasetError, LabeledDataset, Split};
use privacyguard::eval::{evaluate_model, format_table, perturb_edges, EvalError, MetricsReport};
use privacyguard::graph::{GraphError, HeteroSceneGraph};
use privacyguard::models::{load_checkpoint, save_checkpoint, AnyModel, ModelError, ModelKind};
use privacyguard::numeric::derive_seed;
use privacyguard::synthgen::{generate_dataset, GenConfig, SynthError};
use privacyguard::training::{gradcheck, train, TrainError};

#[derive(Parser)]
#[command(
    name = "privacyguard",
    version,
    about = "Privacy-sensitive object identification over scene graphs"
)]
struct Cli {
    #[command(flatten)]
    flags: CommonFlags,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Args, Debug)]
struct CommonFlags {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Feature dimension for both node kinds.
    #[arg(long, global = true)]
    dim: Option<usize>,
    #[arg(long, global = true)]
    hidden: Option<usize>,
    #[arg(long, global = true)]
    layers: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[arg(long, global = true)]
    target_ratio: Option<f64>,
    #[arg(long, global = true)]
    keep_prob: Option<f64>,
    #[arg(long, global = true)]
    rewire_prob: Option<f64>,
    #[arg(long, global = true)]
    extra_edge_prob: Option<f64>,
    #[arg(long, global = true)]
    drop_prob: Option<f64>,
    /// Worker cap; 1 is the fully serial reference mode.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Float width for training: 32 or 64.
    #[arg(long, global = true)]
    precision: Option<u8>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_graphs: Option<usize>,
    },
    /// Rebalance the training split by oversampling.
    Augment {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = ["cpos", "smote"])]
        method: String,
    },
    /// Train a model and write its checkpoint and log.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "hgr", value_parser = ["hgr", "gcn", "gat", "mlp"])]
        model: String,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "val", value_parser = ["train", "val"])]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-node privacy probabilities for one graph file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value = "hgr", value_parser = ["hgr", "gcn", "gat", "mlp"])]
        model: String,
        #[arg(long, default_value_t = 1e-4)]
        epsilon: f64,
    },
    /// Train all four models on one dataset and emit a comparison table.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skewed dataset for the oversampling comparison rows.
        #[arg(long)]
        skew_data: Option<PathBuf>,
    },
}

/// Error category → process exit code.
enum AppError {
    Usage(String),
    Data(String, &'static str),
    Numeric(String, &'static str),
}

#[derive(Serialize)]
struct ErrorPayload<'a> {
    kind: &'a str,
    message: &'a str,
}

impl AppError {
    fn code(&self) -> u8 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Data(..) => 2,
            AppError::Numeric(..) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            AppError::Usage(_) => "UsageError",
            AppError::Data(_, kind) | AppError::Numeric(_, kind) => kind,
        }
    }

    fn message(&self) -> &str {
        match self {
            AppError::Usage(m) | AppError::Data(m, _) | AppError::Numeric(m, _) => m,
        }
    }
}

impl From<SynthError> for AppError {
    fn from(e: SynthError) -> Self {
        AppError::Data(e.to_string(), "ConfigError")
    }
}

impl From<DatasetError> for AppError {
    fn from(e: DatasetError) -> Self {
        let kind = match &e {
            DatasetError::Io { .. } => "IoError",
            DatasetError::Manifest(_) => "ParseError",
            DatasetError::Graph { source, .. } => graph_error_kind(source),
        };
        AppError::Data(e.to_string(), kind)
    }
}

fn graph_error_kind(e: &GraphError) -> &'static str {
    match e {
        GraphError::Parse(_) => "ParseError",
        GraphError::Schema(_) => "SchemaError",
        GraphError::InvalidGraph(_) => "InvalidGraph",
        GraphError::UnknownNode { .. } => "UnknownNode",
        GraphError::PathKindMismatch { .. } => "PathKindMismatch",
    }
}

impl From<GraphError> for AppError {
    fn from(e: GraphError) -> Self {
        AppError::Data(e.to_string(), graph_error_kind(&e))
    }
}

impl From<AugmentError> for AppError {
    fn from(e: AugmentError) -> Self {
        let kind = match &e {
            AugmentError::InvalidConfig(_) => "ConfigError",
            AugmentError::NoMinorityNodes => "NoMinorityNodes",
            AugmentError::UnreachableRatio { .. } => "UnreachableRatio",
            AugmentError::TooFewNeighbors { .. } => "TooFewNeighbors",
            AugmentError::EmptySplit => "EmptySplit",
        };
        AppError::Data(e.to_string(), kind)
    }
}

fn model_error_kind(e: &ModelError) -> &'static str {
    match e {
        ModelError::Dim(_) => "DimError",
        ModelError::EmptyGraphKind(_) => "EmptyGraphKind",
        ModelError::Checkpoint(_) => "CheckpointError",
        ModelError::Graph(g) => graph_error_kind(g),
        ModelError::Io { .. } => "IoError",
    }
}

impl From<ModelError> for AppError {
    fn from(e: ModelError) -> Self {
        let kind = model_error_kind(&e);
        AppError::Data(e.to_string(), kind)
    }
}

impl From<TrainError> for AppError {
    fn from(e: TrainError) -> Self {
        match &e {
            TrainError::NonFiniteGradient(_) => {
                AppError::Numeric(e.to_string(), "NonFiniteGradient")
            }
            TrainError::InvalidEpsilon => AppError::Usage(e.to_string()),
            TrainError::Config(_) => AppError::Data(e.to_string(), "ConfigError"),
            TrainError::NoLabeledNodes => AppError::Data(e.to_string(), "NoLabeledNodes"),
            TrainError::DegenerateLabels => AppError::Data(e.to_string(), "DegenerateLabels"),
            TrainError::PrecisionRequired => AppError::Usage(e.to_string()),
            TrainError::Model(m) => AppError::Data(m.to_string(), model_error_kind(m)),
        }
    }
}

impl From<EvalError> for AppError {
    fn from(e: EvalError) -> Self {
        match &e {
            EvalError::InvalidThreshold(_) => AppError::Usage(e.to_string()),
            EvalError::NoLabeledNodes => AppError::Data(e.to_string(), "NoLabeledNodes"),
            EvalError::EmptySplit(_) => AppError::Data(e.to_string(), "EmptySplit"),
            EvalError::Model(m) => AppError::Data(m.to_string(), model_error_kind(m)),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> AppError {
    AppError::Data(format!("i/o error on {}: {e}", path.display()), "IoError")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let payload = ErrorPayload {
                    kind: "UsageError",
                    message: &e.to_string(),
                };
                eprintln!("{}", serde_json::to_string(&payload).unwrap());
                return ExitCode::from(1);
            }
            // --help / --version render on stdout with success.
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let payload = ErrorPayload {
                kind: e.kind(),
                message: e.message(),
            };
            eprintln!("{}", serde_json::to_string(&payload).unwrap());
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    let mut cfg = load_config(&cli.flags)?;
    let overrides = Overrides {
        seed: cli.flags.seed,
        dim: cli.flags.dim,
        hidden: cli.flags.hidden,
        layers: cli.flags.layers,
        lr: cli.flags.lr,
        epochs: cli.flags.epochs,
        threshold: cli.flags.threshold,
        target_ratio: cli.flags.target_ratio,
        keep_prob: cli.flags.keep_prob,
        rewire_prob: cli.flags.rewire_prob,
        extra_edge_prob: cli.flags.extra_edge_prob,
        drop_prob: cli.flags.drop_prob,
        threads: cli.flags.threads,
        precision: cli.flags.precision,
    };
    overrides.apply(&mut cfg).map_err(AppError::Usage)?;
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global();

    match cli.command {
        Command::Generate { out, n_graphs } => cmd_generate(cfg, &out, n_graphs),
        Command::Augment { data, out, method } => cmd_augment(cfg, &data, &out, &method),
        Command::Train { data, out, model } => cmd_train(cfg, &data, &out, &model),
        Command::Eval {
            data,
            checkpoint,
            split,
            out,
        } => cmd_eval(cfg, &data, &checkpoint, &split, out.as_deref()),
        Command::Predict {
            checkpoint,
            graph,
            out,
        } => cmd_predict(&checkpoint, &graph, out.as_deref()),
        Command::Gradcheck { model, epsilon } => cmd_gradcheck(cfg, &model, epsilon),
        Command::Ablate {
            data,
            out,
            skew_data,
        } => cmd_ablate(cfg, &data, &out, skew_data.as_deref()),
    }
}

fn load_config(flags: &CommonFlags) -> Result<RunConfig, AppError> {
    let mut cfg = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| AppError::Usage(format!("bad config {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    cfg.resolve_seeds();
    Ok(cfg)
}

fn write_resolved_config(cfg: &RunConfig, dir: &Path) -> Result<(), AppError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join("resolved_config.json");
    fs::write(&path, cfg.to_json()).map_err(|e| io_err(&path, e))
}

fn parse_kind(s: &str) -> Result<ModelKind, AppError> {
    s.parse::<ModelKind>()
        .map_err(|e| AppError::Usage(e.to_string()))
}

fn cmd_generate(cfg: RunConfig, out: &Path, n_graphs: Option<usize>) -> Result<(), AppError> {
    let mut gen = cfg.gen_config();
    let mut cfg = cfg;
    if let Some(n) = n_graphs {
        gen.n_graphs = n;
        cfg.generate.n_graphs = n;
    }
    let ds = generate_dataset(&gen, &cfg.generate.rule)?;
    ds.save(out)?;
    write_resolved_config(&cfg, out)?;
    let ratio = class_ratio(&ds, Split::Train)
        .map(|r| format!("{r:.4}"))
        .unwrap_or("n/a".into());
    println!(
        "generated {} graphs ({} train / {} val), train positive ratio {ratio} -> {}",
        ds.len(),
        ds.iter_split(Split::Train).count(),
        ds.iter_split(Split::Val).count(),
        out.display()
    );
    Ok(())
}

fn cmd_augment(cfg: RunConfig, data: &Path, out: &Path, method: &str) -> Result<(), AppError> {
    let ds = LabeledDataset::load(data)?;
    let (augmented, mut summary) = match method {
        "cpos" => cpos_augment(&ds, &cfg.cpos_config())?,
        "smote" => smote_augment(
            &ds,
            cfg.augment.k,
            cfg.augment.target_ratio,
            cfg.augment.seed.unwrap_or(cfg.seed),
        )?,
        other => return Err(AppError::Usage(format!("unknown method {other}"))),
    };
    summary.label_flip_fraction =
        privacyguard::synthgen::flipped_clone_fraction(&augmented, &cfg.generate.rule);
    augmented.save(out)?;
    write_resolved_config(&cfg, out)?;
    let path = out.join("augment_summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary).unwrap())
        .map_err(|e| io_err(&path, e))?;
    let flips = summary
        .label_flip_fraction
        .map(|f| format!(", label flips {f:.4}"))
        .unwrap_or_default();
    println!(
        "{}: {} clones, ratio {:.4} -> {:.4}, {} graphs touched{flips}",
        summary.method,
        summary.clones_added,
        summary.ratio_before,
        summary.ratio_after,
        summary.per_graph.len()
    );
    Ok(())
}

/// Feature dimensions are facts of the dataset; adopt them into the config.
fn adopt_data_dims(cfg: &mut RunConfig, ds: &LabeledDataset) {
    if let Some(e) = ds.entries.first() {
        cfg.model.d_category = e.graph.dims.category;
        cfg.model.d_relation = e.graph.dims.relation;
    }
}

fn cmd_train(mut cfg: RunConfig, data: &Path, out: &Path, model: &str) -> Result<(), AppError> {
    let kind = parse_kind(model)?;
    let ds = LabeledDataset::load(data)?;
    adopt_data_dims(&mut cfg, &ds);
    let dims = cfg.model_dims();
    let seed = cfg.train.seed.unwrap_or(cfg.seed);
    let init = AnyModel::init(kind, &dims, seed)?;
    let outcome = train(&ds, &cfg.train_config(), init)?;

    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let metadata = serde_json::json!({
        "dataset": data.display().to_string(),
        "epochs_trained": outcome.log.epochs.len(),
        "best_epoch": outcome.log.best_epoch,
        "best_val_f1": outcome.log.best_val_f1,
        "pos_weight": outcome.log.pos_weight,
    });
    save_checkpoint(&outcome.model, seed, metadata, &out.join("checkpoint.json"))?;
    let log_path = out.join("train_log.jsonl");
    fs::write(&log_path, outcome.log.to_jsonl()).map_err(|e| io_err(&log_path, e))?;
    write_resolved_config(&cfg, out)?;
    println!(
        "trained {kind} for {} epochs; best val F1 {:.4} at epoch {} -> {}",
        outcome.log.epochs.len(),
        outcome.log.best_val_f1,
        outcome.log.best_epoch,
        out.display()
    );
    Ok(())
}

fn cmd_eval(
    cfg: RunConfig,
    data: &Path,
    checkpoint: &Path,
    split: &str,
    out: Option<&Path>,
) -> Result<(), AppError> {
    let model = load_checkpoint(checkpoint)?;
    let mut ds = LabeledDataset::load(data)?;
    let split = if split == "train" {
        Split::Train
    } else {
        Split::Val
    };
    if cfg.eval.drop_prob > 0.0 {
        if cfg.eval.drop_prob >= 1.0 {
            return Err(AppError::Usage("drop_prob must lie in [0, 1)".into()));
        }
        for (i, e) in ds.entries.iter_mut().enumerate() {
            e.graph = perturb_edges(
                &e.graph,
                cfg.eval.drop_prob,
                derive_seed(cfg.eval.drop_seed, i as u64),
            );
        }
    }
    let report = evaluate_model(&model, &ds, split, cfg.eval.threshold)?;
    println!("{}", format_table(&[&report]));
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let path = dir.join("metrics.json");
        fs::write(&path, report.to_json()).map_err(|e| io_err(&path, e))?;
        write_resolved_config(&cfg, dir)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PredictionDoc {
    graph: String,
    nodes: Vec<PredictedNode>,
}

#[derive(Serialize)]
struct PredictedNode {
    id: u32,
    is_privacy: f64,
    bbox: Option<[f64; 4]>,
}

fn cmd_predict(checkpoint: &Path, graph: &Path, out: Option<&Path>) -> Result<(), AppError> {
    let model = load_checkpoint(checkpoint)?;
    let text = fs::read_to_string(graph).map_err(|e| io_err(graph, e))?;
    let g = HeteroSceneGraph::parse(&text)?;
    let probs = model.predict(&g)?;
    let nodes = probs
        .into_iter()
        .map(|(id, p)| PredictedNode {
            id,
            is_privacy: p,
            bbox: g
                .categories
                .iter()
                .find(|c| c.id == id)
                .and_then(|c| c.bbox),
        })
        .collect();
    let doc = PredictionDoc {
        graph: graph.display().to_string(),
        nodes,
    };
    let rendered = serde_json::to_string_pretty(&doc).unwrap();
    match out {
        Some(path) => fs::write(path, rendered).map_err(|e| io_err(path, e))?,
        None => println!("{rendered}"),
    }
    Ok(())
}

fn cmd_gradcheck(cfg: RunConfig, model: &str, epsilon: f64) -> Result<(), AppError> {
    if cfg.precision != privacyguard::training::Precision::F64 {
        return Err(TrainError::PrecisionRequired.into());
    }
    let kind = parse_kind(model)?;
    let gen = GenConfig {
        n_graphs: 1,
        nodes_per_graph: (6, 6),
        relations_per_graph: (5, 9),
        seed: cfg.seed,
        d_category: cfg.model.d_category.min(8),
        d_relation: cfg.model.d_relation.min(8),
        ..GenConfig::default()
    };
    let graph = generate_dataset(&gen, &cfg.generate.rule)?.entries[0]
        .graph
        .clone();
    let mut dims = cfg.model_dims();
    dims.d_category = gen.d_category;
    dims.d_relation = gen.d_relation;
    let model = AnyModel::init(kind, &dims, cfg.seed)?;
    let err = gradcheck(&model, &graph, 2.0, epsilon)?;
    println!("gradcheck {kind}: max relative error {err:.3e} (epsilon {epsilon:.0e})");
    if err < 1e-4 {
        Ok(())
    } else {
        Err(AppError::Numeric(
            format!("gradient check failed: max relative error {err:.3e} >= 1e-4"),
            "GradcheckFailed",
        ))
    }
}

fn cmd_ablate(
    mut cfg: RunConfig,
    data: &Path,
    out: &Path,
    skew_data: Option<&Path>,
) -> Result<(), AppError> {
    let ds = LabeledDataset::load(data)?;
    adopt_data_dims(&mut cfg, &ds);
    let seed = cfg.train.seed.unwrap_or(cfg.seed);

    let mut reports: Vec<(String, MetricsReport)> = Vec::new();
    for kind in [
        ModelKind::Hgr,
        ModelKind::Gcn,
        ModelKind::Gat,
        ModelKind::Mlp,
    ] {
        let init = AnyModel::init(kind, &cfg.model_dims(), seed)?;
        let outcome = train(&ds, &cfg.train_config(), init)?;
        let report = evaluate_model(&outcome.model, &ds, Split::Val, cfg.eval.threshold)?;
        reports.push((kind.to_string(), report));
    }

    if let Some(skew_path) = skew_data {
        let skew = LabeledDataset::load(skew_path)?;
        let (with_cpos, _) = cpos_augment(&skew, &cfg.cpos_config())?;
        let (with_smote, _) = smote_augment(
            &skew,
            cfg.augment.k,
            cfg.augment.target_ratio,
            cfg.augment.seed.unwrap_or(cfg.seed),
        )?;
        for (label, variant) in [("hgr+cpos", with_cpos), ("hgr+smote", with_smote)] {
            let init = AnyModel::init(ModelKind::Hgr, &cfg.model_dims(), seed)?;
            let outcome = train(&variant, &cfg.train_config(), init)?;
            let report = evaluate_model(&outcome.model, &variant, Split::Val, cfg.eval.threshold)?;
            reports.push((label.to_string(), report));
        }
    }

    let mut table_rows: Vec<MetricsReport> = Vec::new();
    for (label, report) in &reports {
        let mut r = report.clone();
        r.model = label.clone();
        table_rows.push(r);
    }
    let table = format_table(&table_rows.iter().collect::<Vec<_>>());
    println!("{table}");

    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let json_path = out.join("ablate.json");
    fs::write(
        &json_path,
        serde_json::to_string_pretty(&table_rows).unwrap(),
    )
    .map_err(|e| io_err(&json_path, e))?;
    let table_path = out.join("ablate.txt");
    fs::write(&table_path, &table).map_err(|e| io_err(&table_path, e))?;
    write_resolved_config(&cfg, out)?;
    Ok(())
}
