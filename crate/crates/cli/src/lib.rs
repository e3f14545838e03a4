//! Command-line front end: `synth`, `train`, `eval` and `ablate`.
//!
//! Each subcommand is also callable in-process through its `cmd_*` function.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use smile_core::data::{load_dataset, save_dataset, synth_generate, BagDataset, SynthConfig};
use smile_core::metrics::{evaluate_probabilities, Averaging, MetricsReport};
use smile_core::model::{BagGraph, ModelKind, Mode, ScaleConfig};
use smile_core::training::{
    load_checkpoint, run_cv, save_checkpoint, Checkpoint, CvResult, EpochRecord, OptimizerKind, TrainConfig,
};

pub const SEED_ENV: &str = "SMILE_SEED";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config file or environment; exit code 2.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] smile_core::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(smile_core::Error::InvalidConfig(_)) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "smile", version, about = "Scale-adaptive attention multiple-instance learning")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted-witness synthetic benchmark.
    Synth(SynthArgs),
    /// Train with stratified cross-validation.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run the threshold × factor grid.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    pub bags: usize,
    #[arg(long, default_value_t = 0.5)]
    pub pos_fraction: f64,
    #[arg(long, default_value_t = 20)]
    pub min_size: usize,
    #[arg(long, default_value_t = 60)]
    pub max_size: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.05)]
    pub witness_rate: f64,
    #[arg(long, default_value_t = 2.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Training flags. Unset flags fall back to the config file, then defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    /// TOML file with training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub factor: Option<f64>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub attn_dim: Option<usize>,
    /// Report macro-averaged precision, recall and F1 instead of weighted.
    #[arg(long)]
    pub macro_average: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Parent of the run directory.
    #[arg(long, default_value = "runs")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Restrict evaluation to the checkpoint's validation bags.
    #[arg(long)]
    pub val_only: bool,
    /// Write one attention record per bag (JSON lines).
    #[arg(long)]
    pub dump_attention: Option<PathBuf>,
    /// Write the metrics JSON here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    /// One or more datasets; each contributes Acc/AUC/F1 columns.
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long, default_value = "runs")]
    pub out_dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 0.6, 0.8])]
    pub thresholds: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.3, 0.4, 0.5, 0.6, 0.7, 0.8])]
    pub factors: Vec<f64>,
    /// Skip the unscaled (factor 1) row.
    #[arg(long)]
    pub no_baseline: bool,
    #[command(flatten)]
    pub flags: TrainFlags,
}

/// Resolves flags > config file > defaults, then applies `SMILE_SEED`.
pub fn resolve_config(flags: &TrainFlags) -> CliResult<TrainConfig> {
    let mut cfg = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            toml::from_str::<TrainConfig>(&text)
                .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    macro_rules! apply {
        ($($field:ident),*) => {$(
            if let Some(v) = flags.$field {
                cfg.$field = v;
            }
        )*};
    }
    apply!(epochs, learning_rate, weight_decay, batch_size, folds, seed, optimizer, model, hidden_dim, attn_dim);
    if let Some(t) = flags.threshold {
        cfg.scale.threshold = t;
    }
    if let Some(f) = flags.factor {
        cfg.scale.factor = f;
    }
    if flags.macro_average {
        cfg.averaging = Averaging::Macro;
    }
    if let Ok(raw) = std::env::var(SEED_ENV) {
        cfg.seed = raw
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV} must be an unsigned integer, got {raw:?}")))?;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

/// Directory name derived from the configuration alone.
pub fn run_name(cfg: &TrainConfig) -> String {
    format!(
        "{}_{}_t{}_f{}_lr{}_wd{}_bs{}_e{}_k{}_d{}_a{}_s{}",
        cfg.model,
        cfg.optimizer,
        cfg.scale.threshold,
        cfg.scale.factor,
        cfg.learning_rate,
        cfg.weight_decay,
        cfg.batch_size,
        cfg.epochs,
        cfg.folds,
        cfg.hidden_dim,
        cfg.attn_dim,
        cfg.seed
    )
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    fs::write(path, serde_json::to_string_pretty(value).map_err(smile_core::Error::from)? + "\n")?;
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> CliResult<BagDataset> {
    let seed = match std::env::var(SEED_ENV) {
        Ok(raw) => raw
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV} must be an unsigned integer, got {raw:?}")))?,
        Err(_) => args.seed,
    };
    let cfg = SynthConfig {
        n_bags: args.bags,
        pos_fraction: args.pos_fraction,
        min_bag_size: args.min_size,
        max_bag_size: args.max_size,
        feature_dim: args.dim,
        witness_rate: args.witness_rate,
        separation: args.separation,
        seed,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let ds = synth_generate(&cfg)?;
    save_dataset(&ds, &args.out)?;
    let (neg, pos) = ds.class_counts();
    println!(
        "wrote {}: {} bags ({pos} positive, {neg} negative), feature dim {}",
        args.out.display(),
        ds.len(),
        ds.feature_dim
    );
    Ok(ds)
}

#[derive(Serialize)]
struct FoldMetrics<'a> {
    fold_index: usize,
    best_epoch: usize,
    best: &'a MetricsReport,
    train_bags: usize,
    val_bags: usize,
    history: &'a [EpochRecord],
}

#[derive(Serialize)]
struct MeanMetrics<'a> {
    mean: &'a MetricsReport,
    folds: &'a [MetricsReport],
}

/// Outcome of a cross-validated training run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub config: TrainConfig,
    pub cv: CvResult,
}

/// Cross-validates `cfg` on `ds` and writes every artifact into `run_dir`.
pub fn train_into(ds: &BagDataset, cfg: &TrainConfig, run_dir: &Path) -> CliResult<CvResult> {
    let cv = run_cv(ds, cfg)?;
    fs::create_dir_all(run_dir)?;
    write_json(&run_dir.join("config.json"), cfg)?;
    for (fold, split) in cv.folds.iter().zip(&cv.splits) {
        let ckpt = Checkpoint::new(
            fold.best_params.clone(),
            cfg.clone(),
            fold.fold_index,
            fold.best_epoch,
            fold.best_report,
            split.val_ids.clone(),
        );
        save_checkpoint(&ckpt, run_dir.join(format!("fold_{}.milb", fold.fold_index)))?;
        write_json(
            &run_dir.join(format!("fold_{}_metrics.json", fold.fold_index)),
            &FoldMetrics {
                fold_index: fold.fold_index,
                best_epoch: fold.best_epoch,
                best: &fold.best_report,
                train_bags: split.train_ids.len(),
                val_bags: split.val_ids.len(),
                history: &fold.history,
            },
        )?;
    }
    write_json(
        &run_dir.join("mean_metrics.json"),
        &MeanMetrics {
            mean: &cv.mean,
            folds: &cv.reports,
        },
    )?;
    fs::write(
        run_dir.join("metrics.csv"),
        format!("{}\n{}\n", MetricsReport::CSV_HEADER, cv.mean.csv_row()),
    )?;
    Ok(cv)
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<TrainOutcome> {
    let cfg = resolve_config(&args.flags)?;
    let ds = load_dataset(&args.data)?;
    let run_dir = args.out_dir.join(run_name(&cfg));
    let cv = train_into(&ds, &cfg, &run_dir)?;
    for (fold, report) in cv.folds.iter().zip(&cv.reports) {
        println!(
            "fold {}: best epoch {}, ACC {:.4} AUC {:.4} F1 {:.4}",
            fold.fold_index, fold.best_epoch, report.accuracy, report.auc, report.f1
        );
    }
    println!("{}", MetricsReport::CSV_HEADER);
    println!("{}", cv.mean.csv_row());
    println!("run directory: {}", run_dir.display());
    Ok(TrainOutcome {
        run_dir,
        config: cfg,
        cv,
    })
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<MetricsReport> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let ds = load_dataset(&args.data)?;
    let dims = ckpt.params.dims();
    if ds.feature_dim != dims.input_dim {
        return Err(smile_core::Error::Dimension(format!(
            "checkpoint expects {}-dimensional instances, dataset has {}",
            dims.input_dim, ds.feature_dim
        ))
        .into());
    }
    let cfg = &ckpt.header.config;
    let bags = if args.val_only {
        ds.select(&ckpt.header.val_ids)?
    } else {
        ds.bags.iter().collect()
    };
    let graphs: Vec<BagGraph> = bags
        .par_iter()
        .map(|bag| BagGraph::build(bag, &ckpt.params, cfg.model, &cfg.scale, Mode::Eval))
        .collect::<Result<_, _>>()?;
    let probs: Vec<f64> = graphs.iter().map(BagGraph::probability).collect();
    let labels: Vec<u8> = bags.iter().map(|b| b.label).collect();
    let report = evaluate_probabilities(&probs, &labels, cfg.averaging)?;

    if let Some(path) = &args.dump_attention {
        if !cfg.model.uses_attention() {
            return Err(CliError::Usage(format!("model {} has no attention to dump", cfg.model)));
        }
        let mut out = String::new();
        for (bag, graph) in bags.iter().zip(&graphs) {
            let record = graph.trace().expect("attention model").record(&bag.id);
            out.push_str(&serde_json::to_string(&record).map_err(smile_core::Error::from)?);
            out.push('\n');
        }
        fs::write(path, out)?;
    }
    let json = serde_json::to_string_pretty(&report).map_err(smile_core::Error::from)?;
    if let Some(path) = &args.out {
        fs::write(path, json.clone() + "\n")?;
    }
    println!("{json}");
    Ok(report)
}

/// One row of the ablation table; `None` scale marks the unscaled row.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub scale: Option<ScaleConfig>,
    /// Mean report per dataset, in input order.
    pub reports: Vec<MetricsReport>,
}

impl AblationRow {
    pub fn label(&self) -> (String, String) {
        match self.scale {
            None => ("w/o".into(), "w/o".into()),
            Some(s) => (s.threshold.to_string(), s.factor.to_string()),
        }
    }
}

fn dataset_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

pub fn ablation_csv(names: &[String], rows: &[AblationRow]) -> String {
    let mut out = String::from("Threshold,Factor");
    for name in names {
        out.push_str(&format!(",{name} Acc,{name} AUC,{name} F1"));
    }
    out.push('\n');
    for row in rows {
        let (t, f) = row.label();
        out.push_str(&format!("{t},{f}"));
        for r in &row.reports {
            out.push_str(&format!(",{},{},{}", r.accuracy, r.auc, r.f1));
        }
        out.push('\n');
    }
    out
}

pub fn ablation_markdown(names: &[String], rows: &[AblationRow]) -> String {
    let mut out = String::from("| Threshold | Factor |");
    let mut rule = String::from("|---|---|");
    for name in names {
        out.push_str(&format!(" {name} Acc | {name} AUC | {name} F1 |"));
        rule.push_str("---|---|---|");
    }
    out.push('\n');
    out.push_str(&rule);
    out.push('\n');
    for row in rows {
        let (t, f) = row.label();
        out.push_str(&format!("| {t} | {f} |"));
        for r in &row.reports {
            out.push_str(&format!(" {:.4} | {:.4} | {:.4} |", r.accuracy, r.auc, r.f1));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug)]
pub struct AblationOutcome {
    pub names: Vec<String>,
    pub rows: Vec<AblationRow>,
    pub csv_path: PathBuf,
    pub markdown_path: PathBuf,
}

pub fn cmd_ablate(args: &AblateArgs) -> CliResult<AblationOutcome> {
    if args.thresholds.is_empty() || args.factors.is_empty() {
        return Err(CliError::Usage("thresholds and factors must be non-empty".into()));
    }
    let base = resolve_config(&args.flags)?;
    let mut cells: Vec<Option<ScaleConfig>> = Vec::new();
    if !args.no_baseline {
        cells.push(None);
    }
    for &t in &args.thresholds {
        for &f in &args.factors {
            cells.push(Some(ScaleConfig::new(t, f).map_err(|e| CliError::Usage(e.to_string()))?));
        }
    }
    let datasets: Vec<BagDataset> = args.data.iter().map(load_dataset).collect::<Result<_, _>>()?;
    let names: Vec<String> = args.data.iter().map(|p| dataset_name(p)).collect();
    let root = args.out_dir.join(format!("ablate_{}", run_name(&base)));

    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..datasets.len()).map(move |d| (c, d))).collect();
    let results: Vec<MetricsReport> = jobs
        .par_iter()
        .map(|&(c, d)| {
            let scale = cells[c].unwrap_or_else(ScaleConfig::plain);
            let cfg = TrainConfig { scale, ..base.clone() };
            let (t, f) = AblationRow {
                scale: cells[c],
                reports: Vec::new(),
            }
            .label();
            let dir = root.join(format!("{}_t{}_f{}", names[d], t.replace('/', ""), f.replace('/', "")));
            train_into(&datasets[d], &cfg, &dir).map(|cv| cv.mean)
        })
        .collect::<CliResult<_>>()?;
    let rows: Vec<AblationRow> = cells
        .iter()
        .enumerate()
        .map(|(c, scale)| AblationRow {
            scale: *scale,
            reports: results[c * datasets.len()..(c + 1) * datasets.len()].to_vec(),
        })
        .collect();

    fs::create_dir_all(&root)?;
    let csv_path = root.join("ablation.csv");
    let markdown_path = root.join("ablation.md");
    fs::write(&csv_path, ablation_csv(&names, &rows))?;
    let table = ablation_markdown(&names, &rows);
    fs::write(&markdown_path, &table)?;
    print!("{table}");
    Ok(AblationOutcome {
        names,
        rows,
        csv_path,
        markdown_path,
    })
}

/// Runs a parsed command line, honouring `--jobs`.
pub fn run(cli: Cli) -> CliResult<()> {
    let dispatch = || -> CliResult<()> {
        match &cli.command {
            Command::Synth(a) => cmd_synth(a).map(drop),
            Command::Train(a) => cmd_train(a).map(drop),
            Command::Eval(a) => cmd_eval(a).map(drop),
            Command::Ablate(a) => cmd_ablate(a).map(drop),
        }
    };
    match cli.jobs {
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(e.to_string()))?
            .install(dispatch),
        None => dispatch(),
    }
}
