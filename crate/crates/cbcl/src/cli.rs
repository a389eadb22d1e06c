//! Command-line interface.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use cbcl_core::arrangement::{ArrangementStore, ArrangementVerdict, VerdictKind};
use cbcl_core::cleaning::{run_trials, CleaningTrialSpec, HeldOutPool, StageCounts};
use cbcl_core::protocol::{run_cbcl_session, GridSpec, IncrementPlan};
use cbcl_core::{ClassId, LabelMap};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiment::{
    hyperparams_jsonl, run_experiment, summary_table, with_threads, write_outputs, DataSource, ExperimentConfig,
    Method, SyntheticSettings, TrainSettings,
};
use crate::features::{load_label_map, save_features, validate_file, FeatureFormat};
use crate::scenes::{load_scene, load_store, save_store};

#[derive(Debug, Parser)]
#[command(name = "cbcl", version, about = "Few-shot class-incremental learning with centroid-based concepts")]
pub struct Cli {
    /// Worker threads for parallel runs and trials (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic feature file.
    Gen(GenArgs),
    /// Run an incremental experiment over several seeded runs.
    Run(RunArgs),
    /// Report the hyperparameters chosen per increment by cross-validation.
    Tune(RunArgs),
    /// Learn and check object arrangements.
    #[command(subcommand)]
    Arrange(ArrangeCommand),
    /// Simulate the table-cleaning task.
    CleanSim(CleanSimArgs),
    /// Check that a feature file is well formed.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Synthetic spec, e.g. `classes=22,dim=16,per_class=30,scale=8,stddev=3.2,seed=0`.
    #[arg(long, default_value = "")]
    pub synthetic: SyntheticSettings,
    #[arg(long)]
    pub out: PathBuf,
    /// Inferred from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<FeatureFormat>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Feature file (binary `CBFV` or `.csv`) with its `.labels` sidecar.
    #[arg(long, conflicts_with = "synthetic")]
    pub dataset: Option<PathBuf>,
    /// Synthetic spec; an empty value uses the defaults.
    #[arg(long, num_args = 0..=1, default_missing_value = "")]
    pub synthetic: Option<SyntheticSettings>,
    #[arg(long, value_enum, requires = "dataset")]
    pub format: Option<FeatureFormat>,
    /// L2-normalize every feature vector after loading.
    #[arg(long, requires = "dataset")]
    pub l2_normalize: bool,
}

impl DataArgs {
    fn is_set(&self) -> bool {
        self.dataset.is_some() || self.synthetic.is_some()
    }

    fn source(&self) -> Result<DataSource> {
        match (&self.dataset, &self.synthetic) {
            (Some(path), None) => Ok(DataSource::File {
                path: path.clone(),
                format: self.format.unwrap_or_else(|| FeatureFormat::infer(path)),
                l2_normalize: self.l2_normalize,
            }),
            (None, Some(s)) => Ok(DataSource::Synthetic(s.clone())),
            _ => Err(Error::Usage("give --dataset FILE or --synthetic [SPEC]".into())),
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Re-drive a run from its `config.json`; excludes the other experiment flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Training examples per class [default: 5].
    #[arg(long)]
    pub shots: Option<usize>,
    /// New classes per increment [default: 2].
    #[arg(long = "classes-per-inc")]
    pub classes_per_inc: Option<usize>,
    /// Seeded runs [default: 10].
    #[arg(long)]
    pub runs: Option<usize>,
    /// [default: cbcl]
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// `auto`, `q=<quantiles>;n=<votes>` or `d=<thresholds>;n=<votes>` [default: auto].
    #[arg(long)]
    pub grid: Option<String>,
    /// Cross-validation folds [default: min(5, shots)].
    #[arg(long)]
    pub folds: Option<usize>,
    /// Linear baselines: SGD learning rate [default: 0.001].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Linear baselines: epochs per increment [default: 100].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Linear baselines: minibatch size [default: 8].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Output directory (required for `run`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunArgs {
    fn any_experiment_flag(&self) -> bool {
        self.data.is_set()
            || self.shots.is_some()
            || self.classes_per_inc.is_some()
            || self.runs.is_some()
            || self.method.is_some()
            || self.seed.is_some()
            || self.grid.is_some()
            || self.folds.is_some()
            || self.lr.is_some()
            || self.epochs.is_some()
            || self.batch_size.is_some()
    }

    pub fn config(&self) -> Result<ExperimentConfig> {
        let cfg = match &self.config {
            Some(path) => {
                if self.any_experiment_flag() {
                    return Err(Error::Usage("--config cannot be combined with experiment flags".into()));
                }
                ExperimentConfig::from_json_file(path)?
            }
            None => {
                let d = TrainSettings::default();
                ExperimentConfig {
                    source: self.data.source()?,
                    shots: self.shots.unwrap_or(5),
                    classes_per_increment: self.classes_per_inc.unwrap_or(2),
                    runs: self.runs.unwrap_or(10),
                    method: self.method.unwrap_or(Method::Cbcl),
                    grid: self.grid.clone().unwrap_or_else(|| "auto".into()),
                    folds: self.folds,
                    seed: self.seed.unwrap_or(0),
                    train: TrainSettings {
                        learning_rate: self.lr.unwrap_or(d.learning_rate),
                        epochs: self.epochs.unwrap_or(d.epochs),
                        batch_size: self.batch_size.unwrap_or(d.batch_size),
                    },
                }
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum ArrangeCommand {
    /// Store one arrangement per scene file, named after the file stem.
    Learn {
        /// Label map (`id<TAB>name` lines) fixing the class count.
        #[arg(long)]
        labels: PathBuf,
        /// Arrangement store to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        scenes: Vec<PathBuf>,
    },
    /// Compare scenes with the stored arrangements.
    Check {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        store: PathBuf,
        /// Also write the verdicts to this file.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(required = true)]
        scenes: Vec<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct CleanSimArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Training examples per class; the rest form the held-out pool.
    #[arg(long, default_value_t = 5)]
    pub shots: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10_000)]
    pub trials: u64,
    #[arg(long, default_value_t = 6)]
    pub objects: usize,
    #[arg(long, default_value_t = 2)]
    pub targets: usize,
    /// Class to clear [default: the first class in the label map].
    #[arg(long)]
    pub target_class: Option<String>,
    #[arg(long, default_value_t = 0.2)]
    pub p_miss: f64,
    #[arg(long, default_value_t = 0.0)]
    pub p_move_fail: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub file: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<FeatureFormat>,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let ds = DataSource::Synthetic(args.synthetic.clone()).load()?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let format = args.format.unwrap_or_else(|| FeatureFormat::infer(&args.out));
    save_features(&ds, &args.out, format)?;
    println!("wrote {} examples of dim {} to {}", ds.len(), ds.dim(), args.out.display());
    Ok(())
}

fn cmd_run(args: &RunArgs, threads: Option<usize>) -> Result<()> {
    let out = args.out.as_ref().ok_or_else(|| Error::Usage("run needs --out DIR".into()))?;
    let cfg = args.config()?;
    let ds = cfg.source.load()?;
    log::info!("{} examples, {} classes, dim {}", ds.len(), ds.labels().len(), ds.dim());
    let result = with_threads(threads, || run_experiment(&cfg, &ds))??;
    write_outputs(&cfg, &result, out)?;
    print!("{}", summary_table(&cfg, &result));
    Ok(())
}

fn cmd_tune(args: &RunArgs, threads: Option<usize>) -> Result<()> {
    let mut cfg = args.config()?;
    if cfg.method != Method::Cbcl {
        log::warn!("tune only applies to the centroid method; ignoring --method");
        cfg.method = Method::Cbcl;
    }
    let ds = cfg.source.load()?;
    let result = with_threads(threads, || run_experiment(&cfg, &ds))??;
    let records = hyperparams_jsonl(&result);
    if let Some(out) = &args.out {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write_file(&out.join("hyperparams.jsonl"), &records)?;
        write_file(&out.join("config.json"), cfg.to_json())?;
    }
    print!("{records}");
    Ok(())
}

fn class_names(labels: &LabelMap, classes: impl IntoIterator<Item = ClassId>) -> String {
    let names: Vec<&str> = classes.into_iter().map(|c| labels.name(c).unwrap_or("?")).collect();
    names.join(", ")
}

pub fn format_verdict(scene: &Path, verdict: &ArrangementVerdict, labels: &LabelMap) -> String {
    let mut out = String::new();
    let kind = match verdict.kind {
        VerdictKind::Consistent => "consistent",
        VerdictKind::Missing => "missing",
        VerdictKind::Wrong => "wrong",
    };
    let _ = writeln!(out, "scene: {}", scene.display());
    let _ = writeln!(out, "closest: {} (distance {})", verdict.closest.join(", "), verdict.distance);
    let _ = writeln!(out, "verdict: {kind}");
    if !verdict.missing_classes.is_empty() {
        let _ = writeln!(out, "missing: {}", class_names(labels, verdict.missing_classes.iter().copied()));
    }
    for (observed, expected) in &verdict.wrong_pairs {
        let _ = writeln!(
            out,
            "replace: {} -> {}",
            labels.name(*observed).unwrap_or("?"),
            labels.name(*expected).unwrap_or("?")
        );
    }
    if !verdict.unexpected_classes.is_empty() {
        let _ = writeln!(out, "unexpected: {}", class_names(labels, verdict.unexpected_classes.iter().copied()));
    }
    if verdict.relation_mismatch {
        let _ = writeln!(out, "note: same objects, different placement");
    }
    if verdict.low_confidence {
        let _ = writeln!(out, "note: several substitutions, pairing is a guess");
    }
    out
}

fn cmd_arrange(cmd: &ArrangeCommand) -> Result<()> {
    match cmd {
        ArrangeCommand::Learn { labels, out, scenes } => {
            let (labels, _) = load_label_map(labels)?;
            let mut store = ArrangementStore::new(labels.len());
            for path in scenes {
                let name = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| Error::Usage(format!("cannot name arrangement after {}", path.display())))?;
                let scene = load_scene(path, &labels)?;
                store.learn(name, &scene)?;
            }
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            save_store(&store, out)?;
            println!("stored {} arrangements over {} classes in {}", store.len(), labels.len(), out.display());
        }
        ArrangeCommand::Check { labels, store, out, scenes } => {
            let (labels, _) = load_label_map(labels)?;
            let store = load_store(store)?;
            if store.n_classes() != labels.len() {
                return Err(Error::Usage(format!(
                    "store covers {} classes but the label map has {}",
                    store.n_classes(),
                    labels.len()
                )));
            }
            let mut text = String::new();
            for (i, path) in scenes.iter().enumerate() {
                if i > 0 {
                    text.push('\n');
                }
                let verdict = store.check(&load_scene(path, &labels)?)?;
                text.push_str(&format_verdict(path, &verdict, &labels));
            }
            if let Some(out) = out {
                write_file(out, &text)?;
            }
            print!("{text}");
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct BreakdownRecord {
    trials: u64,
    objects: u64,
    detected: u64,
    misclassified: u64,
    move_attempts: u64,
    move_failures: u64,
    detection_error: f64,
    classification_error: f64,
    movement_error: f64,
    target_class: String,
    n_vote: usize,
}

const TRIAL_CHUNK: u64 = 512;

fn cmd_clean_sim(args: &CleanSimArgs, threads: Option<usize>) -> Result<()> {
    let ds = args.data.source()?.load()?;
    let target_class = match &args.target_class {
        Some(name) => ds.labels().id_of(name).ok_or_else(|| Error::Usage(format!("unknown target class {name:?}")))?,
        None => ClassId(0),
    };
    let spec = CleaningTrialSpec {
        n_objects: args.objects,
        n_targets: args.targets,
        target_class,
        p_detect_miss: args.p_miss,
        p_move_fail: args.p_move_fail,
        seed: args.seed,
    };
    spec.validate().map_err(|e| Error::Usage(e.to_string()))?;
    if args.trials == 0 {
        return Err(Error::Usage("--trials must be >= 1".into()));
    }

    // every class learned in a single increment; its test split is the pool
    let n_classes = ds.labels().len();
    let plan = IncrementPlan::randomized(ds.labels(), n_classes.max(1), args.shots, args.seed)?;
    let state = run_cbcl_session(&ds, &plan, &GridSpec::default(), None)?;
    let (_, pool) = plan.split(&ds)?;
    let n_vote =
        state.hyper_history.last().ok_or_else(|| Error::Internal("session produced no hyperparameters".into()))?.n_vote;
    let held = HeldOutPool::new(&pool);

    let chunks: Vec<std::ops::Range<u64>> = (0..args.trials.div_ceil(TRIAL_CHUNK))
        .map(|c| c * TRIAL_CHUNK..((c + 1) * TRIAL_CHUNK).min(args.trials))
        .collect();
    let counts = with_threads(threads, || {
        chunks
            .into_par_iter()
            .map(|range| run_trials(&spec, &state.store, &held, n_vote, range))
            .collect::<std::result::Result<Vec<_>, _>>()
    })??
    .into_iter()
    .fold(StageCounts::default(), StageCounts::merge);
    let b = counts.breakdown();

    let mut table = String::new();
    let _ = writeln!(table, "{:<22}{:>10}", "Error", "Percent");
    let _ = writeln!(table, "{:<22}{:>10.2}", "Detection Error", b.detection_error);
    let _ = writeln!(table, "{:<22}{:>10.2}", "Classification Error", b.classification_error);
    let _ = writeln!(table, "{:<22}{:>10.2}", "Movement Error", b.movement_error);

    if let Some(out) = &args.out {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let record = BreakdownRecord {
            trials: args.trials,
            objects: counts.objects,
            detected: counts.detected,
            misclassified: counts.misclassified,
            move_attempts: counts.move_attempts,
            move_failures: counts.move_failures,
            detection_error: b.detection_error,
            classification_error: b.classification_error,
            movement_error: b.movement_error,
            target_class: ds.labels().name(target_class).unwrap_or("?").to_string(),
            n_vote,
        };
        let mut json = serde_json::to_string_pretty(&record).expect("record serializes");
        json.push('\n');
        write_file(&out.join("breakdown.txt"), &table)?;
        write_file(&out.join("breakdown.json"), json)?;
    }
    print!("{table}");
    Ok(())
}

fn cmd_validate(args: &ValidateArgs) -> Result<()> {
    let format = args.format.unwrap_or_else(|| FeatureFormat::infer(&args.file));
    let r = validate_file(&args.file, format)?;
    println!("ok: {} (dim {}, {} examples, {} classes)", args.file.display(), r.dim, r.count, r.classes);
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Run(a) => cmd_run(a, cli.threads),
        Command::Tune(a) => cmd_tune(a, cli.threads),
        Command::Arrange(c) => cmd_arrange(c),
        Command::CleanSim(a) => cmd_clean_sim(a, cli.threads),
        Command::Validate(a) => cmd_validate(a),
    }
}

/// Parses `args` and runs the command, returning the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if cli.threads == Some(0) {
        eprintln!("error: --threads must be >= 1");
        return 1;
    }
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
