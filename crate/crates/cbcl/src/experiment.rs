//! Multi-run incremental experiments and their output files.
//!
//! Run `r` uses plan seed `derive_seed(seed, r)`; the baselines train with
//! `derive_seed(plan_seed, TRAIN_STREAM)`. Runs execute in parallel and are
//! collected in run order, so outputs do not depend on the worker count.
//!
//! Output directory layout:
//!
//! * `config.json`: the effective configuration, accepted by `run --config`.
//! * `metrics.jsonl`: one `{run, increment, n_classes_seen, accuracy}` record
//!   per run and increment.
//! * `summary.txt`: per-increment mean and standard deviation, and the
//!   average incremental accuracy.
//! * `hyperparams.jsonl` and `models/run_NN.cbms`: centroid method only.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cbcl_core::linear::TrainConfig;
use cbcl_core::protocol::{
    aggregate_runs, run_baseline_session, run_cbcl_session, BaselineMethod, GridSpec, IncrementMetrics, IncrementPlan,
    RunSummary,
};
use cbcl_core::rng::derive_seed;
use cbcl_core::{generate_synthetic, Dataset, Hyperparams, ModelStore, SyntheticSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{load_features, FeatureFormat, LoadOptions};
use crate::model_file::encode_model;

const TRAIN_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSettings {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub scale: f64,
    pub stddev: f64,
    pub seed: u64,
}

impl Default for SyntheticSettings {
    fn default() -> Self {
        Self { classes: 22, dim: 16, per_class: 30, scale: 8.0, stddev: 3.2, seed: 0 }
    }
}

impl SyntheticSettings {
    pub fn to_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            n_classes: self.classes,
            dim: self.dim,
            per_class_count: self.per_class,
            class_mean_scale: self.scale,
            within_class_stddev: self.stddev,
            seed: self.seed,
        }
    }
}

/// `classes=22,dim=16,per_class=30,scale=8,stddev=3.2,seed=0`; omitted keys
/// keep their defaults and an empty string means all defaults.
impl FromStr for SyntheticSettings {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut out = Self::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part.split_once('=').ok_or_else(|| format!("expected key=value, got {part:?}"))?;
            let bad = || format!("bad value for {key}: {value:?}");
            match key.trim() {
                "classes" => out.classes = value.parse().map_err(|_| bad())?,
                "dim" => out.dim = value.parse().map_err(|_| bad())?,
                "per_class" => out.per_class = value.parse().map_err(|_| bad())?,
                "scale" => out.scale = value.parse().map_err(|_| bad())?,
                "stddev" => out.stddev = value.parse().map_err(|_| bad())?,
                "seed" => out.seed = value.parse().map_err(|_| bad())?,
                other => return Err(format!("unknown synthetic key {other:?}")),
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    File { path: PathBuf, format: FeatureFormat, l2_normalize: bool },
    Synthetic(SyntheticSettings),
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            Self::File { path, format, l2_normalize } => {
                load_features(path, *format, LoadOptions { l2_normalize: *l2_normalize })
            }
            Self::Synthetic(s) => Ok(generate_synthetic(&s.to_spec())?),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cbcl,
    Ft,
    Flb,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self { learning_rate: d.learning_rate, epochs: d.epochs, batch_size: d.batch_size }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub shots: usize,
    pub classes_per_increment: usize,
    pub runs: usize,
    pub method: Method,
    /// See [`parse_grid`].
    pub grid: String,
    /// `None` means `min(5, shots)`.
    pub folds: Option<usize>,
    pub seed: u64,
    #[serde(default)]
    pub train: TrainSettings,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let usage = |m: &str| Err(Error::Usage(m.into()));
        if self.shots == 0 {
            return usage("--shots must be >= 1");
        }
        if self.classes_per_increment == 0 {
            return usage("--classes-per-inc must be >= 1");
        }
        if self.runs == 0 {
            return usage("--runs must be >= 1");
        }
        if self.folds.is_some_and(|k| k < 2) {
            return usage("--folds must be >= 2");
        }
        parse_grid(&self.grid)?;
        self.train_config(0).validate()?;
        if let DataSource::Synthetic(s) = &self.source {
            s.to_spec().validate()?;
        }
        Ok(())
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| {
            Error::format(
                path,
                crate::error::Location::Line(e.line() as u64),
                crate::error::FormatIssue::Invalid(e.to_string()),
            )
        })
    }
}

/// Grid syntax:
///
/// * `auto`: the default quantile grid.
/// * `q=0.1,0.5,0.9;n=1,3`: thresholds at those quantiles of the new
///   classes' pairwise distances.
/// * `d=0.5,1.0;n=1,3`: fixed thresholds.
pub fn parse_grid(s: &str) -> Result<GridSpec> {
    let s = s.trim();
    if s == "auto" {
        return Ok(GridSpec::default());
    }
    let usage = |m: String| Error::Usage(format!("--grid {s:?}: {m}"));
    let mut d: Option<Vec<f64>> = None;
    let mut q: Option<Vec<f64>> = None;
    let mut n: Option<Vec<usize>> = None;
    for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, values) = part.split_once('=').ok_or_else(|| usage(format!("expected key=values, got {part:?}")))?;
        let floats = || -> Result<Vec<f64>> {
            values.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| usage(format!("bad number {v:?}")))).collect()
        };
        match key.trim() {
            "d" => d = Some(floats()?),
            "q" => q = Some(floats()?),
            "n" => {
                n = Some(
                    values
                        .split(',')
                        .map(|v| v.trim().parse::<usize>().map_err(|_| usage(format!("bad vote count {v:?}"))))
                        .collect::<Result<_>>()?,
                )
            }
            other => return Err(usage(format!("unknown key {other:?}"))),
        }
    }
    let n_votes = n.ok_or_else(|| usage("missing n=...".into()))?;
    if n_votes.is_empty() || n_votes.contains(&0) {
        return Err(usage("vote counts must be >= 1".into()));
    }
    match (d, q) {
        (Some(ds), None) => {
            let mut points = Vec::new();
            for &t in &ds {
                for &v in &n_votes {
                    points.push(Hyperparams::new(t, v).map_err(|e| usage(e.to_string()))?);
                }
            }
            Ok(GridSpec::Fixed(points))
        }
        (None, Some(quantiles)) => {
            if quantiles.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(usage("quantiles must lie in [0, 1]".into()));
            }
            Ok(GridSpec::Quantiles { quantiles, n_votes })
        }
        _ => Err(usage("give exactly one of d=... or q=...".into())),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRecord {
    pub run: usize,
    pub increment: usize,
    pub n_classes_seen: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HyperparamRecord {
    pub run: usize,
    pub increment: usize,
    pub distance_threshold: f64,
    pub n_vote: usize,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub metrics: Vec<IncrementMetrics>,
    /// Centroid method only.
    pub hyperparams: Vec<Hyperparams>,
    pub store: Option<ModelStore>,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub runs: Vec<RunResult>,
    pub summary: RunSummary,
}

pub fn plan_seed(seed: u64, run: usize) -> u64 {
    derive_seed(seed, run as u64)
}

pub fn run_one(cfg: &ExperimentConfig, ds: &Dataset, grid: &GridSpec, run: usize) -> Result<RunResult> {
    let seed = plan_seed(cfg.seed, run);
    let plan = IncrementPlan::randomized(ds.labels(), cfg.classes_per_increment, cfg.shots, seed)?;
    log::debug!("run {run}: plan seed {seed}");
    let baseline = |method| -> Result<RunResult> {
        let metrics = run_baseline_session(ds, &plan, method, &cfg.train_config(derive_seed(seed, TRAIN_STREAM)))?;
        Ok(RunResult { metrics, hyperparams: Vec::new(), store: None })
    };
    match cfg.method {
        Method::Cbcl => {
            let state = run_cbcl_session(ds, &plan, grid, cfg.folds)?;
            Ok(RunResult { metrics: state.metrics, hyperparams: state.hyper_history, store: Some(state.store) })
        }
        Method::Ft => baseline(BaselineMethod::FineTuning),
        Method::Flb => baseline(BaselineMethod::BatchUpperBound),
    }
}

/// Runs `f` on a pool of `threads` workers, or the global pool for `None`.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

pub fn run_experiment(cfg: &ExperimentConfig, ds: &Dataset) -> Result<ExperimentResult> {
    cfg.validate()?;
    let grid = parse_grid(&cfg.grid)?;
    let runs = (0..cfg.runs).into_par_iter().map(|r| run_one(cfg, ds, &grid, r)).collect::<Result<Vec<_>>>()?;
    let metrics: Vec<Vec<IncrementMetrics>> = runs.iter().map(|r| r.metrics.clone()).collect();
    let summary = aggregate_runs(&metrics)?;
    Ok(ExperimentResult { runs, summary })
}

pub fn metrics_jsonl(result: &ExperimentResult) -> String {
    let mut out = String::new();
    for (run, r) in result.runs.iter().enumerate() {
        for m in &r.metrics {
            let rec =
                MetricRecord { run, increment: m.increment, n_classes_seen: m.n_classes_seen, accuracy: m.accuracy };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
    }
    out
}

pub fn hyperparams_jsonl(result: &ExperimentResult) -> String {
    let mut out = String::new();
    for (run, r) in result.runs.iter().enumerate() {
        for (i, h) in r.hyperparams.iter().enumerate() {
            let rec =
                HyperparamRecord { run, increment: i + 1, distance_threshold: h.distance_threshold, n_vote: h.n_vote };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
    }
    out
}

pub fn summary_table(cfg: &ExperimentConfig, result: &ExperimentResult) -> String {
    let s = &result.summary;
    let first = &result.runs[0].metrics;
    let mut out = String::new();
    let method = match cfg.method {
        Method::Cbcl => "cbcl",
        Method::Ft => "ft",
        Method::Flb => "flb",
    };
    let _ = writeln!(
        out,
        "method {method}  shots {}  classes/increment {}  runs {}",
        cfg.shots, cfg.classes_per_increment, cfg.runs
    );
    let _ = writeln!(out, "{:>9}  {:>7}  {:>8}  {:>8}", "increment", "classes", "mean", "std");
    for (i, (mean, std)) in s.per_increment_mean.iter().zip(&s.per_increment_std).enumerate() {
        let _ = writeln!(out, "{:>9}  {:>7}  {:>8.4}  {:>8.4}", i + 1, first[i].n_classes_seen, mean, std);
    }
    let _ = writeln!(out, "average incremental accuracy {:.4}", s.average_incremental_accuracy);
    out
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_outputs(cfg: &ExperimentConfig, result: &ExperimentResult, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write(&out.join("config.json"), cfg.to_json())?;
    write(&out.join("metrics.jsonl"), metrics_jsonl(result))?;
    write(&out.join("summary.txt"), summary_table(cfg, result))?;
    if cfg.method == Method::Cbcl {
        write(&out.join("hyperparams.jsonl"), hyperparams_jsonl(result))?;
        let models = out.join("models");
        fs::create_dir_all(&models).map_err(|e| Error::io(&models, e))?;
        for (run, r) in result.runs.iter().enumerate() {
            if let Some(store) = &r.store {
                write(&models.join(format!("run_{run:02}.cbms")), encode_model(store))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_syntax() {
        assert_eq!(parse_grid("auto").unwrap(), GridSpec::default());
        assert_eq!(
            parse_grid("d=0.5,2;n=1").unwrap(),
            GridSpec::Fixed(vec![Hyperparams::new(0.5, 1).unwrap(), Hyperparams::new(2.0, 1).unwrap()])
        );
        assert_eq!(
            parse_grid(" q=0.5 ; n=1,3 ").unwrap(),
            GridSpec::Quantiles { quantiles: vec![0.5], n_votes: vec![1, 3] }
        );
        for bad in ["", "d=1", "n=1", "d=1;q=0.5;n=1", "q=2;n=1", "d=1;n=0", "d=-1;n=1", "x=1;n=1", "d=a;n=1"] {
            assert!(matches!(parse_grid(bad), Err(Error::Usage(_))), "{bad}");
        }
    }

    #[test]
    fn synthetic_settings_syntax() {
        assert_eq!("".parse::<SyntheticSettings>().unwrap(), SyntheticSettings::default());
        let s: SyntheticSettings = "classes=4, dim=3,seed=9".parse().unwrap();
        assert_eq!((s.classes, s.dim, s.seed, s.per_class), (4, 3, 9, 30));
        assert!("classes".parse::<SyntheticSettings>().is_err());
        assert!("colour=red".parse::<SyntheticSettings>().is_err());
        assert!("dim=-1".parse::<SyntheticSettings>().is_err());
    }

    fn small(method: Method) -> ExperimentConfig {
        ExperimentConfig {
            source: DataSource::Synthetic(SyntheticSettings {
                classes: 6,
                dim: 4,
                per_class: 10,
                ..Default::default()
            }),
            shots: 3,
            classes_per_increment: 2,
            runs: 3,
            method,
            grid: "auto".into(),
            folds: None,
            seed: 11,
            train: TrainSettings { epochs: 5, ..Default::default() },
        }
    }

    #[test]
    fn config_json_round_trip() {
        for m in [Method::Cbcl, Method::Ft, Method::Flb] {
            let cfg = small(m);
            assert_eq!(serde_json::from_str::<ExperimentConfig>(&cfg.to_json()).unwrap(), cfg);
        }
    }

    #[test]
    fn result_independent_of_threads() {
        let cfg = small(Method::Cbcl);
        let ds = cfg.source.load().unwrap();
        let one = with_threads(Some(1), || run_experiment(&cfg, &ds)).unwrap().unwrap();
        let four = with_threads(Some(4), || run_experiment(&cfg, &ds)).unwrap().unwrap();
        assert_eq!(metrics_jsonl(&one), metrics_jsonl(&four));
        assert_eq!(hyperparams_jsonl(&one), hyperparams_jsonl(&four));
        assert_eq!(metrics_jsonl(&one).lines().count(), 9);
        assert!(summary_table(&cfg, &one).contains("average incremental accuracy"));
    }

    #[test]
    fn validation() {
        let mut cfg = small(Method::Ft);
        cfg.runs = 0;
        assert!(matches!(cfg.validate(), Err(Error::Usage(_))));
        let mut cfg = small(Method::Ft);
        cfg.folds = Some(1);
        assert!(cfg.validate().is_err());
        let mut cfg = small(Method::Ft);
        cfg.grid = "bogus".into();
        assert!(cfg.validate().is_err());
    }
}
