//! End-to-end experiments driven by a JSON config.
//!
//! Stages run in order: task, crowd, fit, train, analysis. Each stage writes
//! its outputs under `<output_dir>/<stage>/` followed by a `.complete` marker
//! holding the config hash. Re-running with the same config skips every
//! stage whose marker matches (resuming after an interrupted run); `force`
//! reruns everything. All randomness derives from the root `seed`.
//!
//! Wall-clock timings go to `train/timings.json`; every other output is a
//! pure function of the config and is byte-identical across runs.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ability::AbilityBounds;
use crate::analysis::{difficulty_histogram, spearman, summarize_runs};
use crate::crowd::{generate_crowd, CrowdConfig, CrowdMember};
use crate::curriculum::{heuristic_difficulty_length, CurriculumStrategy, DifficultySource};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::formats;
use crate::learner::{make_synthetic_task, LearnerSpec, SynthTaskConfig};
use crate::seed::derive_seed;
use crate::trainer::{resolve_difficulties, train, TrainConfig, TrainResult};
use crate::vi::{fit_1pl, FitConfig, IrtPosterior};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", try_from = "RawTaskSpec")]
pub enum TaskSpec {
    Synthetic {
        #[serde(default)]
        config: SynthTaskConfig,
    },
    /// Dataset CSVs; relative paths resolve against the config file's directory.
    Files {
        train: PathBuf,
        test: PathBuf,
        #[serde(default)]
        dev: Option<PathBuf>,
        #[serde(default)]
        n_classes: Option<usize>,
    },
}

#[derive(Deserialize)]
#[serde(rename_all = "lowercase")]
enum TaskKind {
    Synthetic,
    Files,
}

// Internally tagged enums buffer their content, which hides the field path
// of nested errors; a flat struct keeps paths like `task.config.n_train`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTaskSpec {
    kind: TaskKind,
    config: Option<SynthTaskConfig>,
    train: Option<PathBuf>,
    test: Option<PathBuf>,
    dev: Option<PathBuf>,
    n_classes: Option<usize>,
}

impl TryFrom<RawTaskSpec> for TaskSpec {
    type Error = String;

    fn try_from(raw: RawTaskSpec) -> std::result::Result<Self, String> {
        match raw.kind {
            TaskKind::Synthetic => {
                if raw.train.is_some() || raw.test.is_some() || raw.dev.is_some() || raw.n_classes.is_some() {
                    return Err("synthetic tasks take only `config`".into());
                }
                Ok(TaskSpec::Synthetic {
                    config: raw.config.unwrap_or_default(),
                })
            }
            TaskKind::Files => {
                if raw.config.is_some() {
                    return Err("file tasks do not take `config`".into());
                }
                Ok(TaskSpec::Files {
                    train: raw.train.ok_or("missing field `train`")?,
                    test: raw.test.ok_or("missing field `test`")?,
                    dev: raw.dev,
                    n_classes: raw.n_classes,
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub num_epochs: usize,
    pub lr: f64,
    pub early_stop_patience: usize,
    pub dev_fraction: f64,
    pub learner: LearnerSpec,
    pub ability_bounds: AbilityBounds,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            num_epochs: 20,
            lr: 0.1,
            early_stop_patience: 10,
            dev_fraction: 0.1,
            learner: LearnerSpec::Logistic,
            ability_bounds: AbilityBounds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub seed: u64,
    /// Excluded from the config hash, so moving outputs does not change them.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub task: TaskSpec,
    #[serde(default)]
    pub crowd: CrowdConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub training: TrainingSection,
    pub strategies: Vec<CurriculumStrategy>,
    pub seeds: Vec<u64>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn config_error(path: impl Into<String>, e: impl std::fmt::Display) -> Error {
    Error::Config {
        path: path.into(),
        message: e.to_string(),
    }
}

impl ExperimentConfig {
    /// Parses and validates a config; errors carry the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_error(if path == "." { String::new() } else { path }, e.into_inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| config_error("", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.output_dir);
        if let TaskSpec::Files { train, test, dev, .. } = &mut cfg.task {
            resolve(train);
            resolve(test);
            if let Some(d) = dev {
                resolve(d);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(config_error(
                "schema",
                format!("unsupported schema version {} (expected {SCHEMA_VERSION})", self.schema),
            ));
        }
        if let TaskSpec::Synthetic { config } = &self.task {
            config.validate().map_err(|e| config_error("task.config", e))?;
        }
        self.crowd.validate().map_err(|e| config_error("crowd", e))?;
        self.fit.validate().map_err(|e| config_error("fit", e))?;
        if self.strategies.is_empty() {
            return Err(config_error("strategies", "at least one strategy is required"));
        }
        if self.seeds.is_empty() {
            return Err(config_error("seeds", "at least one seed is required"));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(config_error("seeds", format!("seed {dup} is listed twice")));
        }
        let mut labels = std::collections::HashSet::new();
        for (k, s) in self.strategies.iter().enumerate() {
            self.train_config(s, 0)
                .validate()
                .map_err(|e| config_error(format!("strategies[{k}]"), e))?;
            if !labels.insert(s.label()) {
                return Err(config_error(format!("strategies[{k}]"), format!("duplicate strategy `{}`", s.label())));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, with `output_dir` blanked.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&canon).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn train_config(&self, strategy: &CurriculumStrategy, run_seed: u64) -> TrainConfig {
        TrainConfig {
            num_epochs: self.training.num_epochs,
            lr: self.training.lr,
            early_stop_patience: self.training.early_stop_patience,
            dev_fraction: self.training.dev_fraction,
            seed: derive_seed(self.seed, "train", run_seed),
            strategy: strategy.clone(),
            ability_bounds: self.training.ability_bounds,
        }
    }
}

/// Splits of a task. `dev` is labelled by the crowd but never trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub train: Dataset,
    pub dev: Option<Dataset>,
    pub test: Dataset,
}

impl TaskData {
    /// Crowd-labelled examples (train, dev, test in order) and their item ids.
    pub fn all_examples(&self) -> Result<(Dataset, Vec<String>)> {
        let mut parts = vec![("train", &self.train)];
        if let Some(d) = &self.dev {
            parts.push(("dev", d));
        }
        parts.push(("test", &self.test));
        let ids = parts
            .iter()
            .flat_map(|(name, d)| (0..d.len()).map(move |k| format!("{name}-{k}")))
            .collect();
        let sets: Vec<&Dataset> = parts.iter().map(|p| p.1).collect();
        Ok((Dataset::concat(&sets)?, ids))
    }
}

pub fn train_item_ids(n: usize) -> Vec<String> {
    (0..n).map(|k| format!("train-{k}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrowdManifest {
    pub config_hash: String,
    pub members: Vec<CrowdMember>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub config_hash: String,
    pub elbo: f64,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
    pub posterior: IrtPosterior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    #[serde(flatten)]
    pub result: TrainResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub runs: usize,
    pub test_accuracy_mean: f64,
    pub test_accuracy_ci95: Option<f64>,
    pub convergence_epoch_mean: f64,
    pub convergence_epoch_ci95: Option<f64>,
}

const STAGES: [&str; 5] = ["task", "crowd", "fit", "train", "analysis"];

/// Outcome of `run_experiment`.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub output_dir: PathBuf,
    pub config_hash: String,
    /// Stages that actually ran (the rest were resumed).
    pub executed: Vec<String>,
    pub summaries: Vec<StrategySummary>,
}

struct Layout {
    root: PathBuf,
}

impl Layout {
    fn dir(&self, stage: &str) -> PathBuf {
        self.root.join(stage)
    }
    fn file(&self, stage: &str, name: &str) -> PathBuf {
        self.root.join(stage).join(name)
    }
    fn marker(&self, stage: &str) -> PathBuf {
        self.file(stage, ".complete")
    }
    fn is_complete(&self, stage: &str, hash: &str) -> bool {
        fs::read_to_string(self.marker(stage)).is_ok_and(|m| m.trim() == hash)
    }
    fn mark_complete(&self, stage: &str, hash: &str) -> Result<()> {
        formats::write_text(&self.marker(stage), &format!("{hash}\n"))
    }
    fn clear(&self, stage: &str) -> Result<()> {
        let dir = self.dir(stage);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(())
    }
}

fn stage_error(stage: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        e @ Error::Config { .. } => e,
        e => Error::Stage {
            stage: stage.to_string(),
            message: e.to_string(),
        },
    }
}

/// Runs every stage, resuming completed ones unless `force` is set.
pub fn run_experiment(cfg: &ExperimentConfig, force: bool) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let hash = cfg.hash();
    let layout = Layout {
        root: cfg.output_dir.clone(),
    };
    let mut executed = Vec::new();
    // once a stage reruns, everything downstream reruns too
    let mut dirty = force;
    for stage in STAGES {
        if dirty || !layout.is_complete(stage, &hash) {
            dirty = true;
            layout.clear(stage).map_err(stage_error(stage))?;
            log::info!("running stage `{stage}`");
            run_stage(stage, cfg, &hash, &layout).map_err(stage_error(stage))?;
            layout.mark_complete(stage, &hash).map_err(stage_error(stage))?;
            executed.push(stage.to_string());
        } else {
            log::info!("stage `{stage}` already complete; skipping");
        }
    }
    let summaries: Vec<StrategySummary> =
        serde_json::from_slice(&fs::read(layout.file("analysis", "runs.json")).map_err(|e| Error::io(layout.file("analysis", "runs.json"), e))?)?;
    Ok(ExperimentOutcome {
        output_dir: layout.root,
        config_hash: hash,
        executed,
        summaries,
    })
}

fn run_stage(stage: &str, cfg: &ExperimentConfig, hash: &str, layout: &Layout) -> Result<()> {
    match stage {
        "task" => {
            let task = build_task(cfg)?;
            formats::write_dataset(&layout.file("task", "train.csv"), &task.train, Some(hash))?;
            if let Some(dev) = &task.dev {
                formats::write_dataset(&layout.file("task", "dev.csv"), dev, Some(hash))?;
            }
            formats::write_dataset(&layout.file("task", "test.csv"), &task.test, Some(hash))
        }
        "crowd" => {
            let task = load_task(layout)?;
            let (all, ids) = task.all_examples()?;
            let crowd_cfg = CrowdConfig {
                seed: derive_seed(cfg.seed, "crowd", 0),
                ..cfg.crowd.clone()
            };
            let crowd = generate_crowd(&task.train, &all, ids, &crowd_cfg)?;
            formats::write_response_csv(&layout.file("crowd", "responses.csv"), &crowd.matrix, Some(hash))?;
            formats::write_json(
                &layout.file("crowd", "manifest.json"),
                &CrowdManifest {
                    config_hash: hash.to_string(),
                    members: crowd.members,
                    warnings: crowd.warnings,
                },
            )
        }
        "fit" => {
            let z = formats::read_response_matrix(&layout.file("crowd", "responses.csv"))?;
            let fit_cfg = FitConfig {
                seed: derive_seed(cfg.seed, "fit", 0),
                ..cfg.fit.clone()
            };
            let post = fit_1pl(&z, &fit_cfg)?;
            write_fit_outputs(&layout.dir("fit"), &post, Some(hash))
        }
        "train" => run_train_stage(cfg, hash, layout, &cfg.strategies, &cfg.seeds),
        "analysis" => run_analysis_stage(cfg, hash, layout),
        other => unreachable!("unknown stage {other}"),
    }
}

/// Difficulty CSV, ability CSV and fit report for a fitted posterior.
pub fn write_fit_outputs(dir: &Path, post: &IrtPosterior, hash: Option<&str>) -> Result<()> {
    formats::write_difficulties(&dir.join("difficulties.csv"), &post.item_ids, &post.difficulty_mean, hash)?;
    formats::write_abilities(&dir.join("abilities.csv"), &post.model_ids, &post.ability_mean, hash)?;
    formats::write_json(
        &dir.join("fit_report.json"),
        &FitReport {
            config_hash: hash.unwrap_or_default().to_string(),
            elbo: post.elbo,
            iterations: post.iterations,
            converged: post.converged,
            warnings: post.warnings.clone(),
            posterior: post.clone(),
        },
    )
}

fn build_task(cfg: &ExperimentConfig) -> Result<TaskData> {
    match &cfg.task {
        TaskSpec::Synthetic { config } => {
            let task = make_synthetic_task(&SynthTaskConfig {
                seed: derive_seed(cfg.seed, "task", 0),
                ..config.clone()
            })?;
            Ok(TaskData {
                train: task.train,
                dev: Some(task.dev),
                test: task.test,
            })
        }
        TaskSpec::Files {
            train,
            test,
            dev,
            n_classes,
        } => {
            let train_set = formats::read_dataset(train, *n_classes)?;
            let k = Some(train_set.n_classes());
            Ok(TaskData {
                dev: dev.as_deref().map(|d| formats::read_dataset(d, k)).transpose()?,
                test: formats::read_dataset(test, k)?,
                train: train_set,
            })
        }
    }
}

fn load_task(layout: &Layout) -> Result<TaskData> {
    let train = formats::read_dataset(&layout.file("task", "train.csv"), None)?;
    let k = Some(train.n_classes());
    let dev_path = layout.file("task", "dev.csv");
    Ok(TaskData {
        dev: dev_path.exists().then(|| formats::read_dataset(&dev_path, k)).transpose()?,
        test: formats::read_dataset(&layout.file("task", "test.csv"), k)?,
        train,
    })
}

/// Learned difficulties of the training items, looked up by `train-<k>` id.
fn learned_train_difficulties(layout: &Layout, n_train: usize) -> Result<Vec<f64>> {
    let (ids, values) = formats::read_difficulties(&layout.file("fit", "difficulties.csv"))?;
    let by_id: HashMap<&str, f64> = ids.iter().map(String::as_str).zip(values.iter().copied()).collect();
    train_item_ids(n_train)
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::format("difficulty CSV", format!("no difficulty for `{id}`")))
        })
        .collect()
}

fn run_file_stem(strategy: &CurriculumStrategy, seed: u64) -> String {
    let label: String = strategy
        .label()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    format!("{}-seed{seed}", label.trim_end_matches('_'))
}

#[derive(Serialize)]
struct Timing {
    strategy: String,
    seed: u64,
    seconds: f64,
}

/// One training run per (strategy, seed), in parallel; writes results, traces and timings.
fn run_train_stage(
    cfg: &ExperimentConfig,
    hash: &str,
    layout: &Layout,
    strategies: &[CurriculumStrategy],
    seeds: &[u64],
) -> Result<()> {
    let task = load_task(layout)?;
    let needs_learned = strategies
        .iter()
        .any(|s| s.kind != crate::curriculum::StrategyKind::FullySupervised && s.difficulty_source == DifficultySource::Learned);
    let learned = if needs_learned {
        Some(learned_train_difficulties(layout, task.train.len())?)
    } else {
        None
    };

    let jobs: Vec<(&CurriculumStrategy, u64)> =
        strategies.iter().flat_map(|s| seeds.iter().map(move |&seed| (s, seed))).collect();
    let results: Vec<Result<TrainResult>> = jobs
        .par_iter()
        .map(|&(strategy, seed)| {
            let tc = cfg.train_config(strategy, seed);
            let mut learner = cfg.training.learner.build(
                task.train.n_features(),
                task.train.n_classes(),
                derive_seed(cfg.seed, "train-learner", seed),
            )?;
            let difficulties = match strategy.kind {
                crate::curriculum::StrategyKind::FullySupervised => None,
                _ => Some(resolve_difficulties(
                    strategy.difficulty_source,
                    &task.train,
                    learned.as_deref(),
                    tc.seed,
                )?),
            };
            let mut result = train(learner.as_mut(), &task.train, &task.test, difficulties.as_deref(), &tc)?;
            result.seed = seed;
            Ok(result)
        })
        .collect();

    let mut timings = Vec::new();
    for ((strategy, seed), result) in jobs.iter().zip(results) {
        let result = result?;
        let stem = run_file_stem(strategy, *seed);
        formats::write_json(
            &layout.file("train", &format!("{stem}.json")),
            &RunRecord {
                config_hash: hash.to_string(),
                result: result.clone(),
            },
        )?;
        formats::write_trace(&layout.file("train", &format!("{stem}.trace.csv")), &result, Some(hash))?;
        timings.push(Timing {
            strategy: result.strategy.clone(),
            seed: *seed,
            seconds: result.wall_time.as_secs_f64(),
        });
    }
    formats::write_json(&layout.file("train", "timings.json"), &timings)
}

/// Reads every run JSON in `dir` (skipping `timings.json`).
pub fn load_runs(dir: &Path) -> Result<Vec<TrainResult>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.file_name().is_some_and(|n| n != "timings.json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
            let rec: RunRecord = serde_json::from_slice(&bytes)
                .map_err(|e| Error::format("run result JSON", format!("{}: {e}", p.display())))?;
            Ok(rec.result)
        })
        .collect()
}

/// Per-strategy mean and 95% CI of test accuracy and convergence epoch, in first-seen order.
pub fn summarize_strategies(runs: &[TrainResult]) -> Result<Vec<StrategySummary>> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<&TrainResult>> = HashMap::new();
    for r in runs {
        if !groups.contains_key(&r.strategy) {
            order.push(r.strategy.clone());
        }
        groups.entry(r.strategy.clone()).or_default().push(r);
    }
    order
        .into_iter()
        .map(|name| {
            let rs = &groups[&name];
            let acc: Vec<f64> = rs.iter().map(|r| r.test_accuracy).collect();
            let conv: Vec<f64> = rs.iter().map(|r| r.convergence_epoch as f64).collect();
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let (acc_s, conv_s) = if rs.len() >= 2 {
                (Some(summarize_runs(&acc)?), Some(summarize_runs(&conv)?))
            } else {
                (None, None)
            };
            Ok(StrategySummary {
                strategy: name,
                runs: rs.len(),
                test_accuracy_mean: acc_s.map_or(mean(&acc), |s| s.mean),
                test_accuracy_ci95: acc_s.map(|s| s.ci95),
                convergence_epoch_mean: conv_s.map_or(mean(&conv), |s| s.mean),
                convergence_epoch_ci95: conv_s.map(|s| s.ci95),
            })
        })
        .collect()
}

fn mean_ci(mean: f64, ci: Option<f64>, digits: usize) -> String {
    match ci {
        Some(c) => format!("{mean:.digits$} [±{c:.digits$}]"),
        None => format!("{mean:.digits$} [±n/a]"),
    }
}

/// CSV table: one row per strategy, cells formatted as `mean [±CI]`.
pub fn runs_table(summaries: &[StrategySummary], hash: Option<&str>) -> Result<String> {
    let mut out = String::new();
    if let Some(h) = hash {
        out.push_str(&format!("# config_hash: {h}\n"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["strategy", "runs", "test_accuracy", "convergence_epoch"])?;
    for s in summaries {
        w.write_record([
            s.strategy.clone(),
            s.runs.to_string(),
            mean_ci(100.0 * s.test_accuracy_mean, s.test_accuracy_ci95.map(|c| 100.0 * c), 2),
            mean_ci(s.convergence_epoch_mean, s.convergence_epoch_ci95, 2),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format("runs table", e.to_string()))?;
    out.push_str(std::str::from_utf8(&bytes).expect("csv output is utf-8"));
    Ok(out)
}

/// Equal-width histogram as CSV `bin_lo,bin_hi,percent`.
pub fn histogram_csv(values: &[f64], bins: usize, hash: Option<&str>) -> Result<String> {
    let h = difficulty_histogram(values, bins)?;
    let mut out = String::new();
    if let Some(hash) = hash {
        out.push_str(&format!("# config_hash: {hash}\n"));
    }
    out.push_str("bin_lo,bin_hi,percent\n");
    for (lo, hi, p) in h.bins() {
        out.push_str(&format!("{lo},{hi},{p}\n"));
    }
    Ok(out)
}

#[derive(Serialize)]
struct Correlations {
    config_hash: String,
    /// Spearman between learned difficulty and planted margin (synthetic tasks).
    #[serde(skip_serializing_if = "Option::is_none")]
    learned_vs_planted_margin: Option<f64>,
    /// Spearman between learned difficulty and first-sentence length.
    #[serde(skip_serializing_if = "Option::is_none")]
    learned_vs_length: Option<f64>,
}

fn run_analysis_stage(_cfg: &ExperimentConfig, hash: &str, layout: &Layout) -> Result<()> {
    let runs = load_runs(&layout.dir("train"))?;
    let summaries = summarize_strategies(&runs)?;
    formats::write_text(&layout.file("analysis", "runs.csv"), &runs_table(&summaries, Some(hash))?)?;
    formats::write_json(&layout.file("analysis", "runs.json"), &summaries)?;

    let task = load_task(layout)?;
    let learned = learned_train_difficulties(layout, task.train.len())?;
    formats::write_text(
        &layout.file("analysis", "histogram.csv"),
        &histogram_csv(&learned, 30, Some(hash))?,
    )?;
    let undefined_as_none = |r: Result<f64>| match r {
        Ok(rho) => Ok(Some(rho)),
        Err(Error::UndefinedCorrelation(msg)) => {
            log::warn!("correlation undefined: {msg}");
            Ok(None)
        }
        Err(e) => Err(e),
    };
    let correlations = Correlations {
        config_hash: hash.to_string(),
        learned_vs_planted_margin: match task.train.planted_margin() {
            Some(m) => undefined_as_none(spearman(&learned, m))?,
            None => None,
        },
        learned_vs_length: match task.train.texts() {
            Some(t) => undefined_as_none(spearman(&learned, &heuristic_difficulty_length(t)))?,
            None => None,
        },
    };
    formats::write_json(&layout.file("analysis", "correlation.json"), &correlations)
}

/// Trains one strategy for `seeds` on an experiment whose task/crowd/fit
/// stages are complete (running them first if needed). Outputs go to `train/`.
pub fn run_training_only(cfg: &ExperimentConfig, strategy: &CurriculumStrategy, seeds: &[u64]) -> Result<PathBuf> {
    cfg.validate()?;
    strategy.validate().map_err(|e| config_error("strategy", e))?;
    let hash = cfg.hash();
    let layout = Layout {
        root: cfg.output_dir.clone(),
    };
    let mut dirty = false;
    for stage in ["task", "crowd", "fit"] {
        if dirty || !layout.is_complete(stage, &hash) {
            dirty = true;
            layout.clear(stage).map_err(stage_error(stage))?;
            run_stage(stage, cfg, &hash, &layout).map_err(stage_error(stage))?;
            layout.mark_complete(stage, &hash).map_err(stage_error(stage))?;
        }
    }
    run_train_stage(cfg, &hash, &layout, std::slice::from_ref(strategy), seeds).map_err(stage_error("train"))?;
    Ok(layout.dir("train"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema": 1,
        "seed": 3,
        "task": {"kind": "synthetic", "config": {"n_train": 120, "n_dev": 20, "n_test": 60, "margin_decay": 0.4}},
        "crowd": {"ensemble_size": 8, "epochs": 5},
        "fit": {"max_iterations": 300},
        "training": {"num_epochs": 4},
        "strategies": [{"strategy": "ddaclae"}],
        "seeds": [0]
    }"#;

    #[test]
    fn parses_minimal_config() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.crowd.ensemble_size, 8);
        assert_eq!(cfg.training.dev_fraction, 0.1);
        assert_eq!(cfg.output_dir, PathBuf::from("results"));
    }

    #[test]
    fn config_errors_carry_field_paths() {
        let bad = MINIMAL.replace("\"epochs\": 5", "\"epochs\": \"five\"");
        match ExperimentConfig::from_json(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "crowd.epochs"),
            other => panic!("{other:?}"),
        }
        let bad = MINIMAL.replace("\"n_train\": 120", "\"n_train\": -1");
        match ExperimentConfig::from_json(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "task.config.n_train"),
            other => panic!("{other:?}"),
        }
        let bad = MINIMAL.replace("\"num_epochs\": 4", "\"num_epochs\": 4, \"learner\": {\"kind\": \"mlp\", \"hidden\": \"x\"}");
        match ExperimentConfig::from_json(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "training.learner.hidden"),
            other => panic!("{other:?}"),
        }
        let bad = MINIMAL.replace("\"margin_decay\": 0.4}", "\"margin_decay\": 0.4}, \"train\": \"a.csv\"");
        assert!(matches!(ExperimentConfig::from_json(&bad), Err(Error::Config { .. })));
        let bad = MINIMAL.replace("\"seeds\": [0]", "\"seedz\": [0]");
        assert!(matches!(ExperimentConfig::from_json(&bad), Err(Error::Config { .. })));
        let bad = MINIMAL.replace("\"seeds\": [0]", "\"seeds\": []");
        match ExperimentConfig::from_json(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "seeds"),
            other => panic!("{other:?}"),
        }
        let bad = MINIMAL.replace("\"schema\": 1", "\"schema\": 2");
        assert!(matches!(ExperimentConfig::from_json(&bad), Err(Error::Config { .. })));
        let bad = MINIMAL.replace("\"seed\": 3,", "\"seed\": 3, \"crowd_seed\": 1,");
        assert!(matches!(ExperimentConfig::from_json(&bad), Err(Error::Config { .. })));
    }

    #[test]
    fn task_specs_round_trip() {
        let files = TaskSpec::Files {
            train: "a.csv".into(),
            test: "b.csv".into(),
            dev: None,
            n_classes: Some(3),
        };
        let text = serde_json::to_string(&files).unwrap();
        assert!(text.contains("\"kind\":\"files\""));
        assert_eq!(serde_json::from_str::<TaskSpec>(&text).unwrap(), files);
        let synth: TaskSpec = serde_json::from_str(r#"{"kind": "synthetic"}"#).unwrap();
        assert_eq!(synth, TaskSpec::Synthetic { config: SynthTaskConfig::default() });
        assert!(serde_json::from_str::<TaskSpec>(r#"{"kind": "files", "train": "a.csv"}"#).is_err());
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = ExperimentConfig::from_json(MINIMAL).unwrap();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("/elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 4;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn table_formatting() {
        let s = StrategySummary {
            strategy: "full".into(),
            runs: 2,
            test_accuracy_mean: 0.5,
            test_accuracy_ci95: Some(0.01),
            convergence_epoch_mean: 3.0,
            convergence_epoch_ci95: None,
        };
        let t = runs_table(&[s], None).unwrap();
        assert_eq!(t, "strategy,runs,test_accuracy,convergence_epoch\nfull,2,50.00 [±1.00],3.00 [±n/a]\n");
    }

    #[test]
    fn minimal_run_produces_artifacts_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        cfg.output_dir = dir.path().join("out");
        let first = run_experiment(&cfg, false).unwrap();
        assert_eq!(first.executed.len(), 5);
        for f in [
            "fit/difficulties.csv",
            "fit/abilities.csv",
            "fit/fit_report.json",
            "train/ddaclae-seed0.json",
            "train/ddaclae-seed0.trace.csv",
            "analysis/runs.csv",
            "analysis/histogram.csv",
            "analysis/correlation.json",
        ] {
            assert!(cfg.output_dir.join(f).exists(), "{f}");
        }
        let hash = formats::read_csv_hash(&cfg.output_dir.join("fit/difficulties.csv")).unwrap();
        assert_eq!(hash.as_deref(), Some(first.config_hash.as_str()));

        let second = run_experiment(&cfg, false).unwrap();
        assert!(second.executed.is_empty());
        fs::remove_file(cfg.output_dir.join("train/.complete")).unwrap();
        let third = run_experiment(&cfg, false).unwrap();
        assert_eq!(third.executed, ["train", "analysis"]);
        let forced = run_experiment(&cfg, true).unwrap();
        assert_eq!(forced.executed.len(), 5);
    }
}
