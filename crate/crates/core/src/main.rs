use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use irt_curriculum::ability::{estimate_ability, AbilityBounds};
use irt_curriculum::analysis::spearman;
use irt_curriculum::crowd::{generate_crowd, CrowdConfig};
use irt_curriculum::curriculum::{CurriculumStrategy, DifficultySource, StrategyKind};
use irt_curriculum::dataset::Dataset;
use irt_curriculum::experiment::{
    histogram_csv, load_runs, run_experiment, run_training_only, runs_table, summarize_strategies,
    write_fit_outputs, CrowdManifest, ExperimentConfig,
};
use irt_curriculum::formats;
use irt_curriculum::learner::{make_synthetic_task, SynthTaskConfig};
use irt_curriculum::vi::{fit_1pl, FitConfig};
use irt_curriculum::{Error, Result};

/// Learned example difficulty and model ability (1PL IRT) for curriculum learning.
#[derive(Parser)]
#[command(name = "irt-curriculum", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a 1PL model to a response matrix (dense CSV or JSONL).
    Fit(FitArgs),
    /// Estimate one model's ability from graded responses and known difficulties.
    Score(ScoreArgs),
    /// Artificial-crowd generation.
    Crowd {
        #[command(subcommand)]
        command: CrowdCommand,
    },
    /// Train one strategy over several seeds using an experiment config.
    Train(TrainArgs),
    /// Post-hoc statistics.
    Analyze {
        #[command(subcommand)]
        command: AnalyzeCommand,
    },
    /// Run a whole experiment: task, crowd, fit, train, analysis.
    Run(RunArgs),
    /// Write a synthetic task as train/dev/test dataset CSVs.
    Synth(SynthArgs),
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    responses: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// JSON file with fitting options (max_iterations, learning_rate, ...).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ScoreArgs {
    /// CSV with header `item_id,difficulty`.
    #[arg(long)]
    difficulties: PathBuf,
    /// CSV with header `item_id,correct`.
    #[arg(long)]
    responses: PathBuf,
    #[arg(long, default_value_t = -4.0, allow_negative_numbers = true)]
    min: f64,
    #[arg(long, default_value_t = 4.0, allow_negative_numbers = true)]
    max: f64,
}

#[derive(Subcommand)]
enum CrowdCommand {
    /// Train an ensemble and grade it on every example.
    Generate(CrowdArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MatrixFormat {
    Csv,
    Jsonl,
}

#[derive(Args)]
struct CrowdArgs {
    /// Dataset CSV the members train on.
    #[arg(long)]
    train: PathBuf,
    /// Dataset CSVs to grade, in order; item ids are `<file stem>-<row>`.
    /// Defaults to the training file.
    #[arg(long = "examples", num_args = 1..)]
    examples: Vec<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    /// JSON file with crowd options (ensemble_size, subsample_fractions, ...).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "csv")]
    format: MatrixFormat,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// full, cb-linear, cb-root or ddaclae.
    #[arg(long)]
    strategy: String,
    /// learned, length or random.
    #[arg(long, default_value = "learned")]
    difficulty: String,
    /// Number of seeds; runs use seeds 0..N.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Spearman correlation between two difficulty files, joined on item id.
    Correlation {
        #[arg(long)]
        difficulties: PathBuf,
        #[arg(long)]
        heuristic: PathBuf,
    },
    /// Histogram of a difficulty file as CSV (bin_lo, bin_hi, percent).
    Dist {
        #[arg(long)]
        difficulties: PathBuf,
        #[arg(long, default_value_t = 30)]
        bins: usize,
    },
    /// Per-strategy mean [±95% CI] table over the run JSONs in a directory.
    Runs {
        #[arg(long)]
        results: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Rerun every stage even when outputs are complete.
    #[arg(long)]
    force: bool,
    /// Overrides the config's output_dir.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// JSON file with task options (n_train, margin_decay, ...).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Parses an optional JSON options file, reporting the failing field path.
fn read_options<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
        path: String::new(),
        message: format!("{}: {e}", path.display()),
    })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
        path: e.path().to_string(),
        message: e.into_inner().to_string(),
    })
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json value serializes"));
}

fn fit(args: FitArgs) -> Result<()> {
    let mut cfg: FitConfig = read_options(args.config.as_deref())?;
    cfg.seed = args.seed;
    let z = formats::read_response_matrix(&args.responses)?;
    let post = fit_1pl(&z, &cfg)?;
    write_fit_outputs(&args.output, &post, None)?;
    print_json(&json!({
        "elbo": post.elbo,
        "iterations": post.iterations,
        "converged": post.converged,
        "warnings": post.warnings,
    }));
    Ok(())
}

fn score(args: ScoreArgs) -> Result<()> {
    let (item_ids, bs) = formats::read_difficulties(&args.difficulties)?;
    let (graded_ids, z) = formats::read_graded(&args.responses)?;
    let lookup: std::collections::HashMap<&str, f64> =
        item_ids.iter().map(String::as_str).zip(bs.iter().copied()).collect();
    let matched: Vec<f64> = graded_ids
        .iter()
        .map(|id| {
            lookup
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::invalid(format!("no difficulty for item `{id}`")))
        })
        .collect::<Result<_>>()?;
    let est = estimate_ability(&z, &matched, AbilityBounds::new(args.min, args.max)?)?;
    print_json(&json!({"theta": est.theta, "clamped": est.clamped}));
    Ok(())
}

fn crowd(args: CrowdArgs) -> Result<()> {
    let mut cfg: CrowdConfig = read_options(args.config.as_deref())?;
    cfg.seed = args.seed;
    let train = formats::read_dataset(&args.train, None)?;
    let sources = if args.examples.is_empty() {
        vec![args.train.clone()]
    } else {
        args.examples.clone()
    };
    let mut parts = Vec::new();
    let mut ids = Vec::new();
    for path in &sources {
        let d = formats::read_dataset(path, Some(train.n_classes()))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("item").to_string();
        ids.extend((0..d.len()).map(|k| format!("{stem}-{k}")));
        parts.push(d);
    }
    let refs: Vec<&Dataset> = parts.iter().collect();
    let all = Dataset::concat(&refs)?;
    let crowd = generate_crowd(&train, &all, ids, &cfg)?;
    match args.format {
        MatrixFormat::Csv => formats::write_response_csv(&args.output.join("responses.csv"), &crowd.matrix, None)?,
        MatrixFormat::Jsonl => formats::write_response_jsonl(&args.output.join("responses.jsonl"), &crowd.matrix)?,
    }
    formats::write_json(
        &args.output.join("manifest.json"),
        &CrowdManifest {
            config_hash: String::new(),
            members: crowd.members,
            warnings: crowd.warnings,
        },
    )
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(out) = args.output {
        cfg.output_dir = out;
    }
    let config_err = |e: Error| Error::Config {
        path: "strategy".into(),
        message: e.to_string(),
    };
    let kind: StrategyKind = args.strategy.parse().map_err(config_err)?;
    let source: DifficultySource = args.difficulty.parse().map_err(config_err)?;
    let strategy = CurriculumStrategy::new(kind, source);
    if args.seeds == 0 {
        return Err(Error::Config {
            path: "seeds".into(),
            message: "at least one seed is required".into(),
        });
    }
    let seeds: Vec<u64> = (0..args.seeds).collect();
    let dir = run_training_only(&cfg, &strategy, &seeds)?;
    let runs: Vec<_> = load_runs(&dir)?
        .into_iter()
        .filter(|r| r.strategy == strategy.label() && seeds.contains(&r.seed))
        .collect();
    print!("{}", runs_table(&summarize_strategies(&runs)?, None)?);
    Ok(())
}

fn analyze(command: AnalyzeCommand) -> Result<()> {
    match command {
        AnalyzeCommand::Correlation { difficulties, heuristic } => {
            let (ids_a, a) = formats::read_difficulties(&difficulties)?;
            let (ids_b, b) = formats::read_difficulties(&heuristic)?;
            let lookup: std::collections::HashMap<&str, f64> =
                ids_b.iter().map(String::as_str).zip(b.iter().copied()).collect();
            let (mut x, mut y) = (Vec::new(), Vec::new());
            for (id, v) in ids_a.iter().zip(&a) {
                if let Some(w) = lookup.get(id.as_str()) {
                    x.push(*v);
                    y.push(*w);
                }
            }
            let rho = spearman(&x, &y)?;
            print_json(&json!({"rho": rho, "n": x.len()}));
        }
        AnalyzeCommand::Dist { difficulties, bins } => {
            let (_, values) = formats::read_difficulties(&difficulties)?;
            print!("{}", histogram_csv(&values, bins, None)?);
        }
        AnalyzeCommand::Runs { results } => {
            let runs = load_runs(&results)?;
            print!("{}", runs_table(&summarize_strategies(&runs)?, None)?);
        }
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(out) = args.output {
        cfg.output_dir = out;
    }
    let outcome = run_experiment(&cfg, args.force)?;
    eprintln!(
        "outputs in {} (ran: {})",
        outcome.output_dir.display(),
        if outcome.executed.is_empty() {
            "nothing, all stages complete".to_string()
        } else {
            outcome.executed.join(", ")
        }
    );
    print!("{}", runs_table(&outcome.summaries, None)?);
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut cfg: SynthTaskConfig = read_options(args.config.as_deref())?;
    cfg.seed = args.seed;
    let task = make_synthetic_task(&cfg)?;
    formats::write_dataset(&args.output.join("train.csv"), &task.train, None)?;
    formats::write_dataset(&args.output.join("dev.csv"), &task.dev, None)?;
    formats::write_dataset(&args.output.join("test.csv"), &task.test, None)
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("IRT_CURRICULUM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| Error::Config {
        path: "IRT_CURRICULUM_THREADS".into(),
        message: format!("expected a positive integer, got `{raw}`"),
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::invalid(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Fit(a) => fit(a),
        Command::Score(a) => score(a),
        Command::Crowd { command: CrowdCommand::Generate(a) } => crowd(a),
        Command::Train(a) => train(a),
        Command::Analyze { command } => analyze(command),
        Command::Run(a) => run(a),
        Command::Synth(a) => synth(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
