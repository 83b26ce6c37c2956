use std::path::PathBuf;
use std::process::ExitCode;

use ansat_cli::config::PipelineConfig;
use ansat_cli::pipeline::{Pipeline, StageOutcome, STAGES};
use ansat_core::Result;
use clap::{Parser, Subcommand};

/// Transfer-pair screening experiments: synthesize a corpus, train the model
/// grid, attribute terms, extract ANSAT features, and evaluate the
/// transferability regressors.
#[derive(Parser)]
#[command(name = "ansat", version)]
struct Cli {
    /// TOML configuration file; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Global random seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 uses the default pool), overriding the configuration.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or import) the corpus and its train/test split.
    Synth {
        /// Number of synthetic tasks, overriding the configuration.
        #[arg(long)]
        tasks: Option<usize>,
    },
    /// Train the single-task hyperparameter grid and pick each task's best model.
    TrainSingles,
    /// Fine-tune every ordered task pair from the best single-task checkpoints.
    TrainPairs,
    /// Compute per-term attributions for every best single-task model.
    Attribute,
    /// Build the shared-active-term feature table over the threshold grid.
    Ansat,
    /// Cross-validate and fit the transferability regressors.
    Fit,
    /// Compute ranking accuracy and budgeted-search curves.
    Evaluate,
    /// Assemble the report bundle.
    Report,
    /// Run every stage in order.
    Pipeline,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    if let Command::Synth { tasks: Some(tasks) } = &cli.command {
        cfg.corpus.synthetic.n_tasks = *tasks;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let pipeline = Pipeline::new(load_config(cli)?)?;
    let print = |name: &str, outcome: &StageOutcome| println!("{name}: {}", outcome.summary);
    let single = |name: &str, f: fn(&Pipeline) -> Result<StageOutcome>| -> Result<()> {
        print(name, &f(&pipeline)?);
        Ok(())
    };
    match cli.command {
        Command::Synth { .. } => single("synth", Pipeline::synth),
        Command::TrainSingles => single("train-singles", Pipeline::train_singles),
        Command::TrainPairs => single("train-pairs", Pipeline::train_pairs),
        Command::Attribute => single("attribute", Pipeline::attribute),
        Command::Ansat => single("ansat", Pipeline::ansat),
        Command::Fit => single("fit", Pipeline::fit_models),
        Command::Evaluate => single("evaluate", Pipeline::evaluate),
        Command::Report => single("report", Pipeline::report),
        Command::Pipeline => {
            for (name, stage) in STAGES {
                print(name, &stage(&pipeline)?);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; everything else is a
            // usage error.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
