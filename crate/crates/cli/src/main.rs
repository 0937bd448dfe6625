use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use webmine::pipeline::{Pipeline, PipelineConfig, RunOptions, Stage, StageSummary};
use webmine::synth::{write_fixture, FixtureOptions};

/// Mine question-answer training data from web crawls.
#[derive(Debug, Parser)]
#[command(name = "webmine", version)]
struct Cli {
    /// Pipeline config (TOML).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Override a config value, e.g. `--set recall.threshold=0.6`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Discard existing checkpoints of the stages that run.
    #[arg(long, global = true)]
    fresh: bool,

    /// Stop after this many work units; rerun to continue.
    #[arg(long, value_name = "N", global = true)]
    max_units: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the recall classifier for a round.
    TrainClassifier {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        round: u8,
    },
    /// Score the corpus with a round's classifier.
    Recall {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        round: u8,
    },
    /// Group a round's recalled documents by domain and judge the domains.
    Triage {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        round: u8,
    },
    /// Clean pool pages and extract question-answer candidates.
    Extract,
    /// Rewrite candidates with the two refiner endpoints.
    Refine,
    /// Drop benchmark-overlapping and duplicate pairs.
    Decontaminate,
    /// Write the SFT conversation records.
    Assemble,
    /// Summarise the dataset.
    Stats,
    /// Sample pairs for manual review.
    Audit,
    /// Run every stage in order, skipping those already done.
    RunAll {
        /// Stop after this stage.
        #[arg(long, value_parser = parse_stage)]
        until: Option<Stage>,
    },
    /// Continue an interrupted or failed stage, or the whole pipeline.
    Resume {
        #[arg(value_parser = parse_stage)]
        stage: Option<Stage>,
    },
    /// Write the synthetic fixture tree (corpus, seeds, mocks, config).
    MakeFixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        docs: usize,
        #[arg(long, default_value_t = 4)]
        shards: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    Stage::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
        format!("unknown stage {s:?}; expected one of {}", names.join(", "))
    })
}

fn round_stage(kind: &str, round: u8) -> Stage {
    let name = format!("{kind}{round}");
    Stage::parse(&name).expect("round is 1 or 2")
}

fn print_summary(s: &StageSummary) {
    println!("{}", serde_json::to_string(s).expect("summary serializes"));
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Command::MakeFixture { out, docs, shards, seed } = &cli.command {
        let f = write_fixture(out, FixtureOptions { docs: *docs, shards: *shards, seed: *seed })?;
        println!("{}", serde_json::json!({"fixture": f.dir, "config": f.config, "docs": f.docs}));
        return Ok(());
    }
    let Some(path) = &cli.config else {
        bail!(webmine::Error::Config("--config is required".into()));
    };
    // an unreadable config file is a config error too
    let config = PipelineConfig::load(path, &cli.overrides).map_err(|e| match e {
        webmine::Error::Io { .. } => webmine::Error::Config(e.to_string()),
        e => e,
    })?;
    let opts = RunOptions { fresh: cli.fresh, max_units: cli.max_units };
    let mut pipeline = Pipeline::open(config, opts)
        .with_context(|| format!("opening output directory for {}", path.display()))?;
    let single = match cli.command {
        Command::TrainClassifier { round } => round_stage("train", round),
        Command::Recall { round } => round_stage("recall", round),
        Command::Triage { round } => round_stage("triage", round),
        Command::Extract => Stage::Extract,
        Command::Refine => Stage::Refine,
        Command::Decontaminate => Stage::Decontaminate,
        Command::Assemble => Stage::Assemble,
        Command::Stats => Stage::Stats,
        Command::Audit => Stage::Audit,
        Command::RunAll { until } => {
            pipeline.run_all(until, print_summary)?;
            return Ok(());
        }
        Command::Resume { stage } => {
            pipeline.resume(stage, print_summary)?;
            return Ok(());
        }
        Command::MakeFixture { .. } => unreachable!("handled above"),
    };
    print_summary(&pipeline.run_stage(single)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let core = e.chain().find_map(|c| c.downcast_ref::<webmine::Error>());
            if let Some(webmine::Error::Interrupted { stage, completed }) = core {
                println!("{}", serde_json::json!({"stage": stage, "status": "interrupted", "units_completed": completed}));
            }
            eprintln!("error: {e:#}");
            match core {
                Some(webmine::Error::Config(_)) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
