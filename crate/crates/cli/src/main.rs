//! `retune` command line: one subcommand per pipeline step.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use retune::alignment::AlignmentWeights;
use retune::config::PipelineConfig;
use retune::workspace::{synthetic_config, synthetic_e2e, EvalOptions, StepStatus, Workspace};
use retune::Error;

const SYNTHETIC_CONFIG: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(name = "retune", version, about = "Answer-centric retriever finetuning pipeline")]
struct Cli {
    /// TOML config; relative paths in it resolve against its directory.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Overrides `output_dir` from the config.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// More log output (repeat for debug).
    #[arg(long, short, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and validate the corpus, then chunk it.
    Ingest,
    /// Extract entities and relations and build the knowledge graph.
    BuildKg,
    /// Embed every chunk into the retrieval index.
    Index,
    /// Match QA entities and cut personalized PageRank subgraphs.
    Subgraph,
    /// Generate augmented queries from each subgraph.
    Augment,
    /// Score chunks against answers and select positives.
    Align {
        /// Forward, backward and vector weights, comma separated.
        #[arg(long, value_parser = parse_weights)]
        weights: Option<AlignmentWeights>,
    },
    /// Assemble the dataset for one curriculum stage.
    Curriculum {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        stage: u8,
    },
    /// Train the adapter on one curriculum stage.
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        stage: u8,
    },
    /// Run every step in order.
    Run,
    /// Top-k chunks for a query.
    Retrieve {
        query: String,
        #[arg(long, short, default_value_t = 5)]
        k: usize,
        /// Adapter checkpoint; defaults to the latest trained stage.
        #[arg(long, conflicts_with = "base")]
        adapter: Option<PathBuf>,
        /// Search with the base embeddings only.
        #[arg(long)]
        base: bool,
    },
    /// Retrieval metrics, token F1 and judge win rates.
    Eval {
        /// JSONL of retrieval queries with relevant chunk ids.
        #[arg(long)]
        queries: Option<PathBuf>,
        /// JSONL of answer pairs to judge.
        #[arg(long)]
        answers: Option<PathBuf>,
        #[arg(long)]
        adapter: Option<PathBuf>,
    },
    /// Generate a synthetic corpus and run the whole pipeline on it.
    SyntheticE2e {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "synthetic-out")]
        out: PathBuf,
    },
}

fn parse_weights(s: &str) -> Result<AlignmentWeights, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_config(path: Option<&Path>, output_dir: Option<PathBuf>) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            let mut cfg: PipelineConfig =
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            cfg.resolve_paths(p.parent().unwrap_or(Path::new(".")));
            cfg
        }
        None => PipelineConfig::default(),
    };
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    Ok(cfg)
}

fn report(step: &str, status: StepStatus) {
    match status {
        StepStatus::Ran => println!("{step}: done"),
        StepStatus::UpToDate => println!("{step}: up to date"),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Command::SyntheticE2e { seed, out } = &cli.command {
        let m = synthetic_e2e(*seed, out)?;
        // Lets single steps be rerun against the same workspace.
        let cfg = synthetic_config(*seed, &std::path::absolute(out)?);
        std::fs::write(out.join(SYNTHETIC_CONFIG), toml::to_string(&cfg)?)?;
        println!("{}", serde_json::to_string_pretty(&m)?);
        return Ok(());
    }
    let ws = Workspace::new(load_config(cli.config.as_deref(), cli.output_dir)?)?;
    match cli.command {
        Command::Ingest => report("ingest", ws.ingest()?),
        Command::BuildKg => report("build-kg", ws.build_kg()?),
        Command::Index => report("index", ws.index()?),
        Command::Subgraph => report("subgraph", ws.subgraph()?),
        Command::Augment => report("augment", ws.augment()?),
        Command::Align { weights } => report("align", ws.align(weights)?),
        Command::Curriculum { stage } => report(&format!("curriculum --stage {stage}"), ws.curriculum(stage)?),
        Command::Train { stage } => report(&format!("train --stage {stage}"), ws.train(stage)?),
        Command::Run => {
            ws.run_all()?;
            println!("run: done");
        }
        Command::Retrieve {
            query,
            k,
            adapter,
            base,
        } => {
            let adapter = if base {
                None
            } else {
                adapter.or_else(|| ws.latest_checkpoint())
            };
            for hit in ws.retrieve(&query, k, adapter.as_deref())? {
                println!("{}", serde_json::to_string(&hit).context("serializing hit")?);
            }
        }
        Command::Eval {
            queries,
            answers,
            adapter,
        } => {
            let (status, rep) = ws.eval(&EvalOptions {
                queries,
                answers,
                adapter,
            })?;
            report("eval", status);
            print!("{}", rep.summary_table());
        }
        Command::SyntheticE2e { .. } => unreachable!("handled above"),
    }
    Ok(())
}

/// 1 for usage or config errors, 2 for missing prerequisites, 3 for
/// backend failures.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::MissingArtifact { .. } | Error::CurriculumOrder { .. }) => 2,
        Some(Error::Backend { .. } | Error::ResponseParse { .. } | Error::Unsupported { .. }) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
