use std::path::PathBuf;
use std::process::ExitCode;

use aqua_cli::commands::{self, AnchorArg, AskArgs, DepsSpec, EvalPaths};
use aqua_cli::config::ServiceConfig;
use aqua_core::engine::Condition;
use aqua_core::eval::{EvalOptions, DEFAULT_PARALLELISM};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aqua", version, about = "Answer questions about software tutorial videos using visual anchors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct DepsArgs {
    /// Service config (TOML); its data_dir supplies the icon database and index.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Icon database directory.
    #[arg(long)]
    icon_db: Option<PathBuf>,
    /// Corpus index file.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Fixture client directory (captions.json, ocr.json, chat.json).
    #[arg(long, env = "AQUA_FIXTURE_DIR")]
    fixtures: Option<PathBuf>,
}

impl From<DepsArgs> for DepsSpec {
    fn from(a: DepsArgs) -> Self {
        DepsSpec { config: a.config, icon_db: a.icon_db, index: a.index, fixtures: a.fixtures }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Build the icon database from help pages and/or a command icon dump.
    BuildIconDb {
        #[arg(long)]
        docs: Option<PathBuf>,
        #[arg(long)]
        commands: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "Fusion 360")]
        profile: String,
    },
    /// Chunk and embed a documentation/transcript corpus.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        deps: DepsArgs,
    },
    /// Answer one question and print the answer with its trace as JSON.
    Ask {
        /// Transcript of the video (JSON or WebVTT).
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        question: String,
        /// IMAGE@t=SECONDS[@LABEL]; repeatable.
        #[arg(long = "anchor")]
        anchors: Vec<AnchorArg>,
        #[arg(long, default_value = "full")]
        condition: Condition,
        /// Video time of the question, used when there are no anchors.
        #[arg(long)]
        asked_at: Option<f64>,
        /// Report wall_time_ms as 0 so that output is byte-stable.
        #[arg(long)]
        omit_timing: bool,
        #[command(flatten)]
        deps: DepsArgs,
    },
    /// Answer a question set under all three conditions.
    Eval {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Flat CSV view of the report.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Blank rating sheet with blinded answers.
        #[arg(long)]
        sheet: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_PARALLELISM)]
        parallelism: usize,
        /// Keep latencies in the report (makes it run-dependent).
        #[arg(long)]
        timing: bool,
        #[command(flatten)]
        deps: DepsArgs,
    },
}

fn print_json(value: &impl serde::Serialize) -> anyhow::Result<()> {
    use std::io::Write as _;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(value)?) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Serve { config } => {
            let config = ServiceConfig::load(config.as_deref())?;
            tokio::runtime::Runtime::new()?.block_on(aqua_cli::service::serve(config))
        }
        Command::BuildIconDb { docs, commands: cmds, out, profile } => {
            let summary = commands::build_icon_db(docs.as_deref(), cmds.as_deref(), &out, &profile)?;
            for w in &summary.warnings {
                tracing::warn!("{w}");
            }
            print_json(&summary)
        }
        Command::Index { corpus, out, deps } => {
            let summary = commands::build_index(&corpus, &out, &deps.into())?;
            for w in &summary.warnings {
                tracing::warn!("{w}");
            }
            print_json(&summary)
        }
        Command::Ask { video, question, anchors, condition, asked_at, omit_timing, deps } => {
            let loaded = commands::load_deps(&deps.into())?;
            let args = AskArgs { video: &video, question: &question, anchors: &anchors, condition, asked_at_s: asked_at };
            let mut answer = commands::ask(&loaded, &args)?;
            if omit_timing {
                answer.trace.wall_time_ms = 0;
            }
            print_json(&answer)
        }
        Command::Eval { questions, seed, out, csv, sheet, parallelism, timing, deps } => {
            let loaded = commands::load_deps(&deps.into())?;
            let paths = EvalPaths { questions: &questions, out: &out, csv: csv.as_deref(), sheet: sheet.as_deref() };
            let options = EvalOptions { seed, parallelism, record_timing: timing };
            let report = commands::eval(&loaded, &paths, &options)?;
            eprintln!(
                "{} questions, {} answers, {} failures, hash {}",
                report.aggregate.questions,
                report.aggregate.answers,
                report.aggregate.failures.len(),
                report.aggregate.determinism_hash
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("AQUA_LOG").unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
