//! `satbot`: serve the dialogue engine, chat with it in a terminal, and
//! build or evaluate its assets.
//!
//! Exit codes: 0 success, 1 validation or evaluation failure, 2 usage error
//! or missing asset.

mod chat;
mod commands;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use satbot_core::{AssetError, Config};

#[derive(Debug, Parser)]
#[command(name = "satbot", version, about = "Retrieval-based SAT dialogue engine")]
struct Cli {
    /// Deployment configuration (TOML).
    #[arg(long, global = true, env = "SAT_CONFIG", value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Human,
    Machine,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        /// Overrides the configured listen address; port 0 picks a free port.
        #[arg(long, value_name = "ADDR")]
        listen: Option<String>,
    },
    /// Talk to the engine in the terminal.
    Chat {
        /// Replay user inputs from a file (one per line, `#` comments) instead of reading stdin.
        #[arg(long, value_name = "FILE")]
        script: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Load and check every configured asset, or a single flow graph.
    Validate {
        /// Check only this flow graph; no configuration needed.
        #[arg(long, value_name = "FILE")]
        graph: Option<PathBuf>,
    },
    /// Score candidate rewrites and write the best of each base as a pool file.
    BuildPools {
        #[command(flatten)]
        rewrites: RewriteArgs,
        #[arg(long, default_value_t = 3)]
        keep_top: usize,
        #[arg(long, value_name = "FILE")]
        output: PathBuf,
    },
    /// Print every candidate's reward breakdown.
    ScoreRewrites {
        #[command(flatten)]
        rewrites: RewriteArgs,
        /// Keep only the best N per base (default: all).
        #[arg(long)]
        keep_top: Option<usize>,
    },
    /// Augment the QA corpus and measure how often variants retrieve their source.
    EvalTeacher {
        /// Variants per entry (default from configuration).
        #[arg(long)]
        variants: Option<usize>,
        #[arg(long)]
        max_substitutions: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Use the primary and analogous questions unchanged.
        #[arg(long)]
        identity: bool,
        #[arg(long, value_enum, default_value_t = Format::Human)]
        format: Format,
    },
    /// Train the emotion classifier and score it on a held-out set.
    EvalEmotion {
        /// Labeled `text<TAB>emotion` held-out set.
        #[arg(long, value_name = "FILE")]
        test: PathBuf,
        /// Training set (default: the configured one).
        #[arg(long, value_name = "FILE")]
        train: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Human)]
        format: Format,
    },
    /// Embed every line of a text file into an EMB1 store.
    EmbedFile {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        #[arg(long, value_name = "FILE")]
        output: PathBuf,
        /// Dimension when no configuration is given.
        #[arg(long)]
        dimension: Option<usize>,
    },
}

#[derive(Debug, clap::Args)]
struct RewriteArgs {
    /// Candidate score file: candidate_id, base_id, text, perplexity, semantic_logit, empathy_logit.
    #[arg(long, value_name = "FILE")]
    candidates: PathBuf,
    /// Base utterances: base_id, node_id, formality, text.
    #[arg(long, value_name = "FILE")]
    bases: PathBuf,
    /// Reward weights wf,ws,we,wsim.
    #[arg(long, default_value = "1,1,1,1")]
    weights: String,
    /// Repetition penalty constant.
    #[arg(long, default_value_t = 1.0)]
    repetition_penalty: f64,
}

#[derive(Debug)]
enum CliError {
    Missing(PathBuf),
    Usage(String),
    Failed(String),
}

impl CliError {
    fn failed(e: impl std::fmt::Display) -> Self {
        CliError::Failed(e.to_string())
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Missing(_) | CliError::Usage(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Missing(p) => write!(f, "missing asset: {}", p.display()),
            CliError::Usage(m) | CliError::Failed(m) => f.write_str(m),
        }
    }
}

impl From<AssetError> for CliError {
    fn from(e: AssetError) -> Self {
        match e {
            AssetError::Missing(p) => CliError::Missing(p),
            other => CliError::failed(other),
        }
    }
}

fn require(path: &Path) -> Result<&Path, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::Missing(path.to_path_buf()))
    }
}

fn load_config(flag: Option<&Path>) -> Result<Config, CliError> {
    let path = Config::locate(flag).ok_or_else(|| CliError::Usage("no configuration: pass --config or set SAT_CONFIG".into()))?;
    Ok(Config::load(&path)?)
}

fn optional_config(flag: Option<&Path>) -> Result<Option<Config>, CliError> {
    match Config::locate(flag) {
        Some(path) => Ok(Some(Config::load(&path)?)),
        None => Ok(None),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Serve { listen } => commands::serve(load_config(config)?, listen),
        Command::Chat { script, seed } => chat::run(load_config(config)?, script.as_deref(), seed),
        Command::Validate { graph: Some(graph) } => commands::validate_graph(&graph),
        Command::Validate { graph: None } => commands::validate(load_config(config)?),
        Command::BuildPools {
            rewrites,
            keep_top,
            output,
        } => commands::build_pools(optional_config(config)?, &rewrites, keep_top, &output),
        Command::ScoreRewrites { rewrites, keep_top } => {
            commands::score_rewrites(optional_config(config)?, &rewrites, keep_top.unwrap_or(usize::MAX))
        }
        Command::EvalTeacher {
            variants,
            max_substitutions,
            seed,
            identity,
            format,
        } => commands::eval_teacher(load_config(config)?, variants, max_substitutions, seed, identity, format),
        Command::EvalEmotion { test, train, format } => {
            commands::eval_emotion(optional_config(config)?, &test, train.as_deref(), format)
        }
        Command::EmbedFile {
            input,
            output,
            dimension,
        } => commands::embed_file(optional_config(config)?, &input, &output, dimension),
    }
}
