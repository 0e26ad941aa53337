//! Command-line front end: data generation, pretraining, adaptation,
//! evaluation, ablation sweeps and figure rendering.

pub mod commands;
pub mod experiment;
pub mod render;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;

pub use commands::{AblateArgs, AdaptArgs, EvalArgs, GenDataArgs, PretrainArgs};
pub use render::RenderArgs;

#[derive(Debug, Parser)]
#[command(name = "fvp", version, about = "Fourier visual prompting for source-free segmentation adaptation")]
pub struct Cli {
    /// Worker threads; 1 gives fully sequential execution.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic source/target benchmark.
    GenData(GenDataArgs),
    /// Train a segmentation model on a labeled dataset.
    Pretrain(PretrainArgs),
    /// Learn a visual prompt for a frozen model on unlabeled target images.
    Adapt(AdaptArgs),
    /// Dice/ASD of a model, optionally with a prompt, on a labeled dataset.
    Eval(EvalArgs),
    /// Prompt-size, variant, padding and selection ablations.
    Ablate(AblateArgs),
    /// Write prompts, prompted images, overlays and pseudo labels as PGM/PPM.
    Render(RenderArgs),
}

/// Failure of a command: bad input (exit status 2) or a runtime failure
/// (exit status 1).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<fvp_core::Error> for CliError {
    fn from(e: fvp_core::Error) -> Self {
        match e {
            fvp_core::Error::InvalidArgument(m) => CliError::Usage(m),
            other => CliError::Runtime(other.into()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Reads a JSON config file into a (partial) argument struct.
pub(crate) fn read_config<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("bad config {}: {e}", path.display())))
}

/// Writes pretty JSON with a trailing newline.
pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(anyhow::Error::from)?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("cannot write {}: {e}", path.display())))
}

pub(crate) fn require(path: &Option<PathBuf>, flag: &str) -> CliResult<PathBuf> {
    path.clone().ok_or_else(|| usage(format!("--{flag} is required")))
}

pub fn execute(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Pretrain(a) => commands::pretrain(a),
        Command::Adapt(a) => commands::adapt(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Render(a) => render::render(a),
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit status; messages go to stderr.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
