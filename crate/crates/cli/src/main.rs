//! `rationale`: synthesize corpora, train, evaluate, sweep, skew and probe.

mod artifacts;
mod commands;
mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rationale_core::corpus::Split;

/// Exit status: 2 for configuration problems, 3 for divergence, 1 otherwise.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Core(rationale_core::Error),
    Other(String),
}

impl Failure {
    fn io(path: &Path, e: std::io::Error) -> Self {
        Failure::Other(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        use rationale_core::Error as E;
        match self {
            Failure::Config(_) => 2,
            Failure::Core(E::Config(_) | E::Validation(_) | E::Io { .. } | E::Parse { .. } | E::Format(_)) => 2,
            Failure::Core(E::Divergence { .. }) => 3,
            _ => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration: {m}"),
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Other(m) => f.write_str(m),
        }
    }
}

impl From<rationale_core::Error> for Failure {
    fn from(e: rationale_core::Error) -> Self {
        Failure::Core(e)
    }
}

#[derive(Parser)]
#[command(name = "rationale", version, about = "Selective rationalization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat TOML file of settings; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory that receives every artifact of this run.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory holding train/dev/annotation .jsonl and embeddings.txt.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Record the run as deterministic. Runs are single-threaded and seeded,
    /// so outputs repeat exactly either way.
    #[arg(long)]
    deterministic: bool,
    /// adaptive or fixed.
    #[arg(long)]
    lambda_mode: Option<String>,
    /// Predictor/generator rate ratio in fixed mode.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    alpha_g: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Any other setting, as KEY=VALUE. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Annotation,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Annotation => Split::Annotation,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SkewKind {
    Predictor,
    Generator,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus with planted rationales.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train both players and evaluate the best checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "annotation")]
        split: SplitArg,
    },
    /// Fixed-lambda × generator-rate sweep.
    Grid {
        #[command(flatten)]
        common: Common,
    },
    /// Skewed start, then adaptive and lambda=1 runs from it.
    Skew {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: SkewKind,
        /// Pretraining epochs (predictor) or accuracy threshold (generator).
        #[arg(long)]
        level: f64,
    },
    /// Lipschitz estimate, inequality audit and centroid gaps.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
    },
}

fn overrides(c: &Common) -> Result<Vec<(String, String)>, Failure> {
    let mut out = Vec::new();
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        out.push((k.trim().to_owned(), v.trim().to_owned()));
    }
    let mut push = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            out.push((k.to_owned(), v));
        }
    };
    push("seed", c.seed.map(|v| v.to_string()));
    push("out", c.out.as_ref().map(|p| quoted(&p.display().to_string())));
    push("data_dir", c.data_dir.as_ref().map(|p| quoted(&p.display().to_string())));
    push("deterministic", c.deterministic.then(|| "true".into()));
    push("lambda_mode", c.lambda_mode.as_deref().map(quoted));
    push("lambda", c.lambda.map(|v| format!("{v:?}")));
    push("alpha_g", c.alpha_g.map(|v| format!("{v:?}")));
    push("max_epochs", c.max_epochs.map(|v| v.to_string()));
    Ok(out)
}

fn quoted(s: &str) -> String {
    toml::Value::String(s.to_owned()).to_string()
}

fn settings(common: &Common) -> Result<settings::Settings, Failure> {
    settings::resolve(common.config.as_deref(), &overrides(common)?)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synth { common } => commands::synth(&settings(&common)?),
        Command::Train { common } => commands::train(&settings(&common)?),
        Command::Eval { common, checkpoint, split } => {
            commands::eval(&settings(&common)?, &checkpoint, split.into())
        }
        Command::Grid { common } => commands::grid(&settings(&common)?),
        Command::Skew { common, mode, level } => {
            commands::skew(&settings(&common)?, matches!(mode, SkewKind::Predictor), level)
        }
        Command::Probe { common, checkpoint, split } => {
            commands::probe(&settings(&common)?, &checkpoint, split.into())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
