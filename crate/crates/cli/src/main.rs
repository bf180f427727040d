mod commands;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fformation::config::RunConfig;
use fformation::sampling::InputCombo;

#[derive(Debug, Parser)]
#[command(
    name = "fformation",
    version,
    about = "Pairwise F-formation and role detection from wearable sensors"
)]
struct Cli {
    /// Run configuration (TOML). Built-in defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out` from the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Concurrent repetitions.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    seed_base: Option<u64>,
    /// Fixed reduction order, so results do not depend on the thread count.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    strict_determinism: Option<bool>,
    /// Print the default configuration with comments and exit.
    #[arg(long)]
    print_defaults: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic session described by the `[synth]` table.
    Gen,
    /// Run the window × input sweep and write one report per cell.
    Run {
        /// Re-run the cell recorded in this report and compare its metrics.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Score a dataset with a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset container; otherwise the dataset is built from the
        /// configuration with `--combo` and `--window`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        combo: Option<InputCombo>,
        #[arg(long)]
        window: Option<f64>,
    },
    /// Accuracy, AUC and confusion matrix of a predictions CSV.
    Metrics { predictions: PathBuf },
    /// Finite-difference check of the analytic gradients on tiny models.
    CheckGradients {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
}

/// Process outcome of a failed command.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_RUN: u8 = 3;

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<fformation::Error> for Failure {
    fn from(e: fformation::Error) -> Self {
        use fformation::Error as E;
        let code = match &e {
            E::Config(_) => EXIT_CONFIG,
            E::Parse { .. } | E::Io { .. } | E::Data(_) | E::Shape(_) | E::Json(_) => EXIT_DATA,
            E::NonFinite { .. } | E::Diverged { .. } | E::Metric(_) => EXIT_RUN,
        };
        Self::new(code, e.to_string())
    }
}

pub type CmdResult = Result<(), Failure>;

impl Cli {
    fn resolved_config(&self) -> Result<RunConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(jobs) = self.jobs {
            if jobs == 0 {
                return Err(Failure::new(EXIT_CONFIG, "--jobs must be at least 1"));
            }
            cfg.experiment.jobs = jobs;
        }
        if let Some(seed) = self.seed_base {
            cfg.experiment.seed_base = seed;
        }
        if let Some(strict) = self.strict_determinism {
            cfg.experiment.strict_determinism = strict;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn dispatch(cli: &Cli) -> CmdResult {
    if cli.print_defaults {
        print!("{}", RunConfig::defaults_toml());
        return Ok(());
    }
    let Some(command) = &cli.command else {
        return Err(Failure::new(
            EXIT_CONFIG,
            "no subcommand given (try --help)",
        ));
    };
    match command {
        Command::Gen => {
            let Some(path) = &cli.config else {
                return Err(Failure::new(
                    EXIT_CONFIG,
                    "gen needs --config with a [synth] table",
                ));
            };
            commands::require_synth_seed(path)?;
            commands::gen(&cli.resolved_config()?)
        }
        Command::Run { replay: None } => commands::run(&cli.resolved_config()?),
        Command::Run {
            replay: Some(report),
        } => commands::replay(report, cli.jobs),
        Command::Eval {
            checkpoint,
            dataset,
            combo,
            window,
        } => {
            let cfg = cli.resolved_config()?;
            let source = match (dataset, combo, window) {
                (Some(path), None, None) => commands::DataArg::File(path.clone()),
                (None, Some(c), Some(w)) => commands::DataArg::Build(*c, *w),
                _ => {
                    return Err(Failure::new(
                        EXIT_CONFIG,
                        "eval needs either --dataset or both --combo and --window",
                    ))
                }
            };
            commands::eval(&cfg, checkpoint, source)
        }
        Command::Metrics { predictions } => commands::metrics(predictions, cli.out.as_deref()),
        Command::CheckGradients { seeds } => commands::check_gradients(*seeds),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
