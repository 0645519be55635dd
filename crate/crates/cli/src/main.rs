use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use semhawkes_cli::config::{config_path, MissingStrategy};
use semhawkes_cli::{
    cmd_annotate, cmd_evaluate, cmd_export_alpha, cmd_predict, cmd_prepare, cmd_simulate, cmd_train, Checkpoint,
    CliError, EvaluateInputs, PrepareOptions, RunConfig,
};

/// Category annotation and check-in prediction with a latent-mark spatio-temporal Hawkes process.
#[derive(Debug, Parser)]
#[command(name = "semhawkes", version)]
struct Cli {
    /// Log verbosity (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the model with EM and write checkpoint, posterior, trace and manifest.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Grid over eta and h scored by held-out log-likelihood, e.g. `eta=0.1,0.5` (repeatable).
        #[arg(long, value_name = "NAME=V1,V2,...")]
        grid: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Sample the missing categories of a dataset under a trained checkpoint.
    Annotate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Predict each test check-in from the history before it and report timestamp RMSE.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score annotations against truth and predictions against a test set.
    Evaluate {
        /// Dataset the posterior was sampled for.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        posterior: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic check-in log from a TOML generator spec.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the learned excitation matrix with category labels.
    ExportAlpha {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a labelled log into training and test windows and mask training categories.
    Prepare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training weeks; omit to train on the whole log.
        #[arg(long)]
        train_weeks: Option<u32>,
        #[arg(long, default_value_t = 0)]
        test_weeks: u32,
        /// Share of training check-ins whose category is removed.
        #[arg(long)]
        missing: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
}

/// Flags shared by commands that take a run configuration. They override the config file.
#[derive(Debug, Args)]
struct Common {
    /// TOML config; defaults to $SEMHAWKES_CONFIG.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long, value_enum)]
    missing_strategy: Option<Strategy>,
    #[arg(long)]
    max_em_iters: Option<usize>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    lookahead: Option<usize>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum Strategy {
    Infer,
    Random,
    Remove,
}

impl Common {
    /// Config file (or `fallback` when there is none), then flag overrides.
    fn resolve(&self, fallback: Option<RunConfig>) -> Result<RunConfig, CliError> {
        let mut cfg = match (config_path(self.config.as_deref()), fallback) {
            (Some(p), _) => RunConfig::load(&p)?,
            (None, Some(f)) => f,
            (None, None) => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.threads {
            cfg.threads = v;
        }
        if let Some(v) = self.eta {
            cfg.model.eta = v;
        }
        if let Some(v) = self.h {
            cfg.model.h = v;
        }
        if let Some(v) = self.missing_strategy {
            cfg.data.missing = match v {
                Strategy::Infer => MissingStrategy::Infer,
                Strategy::Random => MissingStrategy::Random,
                Strategy::Remove => MissingStrategy::Remove,
            };
        }
        if let Some(v) = self.max_em_iters {
            cfg.em.max_iters = v;
        }
        if let Some(v) = self.draws {
            cfg.prediction.draws = v;
        }
        if let Some(v) = self.horizon {
            cfg.prediction.horizon = v;
        }
        if let Some(v) = self.lookahead {
            cfg.prediction.lookahead = v;
        }
        Ok(cfg)
    }

    /// Commands that reuse a checkpoint default to the configuration it was trained with.
    fn resolve_with_checkpoint(&self, checkpoint: &Path) -> Result<RunConfig, CliError> {
        if config_path(self.config.as_deref()).is_some() {
            self.resolve(None)
        } else {
            self.resolve(Some(Checkpoint::load(checkpoint)?.config))
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { data, out, grid, common } => {
            let mut cfg = common.resolve(None)?;
            for spec in &grid {
                cfg.grid.apply_spec(spec)?;
            }
            let s = cmd_train(&data, &cfg, &out)?;
            println!(
                "trained on {} check-ins ({} missing): {} EM iterations, converged = {}, eta = {}, h = {}",
                s.events,
                s.latent_events,
                s.em_iterations,
                s.checkpoint.converged,
                s.checkpoint.params.eta,
                s.checkpoint.params.h
            );
        }
        Command::Annotate { checkpoint, data, out, common } => {
            let cfg = common.resolve_with_checkpoint(&checkpoint)?;
            let n = cmd_annotate(&checkpoint, &data, &out, &cfg)?;
            println!("annotated {n} check-ins");
        }
        Command::Predict { checkpoint, train, test, out, common } => {
            let cfg = common.resolve_with_checkpoint(&checkpoint)?;
            let r = cmd_predict(&checkpoint, &train, &test, &out, &cfg)?;
            match r.rmse_hours {
                Some(rmse) => println!(
                    "{} predictions for {} test check-ins ({} censored), RMSE {rmse:.4} h",
                    r.predictions, r.test_events, r.censored
                ),
                None => println!("no predictions for {} test check-ins", r.test_events),
            }
        }
        Command::Evaluate { data, posterior, truth, predictions, test, out, common } => {
            let cfg = common.resolve(None)?;
            let inputs = EvaluateInputs {
                data,
                posterior,
                truth,
                predictions,
                test,
            };
            let report = cmd_evaluate(&inputs, &out, &cfg)?;
            print!("{}", report.to_table());
        }
        Command::Simulate { spec, out } => {
            let n = cmd_simulate(&spec, &out)?;
            println!("simulated {n} check-ins");
        }
        Command::ExportAlpha { checkpoint, out } => {
            let alpha = cmd_export_alpha(&checkpoint, &out)?;
            println!("wrote {0}x{0} influence matrix", alpha.len());
        }
        Command::Prepare { data, out, train_weeks, test_weeks, missing, common } => {
            let cfg = common.resolve(None)?;
            let opts = PrepareOptions {
                train_weeks,
                test_weeks,
                missing_fraction: missing,
            };
            let (a, b) = cmd_prepare(&data, &out, &opts, &cfg)?;
            println!("{a} training and {b} test check-ins");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
