//! Command-line front end: synthesis, training, boosting, evaluation and ablations.

pub mod ablation;
pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use tbooster::splitter::SplitterLossKind;

pub use config::RunConfig;
pub use error::{CliError, CliResult, EXIT_RUNTIME, EXIT_VALIDATION};

#[derive(Debug, Parser)]
#[command(name = "tbooster", version, about = "Split and reconnect tracklets of a multi-object tracker")]
pub struct Cli {
    /// Global random seed (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides the config file).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LossArg {
    Adaptive,
    Hard,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus: ground truth, detections, tracker output, features and labels.
    Synth {
        #[arg(long)]
        train_sequences: Option<usize>,
        #[arg(long)]
        test_sequences: Option<usize>,
        #[arg(long)]
        identities: Option<usize>,
    },
    /// Train the splitter on synthesized windows.
    TrainSplitter {
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long, value_enum)]
        loss: Option<LossArg>,
        /// Checkpoint path [default: <out-dir>/splitter.ckpt]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the connector on synthesized single-identity tracklets.
    TrainConnector {
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        heads: Option<usize>,
        /// Checkpoint path [default: <out-dir>/connector.ckpt]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split and regroup the tracks of a MOTChallenge file.
    Boost {
        #[arg(long)]
        input: PathBuf,
        /// JSONL feature sidecar keyed by (frame, index within frame).
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        splitter: Option<PathBuf>,
        #[arg(long)]
        connector: Option<PathBuf>,
        #[arg(long)]
        delta_s: Option<f64>,
        #[arg(long)]
        delta_c: Option<f64>,
        #[arg(long)]
        delta_t: Option<i64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted tracks against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Write the metrics as flat JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Module, threshold, loss and heads ablations on the synthetic test split.
    Ablate {
        #[arg(long)]
        splitter: PathBuf,
        #[arg(long)]
        connector: PathBuf,
        #[arg(long)]
        baseline_splitter: Option<PathBuf>,
    },
}

/// Loads the config file (if any) and applies flag overrides.
pub fn resolve_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = d.clone();
    }
    match &cli.command {
        Command::Synth {
            train_sequences,
            test_sequences,
            identities,
        } => {
            set(&mut cfg.synth.train_sequences, *train_sequences);
            set(&mut cfg.synth.test_sequences, *test_sequences);
            set(&mut cfg.synth.scene.identities, *identities);
        }
        Command::TrainSplitter { iterations, loss, .. } => {
            set(&mut cfg.splitter_train.iterations, *iterations);
            if let Some(l) = loss {
                cfg.splitter_train.loss = match l {
                    LossArg::Adaptive => SplitterLossKind::Adaptive,
                    LossArg::Hard => SplitterLossKind::Hard,
                };
            }
        }
        Command::TrainConnector { iterations, heads, .. } => {
            set(&mut cfg.connector_train.iterations, *iterations);
            set(&mut cfg.connector.heads, *heads);
        }
        Command::Boost {
            delta_s,
            delta_c,
            delta_t,
            ..
        } => {
            set(&mut cfg.pipeline.delta_s, *delta_s);
            set(&mut cfg.pipeline.delta_c, *delta_c);
            set(&mut cfg.pipeline.delta_t, *delta_t);
        }
        Command::Eval { .. } | Command::Ablate { .. } => {}
    }
    Ok(cfg)
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Synth { .. } => {
            let s = commands::cmd_synth(&cfg)?;
            println!(
                "wrote {} training and {} test sequences to {}",
                s.train.sequences,
                s.test.sequences,
                cfg.out_dir.join("corpus").display()
            );
            println!(
                "training tracklets: {} ({} with a switch)",
                s.train.tracklets, s.train.tracklets_with_switch
            );
        }
        Command::TrainSplitter { out, .. } => {
            let out = out.clone().unwrap_or_else(|| cfg.out_dir.join("splitter.ckpt"));
            let s = commands::cmd_train_splitter(&cfg, &out)?;
            println!("saved {} (final loss {:.4})", s.checkpoint.display(), s.final_loss);
        }
        Command::TrainConnector { out, .. } => {
            let out = out.clone().unwrap_or_else(|| cfg.out_dir.join("connector.ckpt"));
            let s = commands::cmd_train_connector(&cfg, &out)?;
            println!("saved {} (final loss {:.4})", s.checkpoint.display(), s.final_loss);
        }
        Command::Boost {
            input,
            features,
            splitter,
            connector,
            out,
            ..
        } => {
            let args = commands::BoostArgs {
                input: input.clone(),
                features: features.clone(),
                splitter: splitter.clone(),
                connector: connector.clone(),
                out: out.clone(),
            };
            let s = commands::cmd_boost(&cfg, &args)?;
            println!(
                "{} rows: {} tracks in, {} segments, {} tracks out",
                s.rows, s.tracks_in, s.segments, s.tracks_out
            );
        }
        Command::Eval { gt, pred, report } => {
            let r = commands::cmd_eval(gt, pred, report.as_deref())?;
            println!(
                "IDF1 {:.2}  MOTA {:.2}  IDS {}  FRAG {}  MT {}  ML {}",
                100.0 * r.idf1,
                100.0 * r.mota,
                r.ids,
                r.frag,
                r.mt,
                r.ml
            );
        }
        Command::Ablate {
            splitter,
            connector,
            baseline_splitter,
        } => {
            let args = commands::AblateArgs {
                splitter: splitter.clone(),
                connector: connector.clone(),
                baseline_splitter: baseline_splitter.clone(),
            };
            let r = commands::cmd_ablate(&cfg, &args)?;
            print!("{}", r.to_markdown());
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
