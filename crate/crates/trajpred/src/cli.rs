//! Command-line interface: `prepare`, `train`, `eval`, `compare`,
//! `gradcheck`, `dump-scores`. Flags override the optional `key=value`
//! config file, which overrides the defaults.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::Mode;
use crate::train::{self, EvalOverrides};
use crate::verify;

#[derive(Parser)]
#[command(
    name = "trajpred",
    version,
    about = "Pedestrian trajectory forecasting: social-pooling LSTM with an optional human-human attention branch"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the run-configuring subcommands. Every flag mirrors a
/// config-file key and wins over it.
#[derive(Args, Debug, Default)]
struct RunFlags {
    /// Plain-text key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset preset (ETH, HOTEL, UNIV1, UNIV3, ZARA1, ZARA2) or label.
    #[arg(long)]
    dataset: Option<String>,
    /// Annotation file (frame ped x y per line).
    #[arg(long)]
    data: Option<String>,
    /// attention | social
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Seconds per raw frame-id increment.
    #[arg(long)]
    frame_period: Option<f64>,
    /// Window start advance, in annotated frames.
    #[arg(long)]
    stride: Option<usize>,
    /// Frozen attention-scores file.
    #[arg(long)]
    scores_file: Option<String>,
    /// train,val,test fractions, e.g. 0.8,0.1,0.1
    #[arg(long)]
    fractions: Option<String>,
    /// Column order: frame,ped,x,y or frame,ped,y,x
    #[arg(long)]
    columns: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
}

impl RunFlags {
    fn build(&self) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        if let Some(path) = &self.config {
            config.apply_file(path)?;
        }
        let mut set = |key: &str, v: Option<String>| -> Result<()> {
            if let Some(v) = v {
                config.set(key, &v)?;
            }
            Ok(())
        };
        set("dataset", self.dataset.clone())?;
        set("data", self.data.clone())?;
        set("mode", self.mode.clone())?;
        set("epochs", self.epochs.map(|v| v.to_string()))?;
        set("lr", self.lr.map(|v| v.to_string()))?;
        set("dropout", self.dropout.map(|v| v.to_string()))?;
        set("seed", self.seed.map(|v| v.to_string()))?;
        set("frame_period", self.frame_period.map(|v| v.to_string()))?;
        set("stride", self.stride.map(|v| v.to_string()))?;
        set("scores_file", self.scores_file.clone())?;
        set("fractions", self.fractions.clone())?;
        set("columns", self.columns.clone())?;
        set("out", self.out.clone())?;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse and window a dataset; write the normalized file and the split
    /// manifest.
    Prepare {
        #[command(flatten)]
        flags: RunFlags,
        /// Also dump every pedestrian's 4x4 local map per frame as CSV.
        #[arg(long)]
        dump_maps: bool,
    },
    /// Train a model; writes the loss curve and the best-validation
    /// checkpoint.
    Train(RunFlags),
    /// Evaluate a checkpoint's ADE/FDE over its test split.
    Eval {
        /// Checkpoint to evaluate.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Override the data file recorded in the checkpoint.
        #[arg(long)]
        data: Option<String>,
        /// Override the mode (attention | social).
        #[arg(long)]
        mode: Option<String>,
        /// Override the frozen-scores file.
        #[arg(long)]
        scores_file: Option<String>,
        /// Output directory.
        #[arg(long)]
        out: Option<String>,
        /// Also dump per-cell social tensor norms as CSV.
        #[arg(long)]
        dump_social_norms: bool,
        /// Stochastic rollouts: draw fed-back positions from each step's
        /// Gaussian with this seed, instead of using the mean.
        #[arg(long)]
        sample: Option<u64>,
    },
    /// Compare matched social/attention checkpoints trained on identical
    /// splits.
    Compare {
        /// Social-only checkpoint; repeat per dataset.
        #[arg(long, required = true)]
        social: Vec<PathBuf>,
        /// Attention checkpoint; repeat per dataset, paired in order.
        #[arg(long, required = true)]
        attention: Vec<PathBuf>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: String,
    },
    /// Finite-difference check of every backward pass and the full model.
    Gradcheck,
    /// Export attention scores for every (frame, target, neighbor) of a
    /// dataset from a trained checkpoint.
    DumpScores {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Override the data file recorded in the checkpoint.
        #[arg(long)]
        data: Option<String>,
        /// Output directory.
        #[arg(long)]
        out: Option<String>,
    },
}

/// Runs the CLI; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version exit successfully; real parse errors do not.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare { flags, dump_maps } => {
            let config = flags.build()?;
            let (normalized, manifest) = train::prepare(&config)?;
            println!("wrote {}", normalized.display());
            println!("wrote {}", manifest.display());
            if dump_maps {
                let maps = train::dump_local_maps(&config)?;
                println!("wrote {}", maps.display());
            }
        }
        Command::Train(flags) => {
            let config = flags.build()?;
            let outcome = train::train(&config)?;
            for row in &outcome.rows {
                println!(
                    "epoch {:>3}  train {:.6}  val {:.6}  val_ade {:.4}  val_fde {:.4}",
                    row.epoch, row.train_loss, row.val_loss, row.val_ade, row.val_fde
                );
            }
            println!("best val loss {:.6}", outcome.best_val_loss);
            println!("wrote {}", outcome.curve.display());
            println!("wrote {}", outcome.checkpoint.display());
        }
        Command::Eval {
            checkpoint,
            data,
            mode,
            scores_file,
            out,
            dump_social_norms,
            sample,
        } => {
            let overrides = EvalOverrides {
                data,
                mode: mode.as_deref().map(Mode::parse).transpose()?,
                out,
                scores_file: scores_file.map(Some),
                dump_social_norms,
                sample_seed: sample,
            };
            let outcome = train::evaluate(&checkpoint, &overrides)?;
            println!(
                "{} ({}): ADE {:.4}  FDE {:.4}  over {} trajectories",
                outcome.metrics.dataset,
                outcome.config.mode,
                outcome.metrics.ade,
                outcome.metrics.fde,
                outcome.metrics.n_trajectories
            );
            println!("wrote {}", outcome.metrics_csv.display());
            println!("wrote {}", outcome.predictions_csv.display());
        }
        Command::Compare {
            social,
            attention,
            out,
        } => {
            if social.len() != attention.len() {
                return Err(Error::Config(format!(
                    "{} --social checkpoints but {} --attention",
                    social.len(),
                    attention.len()
                )));
            }
            let pairs: Vec<(PathBuf, PathBuf)> =
                social.into_iter().zip(attention).collect();
            let outcome = train::compare(&pairs, std::path::Path::new(&out))?;
            print!("{}", outcome.table);
            let (ade_imp, fde_imp) = outcome.report.average_improvement();
            println!(
                "average improvement: ADE {:.1}%  FDE {:.1}%",
                ade_imp * 100.0,
                fde_imp * 100.0
            );
            println!("wrote {}", outcome.csv.display());
        }
        Command::Gradcheck => {
            let results = verify::run_suite()?;
            print!("{}", verify::render_suite(&results));
            if results.iter().any(|(_, r)| !r.passed()) {
                return Err(Error::NonFinite("gradient check failed".into()));
            }
        }
        Command::DumpScores {
            checkpoint,
            data,
            out,
        } => {
            let overrides = EvalOverrides {
                data,
                out,
                ..EvalOverrides::default()
            };
            let path = train::dump_scores(&checkpoint, &overrides)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
