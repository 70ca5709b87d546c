use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mamba_mpc::harness::{generate_data, run_experiment, run_oracles, train_model, ExperimentConfig};
use mamba_mpc::mamba::{MambaPredictor, Padding};
use mamba_mpc::train::{build_dataset, evaluate_rse, split_point, write_history};
use mamba_mpc::Trajectory;

#[derive(Parser)]
#[command(name = "mamba-mpc", version, about = "Mamba multi-step predictors inside model predictive control")]
struct Cli {
    /// Worker threads for independent closed-loop runs (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the convolution padding.
    #[arg(long, value_parser = parse_padding)]
    padding: Option<Padding>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured plant under its excitation signal.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Override the number of samples.
        #[arg(long)]
        length: Option<usize>,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the configured model to a trajectory CSV.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Output checkpoint (JSON); the loss history goes next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Relative squared error of a checkpoint on a trajectory CSV.
    EvalOpenloop {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Fraction of trailing windows reported separately.
        #[arg(long, default_value_t = 0.15)]
        val_fraction: f64,
    },
    /// Run one experiment end to end.
    Run {
        #[command(flatten)]
        common: Common,
        /// Use this checkpoint instead of training.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output directory (default: results/<experiment>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the oracle suite.
    Oracles {
        /// Also write the experiment artifacts here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_padding(s: &str) -> Result<Padding, String> {
    s.parse().map_err(|e: mamba_mpc::Error| e.to_string())
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&c.config).with_context(|| format!("reading {}", c.config.display()))?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let (Some(padding), Some(model)) = (c.padding, cfg.model.as_mut()) {
        model.padding = padding;
    }
    // Checkpoint paths in a config are relative to the config file.
    if let Some(ckpt) = cfg.checkpoint.as_mut() {
        if ckpt.is_relative() {
            *ckpt = c.config.parent().unwrap_or(Path::new(".")).join(&*ckpt);
        }
    }
    Ok(cfg)
}

fn progress(msg: &str) {
    eprintln!("{msg}");
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    match cli.command {
        Command::GenData { common, length, out } => {
            let mut cfg = load_config(&common)?;
            if let (Some(n), Some(d)) = (length, cfg.data.as_mut()) {
                d.length = n;
            }
            let traj = generate_data(&cfg)?;
            if let Some(dir) = out.parent() {
                std::fs::create_dir_all(dir)?;
            }
            traj.write_csv(&out)?;
            eprintln!("wrote {} samples to {}", traj.len(), out.display());
        }
        Command::Train { common, data, out } => {
            let cfg = load_config(&common)?;
            let traj = Trajectory::read_csv(&data).with_context(|| format!("reading {}", data.display()))?;
            let (fit, summary) = train_model(&cfg, &traj, |r| {
                eprintln!("epoch {:>4}  train {:.3e}  val {:.3e}  lr {:.2e}", r.epoch, r.train_rse, r.val_rse, r.lr)
            })?;
            fit.predictor.save(&out)?;
            write_history(&out.with_extension("history.csv"), &fit.history)?;
            println!("best validation RSE {:.4e} at epoch {}", summary.best_val_rse, summary.best_epoch);
        }
        Command::EvalOpenloop { checkpoint, data, val_fraction } => {
            let pred = MambaPredictor::load(&checkpoint)?;
            let traj = Trajectory::read_csv(&data).with_context(|| format!("reading {}", data.display()))?;
            let ds = build_dataset(&traj, pred.config().horizon)?;
            let all = evaluate_rse(&pred, &ds)?;
            let tail = ds.slice(split_point(ds.len(), val_fraction)..ds.len());
            println!("windows {}  rse {:.4e}", ds.len(), all);
            if !tail.is_empty() {
                println!("last {} windows  rse {:.4e}", tail.len(), evaluate_rse(&pred, &tail)?);
            }
        }
        Command::Run { common, checkpoint, out } => {
            let mut cfg = load_config(&common)?;
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint;
            }
            let out = out.unwrap_or_else(|| Path::new("results").join(cfg.experiment.as_str()));
            let report = run_experiment(&cfg, &out, &mut |m| progress(m))?;
            print!("{}", std::fs::read_to_string(out.join("summary.md"))?);
            if report.failures > 0 {
                eprintln!("{} failure(s)", report.failures);
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Oracles { out } => {
            let failures = match out {
                Some(dir) => {
                    let cfg = ExperimentConfig::from_toml("experiment = \"unit-oracles\"")?;
                    run_experiment(&cfg, &dir, &mut |m| println!("{m}"))?.failures
                }
                None => {
                    let outcomes = run_oracles();
                    for o in &outcomes {
                        println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
                    }
                    outcomes.iter().filter(|o| !o.passed).count()
                }
            };
            if failures > 0 {
                bail!("{failures} oracle(s) failed");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
