//! `pnn-dat`: train, evaluate and sweep emulated photonic networks from a TOML config.
//!
//! Exit status: 0 on success, 2 for configuration or input errors, 3 for numerical failures,
//! 1 otherwise.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pnn_dat::experiment::gradcheck::{run_gradcheck, GRADCHECK_TOL};
use pnn_dat::experiment::{report, run_eval, run_sweep, run_train, EvalTarget, ExperimentConfig};
use pnn_dat::Error;

#[derive(Parser)]
#[command(name = "pnn-dat", version, about = "Dual adaptive training of emulated photonic neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `seeds.params`.
    #[arg(long)]
    seed_params: Option<u64>,
    /// Overrides `seeds.errors`.
    #[arg(long)]
    seed_errors: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train with the configured engine and write the run artifacts.
    Train(Common),
    /// Evaluate a checkpoint on the deployed (errored) system or the ideal model.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluate on the error-free model instead of the deployed system.
        #[arg(long)]
        ideal: bool,
    },
    /// Accuracy versus one error strength for several engines.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated strengths; replaces `sweep.axis`.
        #[arg(long, value_delimiter = ',')]
        axis: Option<Vec<f64>>,
    },
    /// Finite-difference checks of the training gradients on toy networks.
    Gradcheck,
    /// Collate run directories into tables.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
}

fn load(c: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = c.seed_params {
        cfg.seeds.params = s;
    }
    if let Some(s) = c.seed_errors {
        cfg.seeds.errors = s;
    }
    if let Some(o) = &c.out {
        cfg.output.dir = Some(o.clone());
    }
    Ok(cfg)
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Train(c) => {
            let cfg = load(&c)?;
            let out = run_train(&cfg)?;
            let r = &out.record;
            for e in r.pretrain.iter().chain(&r.epochs) {
                println!("{} epoch {}: task loss {:.4}, test acc {}", e.stage, e.epoch, e.task_loss, pct(e.test_acc));
            }
            println!("baseline {}  direct {}  {} {}", pct(r.baseline_acc), pct(r.direct_acc), r.engine.name(), pct(r.engine_acc));
            println!("record hash {}", r.record_hash());
        }
        Command::Eval { common, checkpoint, ideal } => {
            let cfg = load(&common)?;
            let target = if ideal { EvalTarget::Ideal } else { EvalTarget::Deployed };
            let r = run_eval(&cfg, &checkpoint, target)?;
            println!("accuracy {} ({}/{})", pct(r.accuracy()), r.correct, r.total);
        }
        Command::Sweep { common, axis } => {
            let cfg = load(&common)?;
            let r = run_sweep(&cfg, axis.as_deref())?;
            print!("{}", r.sweep_csv());
        }
        Command::Gradcheck => {
            let lines = run_gradcheck()?;
            let mut ok = true;
            for l in &lines {
                ok &= l.passed();
                println!(
                    "{} {} {}: max rel err {:.2e} over {} probes (tol {GRADCHECK_TOL:e})",
                    if l.passed() { "PASS" } else { "FAIL" },
                    l.case,
                    l.loss,
                    l.report.max_rel_err,
                    l.report.checked()
                );
            }
            return Ok(ok);
        }
        Command::Report { dirs } => print!("{}", report(&dirs)?),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config { .. } | Error::Io { .. } | Error::Format { .. } | Error::Topology(_) => 2,
                Error::NonFinite(_) => 3,
                _ => 1,
            })
        }
    }
}
