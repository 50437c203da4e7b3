use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use fmo_cli::{check, eval, generate, solve, BenchConfig, Fault};
use fmo_core::metrics::BaselineKind;

#[derive(Parser)]
#[command(name = "fmo", version, about = "Synthesize, deblur and evaluate fast-moving-object images")]
struct Cli {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Overrides the dataset seed (synth) or the solver seed (solve).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Input,
    Background,
}

#[derive(Clone, Copy, ValueEnum)]
enum InjectFault {
    SharpSign,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        /// Dataset directory; defaults to the configured one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the solver on every sample of a dataset.
    Solve {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score estimates and baselines, writing a CSV.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory of `fmo solve`.
        #[arg(long)]
        est: Option<PathBuf>,
        #[arg(long, value_enum)]
        baseline: Vec<Baseline>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the verification suite.
    Check {
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<InjectFault>,
    },
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = match &cli.config {
        Some(path) => BenchConfig::load(path)?,
        None => BenchConfig::default(),
    };
    match cli.command {
        Command::Synth { out } => {
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let out = out.unwrap_or_else(|| cfg.dataset.clone());
            let samples = generate::cmd_synth(&cfg, &out, cli.jobs)?;
            println!("wrote {} samples to {}", samples.len(), out.display());
            Ok(true)
        }
        Command::Solve { data, out } => {
            if let Some(seed) = cli.seed {
                cfg.solver.seed = seed;
            }
            let data = data.unwrap_or_else(|| cfg.dataset.clone());
            let summary = solve::cmd_solve(&cfg, &data, &out, cli.jobs)?;
            println!("solved {}, failed {}", summary.solved.len(), summary.failed.len());
            for (id, msg) in &summary.failed {
                eprintln!("failed {id}: {msg}");
            }
            Ok(summary.failed.is_empty())
        }
        Command::Eval {
            data,
            est,
            baseline,
            out,
        } => {
            let data = data.unwrap_or_else(|| cfg.dataset.clone());
            let kinds: Vec<BaselineKind> = baseline
                .iter()
                .map(|b| match b {
                    Baseline::Input => BaselineKind::Input,
                    Baseline::Background => BaselineKind::Background,
                })
                .collect();
            let rows = eval::cmd_eval(&cfg, &data, est.as_deref(), &kinds, &out, cli.jobs)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
            Ok(true)
        }
        Command::Check { inject_fault } => {
            let fault = match inject_fault {
                Some(InjectFault::SharpSign) => Fault::SharpGradientSign,
                None => Fault::None,
            };
            let outcomes = check::cmd_check(fault);
            for o in &outcomes {
                println!("{o}");
            }
            let failed: Vec<String> = outcomes.iter().filter(|o| !o.passed).map(|o| o.label()).collect();
            if failed.is_empty() {
                println!("all {} checks passed", outcomes.len());
                Ok(true)
            } else {
                eprintln!("failed checks: {}", failed.join(", "));
                Ok(false)
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FMO_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
