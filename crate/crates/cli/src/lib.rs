//! Library side of the `fmo` command: each subcommand is a function here so
//! that tests can drive it without spawning processes.

pub mod check;
pub mod config;
pub mod eval;
pub mod generate;
pub mod solve;

pub use check::{cmd_check, CheckOutcome, Fault};
pub use config::{BenchConfig, EvalConfig};
pub use eval::{cmd_eval, Method, ResultRow};
pub use generate::cmd_synth;
pub use solve::{cmd_solve, SolveMeta, SolveSummary};

/// Runs `f` on a dedicated pool of `jobs` threads; `0` lets the pool pick.
pub fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    Ok(pool.install(f))
}
