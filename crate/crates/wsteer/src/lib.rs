//! Command-line front end for `wsteer-core`: JSON configs, solution files,
//! line-scan CSV output and Monte Carlo validation.

pub mod check;
pub mod commands;
pub mod config;
pub mod solution;

/// Size the global thread pool from `WSTEER_THREADS` (unset: all cores).
pub fn init_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var("WSTEER_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| anyhow::anyhow!("WSTEER_THREADS must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}
