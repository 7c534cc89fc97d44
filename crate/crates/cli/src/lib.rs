//! Command-line driver for the engagement-modelling pipeline.
//!
//! Every stage reads its inputs from, and writes its outputs under, the
//! configured output directory; see [`pipeline::Layout`].

pub mod config;
pub mod pipeline;

pub use config::{RunConfig, BUNDLED_CONFIG};
pub use pipeline::{run_all, Layout, ReportSummary};

/// Environment variable capping the worker-thread count.
pub const THREADS_ENV: &str = "SALIENCE_LAB_THREADS";

/// Sizes the global worker pool from `SALIENCE_LAB_THREADS` when set.
pub fn init_threads() -> anyhow::Result<()> {
    use anyhow::Context;
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("{THREADS_ENV}={raw}: expected a positive integer"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the worker pool")
}
