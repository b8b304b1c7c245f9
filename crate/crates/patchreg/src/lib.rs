//! Std companion to `patchreg-core`: image, field and checkpoint formats,
//! pair manifests, the training loop, batch evaluation and the `patchreg`
//! command line.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod field_io;
pub mod gradcheck;
pub mod manifest;
pub mod pgm;
pub mod register;
pub mod synth;
pub mod train;

pub use error::{CliError, Result};

/// Environment variable that fixes the worker count.
pub const THREADS_ENV: &str = "PATCHREG_THREADS";

/// Worker pool sized from `PATCHREG_THREADS`, or rayon's default when unset.
/// Results never depend on the worker count.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV}={v} is not a positive integer")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}
