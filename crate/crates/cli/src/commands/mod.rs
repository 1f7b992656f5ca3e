pub mod decompose;
pub mod degrade;
pub mod evaluate;
pub mod fuse;
pub mod gradcheck;
pub mod synth;
pub mod train;

use std::path::Path;

use irfuse_core::Error;
use rayon::prelude::*;

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) | Error::NonFiniteLoss { .. } => 3,
        _ => 2,
    }
}

pub fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Maps `f` over `items` on `jobs` workers, preserving order.
pub fn par_map<T, R, F>(jobs: usize, items: &[T], f: F) -> Result<Vec<R>, Error>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if jobs <= 1 {
        return Ok(items.iter().map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    Ok(pool.install(|| items.par_iter().map(f).collect()))
}

pub fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}
