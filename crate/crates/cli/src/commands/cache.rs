use std::path::Path;

use causaltext_llm::{CacheStats, ResponseCache};

use crate::CliError;

pub fn inspect(dir: &Path) -> Result<CacheStats, CliError> {
    if !dir.is_dir() {
        return Err(CliError::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "no cache directory")));
    }
    Ok(ResponseCache::on_disk(dir)?.stats()?)
}

/// Removes every cached entry; returns how many were removed.
pub fn clear(dir: &Path) -> Result<u64, CliError> {
    if !dir.is_dir() {
        return Ok(0);
    }
    Ok(ResponseCache::on_disk(dir)?.clear()?)
}
