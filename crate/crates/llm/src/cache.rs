//! Content-addressed response cache, in memory or as one JSON file per key.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use causaltext_core::Adjacency;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache I/O at {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corrupt cache entry {path}: {message}")]
    Corrupt { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey(String);

impl CacheKey {
    /// SHA-256 over length-prefixed fields, so field boundaries cannot be
    /// forged by concatenation.
    pub fn from_fields<'a>(fields: impl IntoIterator<Item = &'a str>) -> Self {
        let mut h = Sha256::new();
        for f in fields {
            h.update((f.len() as u64).to_le_bytes());
            h.update(f.as_bytes());
        }
        CacheKey(hex::encode(h.finalize()))
    }

    /// Key for one verification of `concepts` against `adjacency` by
    /// `backend` using `template` with `m` completions per pair.
    pub fn verifier(concepts: &[String], adjacency: &Adjacency, backend: &str, template: &str, m: usize) -> Self {
        let concepts = serde_json::to_string(concepts).expect("strings serialize");
        let matrix = adjacency.to_digit_rows();
        let m = m.to_string();
        CacheKey::from_fields(["verifier-v1", &concepts, &matrix, backend, template, &m])
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub entries: u64,
    pub bytes: u64,
    pub hits: u64,
    pub misses: u64,
}

enum Store {
    Memory(RwLock<HashMap<CacheKey, Value>>),
    Disk(PathBuf),
}

pub struct ResponseCache {
    store: Store,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache {
            store: Store::Memory(RwLock::new(HashMap::new())),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Result<Self, CacheError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| CacheError::Io { path: dir.display().to_string(), source })?;
        Ok(ResponseCache { store: Store::Disk(dir), hits: AtomicU64::new(0), misses: AtomicU64::new(0) })
    }

    fn entry_path(dir: &Path, key: &CacheKey) -> PathBuf {
        dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<Value>, CacheError> {
        match &self.store {
            Store::Memory(m) => Ok(m.read().expect("cache lock").get(key).cloned()),
            Store::Disk(dir) => {
                let path = Self::entry_path(dir, key);
                match fs::read_to_string(&path) {
                    Ok(text) => serde_json::from_str(&text)
                        .map(Some)
                        .map_err(|e| CacheError::Corrupt { path: path.display().to_string(), message: e.to_string() }),
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                    Err(source) => Err(CacheError::Io { path: path.display().to_string(), source }),
                }
            }
        }
    }

    pub fn put(&self, key: &CacheKey, value: &Value) -> Result<(), CacheError> {
        match &self.store {
            Store::Memory(m) => {
                m.write().expect("cache lock").insert(key.clone(), value.clone());
                Ok(())
            }
            Store::Disk(dir) => {
                let path = Self::entry_path(dir, key);
                let io = |source| CacheError::Io { path: path.display().to_string(), source };
                // Write to a unique temporary file, then rename into place.
                let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
                tmp.write_all(serde_json::to_string(value).expect("values serialize").as_bytes()).map_err(io)?;
                tmp.persist(&path).map_err(|e| io(e.error))?;
                Ok(())
            }
        }
    }

    /// Returns the stored value for `key`, or runs `compute` and stores its
    /// result. `compute` is not invoked on a hit.
    pub fn get_or_compute<E, F>(&self, key: &CacheKey, compute: F) -> Result<(Value, bool), E>
    where
        E: From<CacheError>,
        F: FnOnce() -> Result<Value, E>,
    {
        if let Some(v) = self.get(key)? {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok((v, true));
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let v = compute()?;
        self.put(key, &v)?;
        Ok((v, false))
    }

    pub fn stats(&self) -> Result<CacheStats, CacheError> {
        let (entries, bytes) = match &self.store {
            Store::Memory(m) => {
                let m = m.read().expect("cache lock");
                (m.len() as u64, m.values().map(|v| v.to_string().len() as u64).sum())
            }
            Store::Disk(dir) => {
                let mut entries = 0;
                let mut bytes = 0;
                for e in Self::entries(dir)? {
                    entries += 1;
                    bytes += e.metadata().map(|m| m.len()).unwrap_or(0);
                }
                (entries, bytes)
            }
        };
        Ok(CacheStats {
            entries,
            bytes,
            hits: self.hits.load(Ordering::SeqCst),
            misses: self.misses.load(Ordering::SeqCst),
        })
    }

    /// Removes every entry; returns how many were removed.
    pub fn clear(&self) -> Result<u64, CacheError> {
        match &self.store {
            Store::Memory(m) => {
                let mut m = m.write().expect("cache lock");
                let n = m.len() as u64;
                m.clear();
                Ok(n)
            }
            Store::Disk(dir) => {
                let mut n = 0;
                for e in Self::entries(dir)? {
                    fs::remove_file(e.path())
                        .map_err(|source| CacheError::Io { path: e.path().display().to_string(), source })?;
                    n += 1;
                }
                Ok(n)
            }
        }
    }

    fn entries(dir: &Path) -> Result<Vec<fs::DirEntry>, CacheError> {
        let rd = fs::read_dir(dir).map_err(|source| CacheError::Io { path: dir.display().to_string(), source })?;
        Ok(rd.filter_map(Result::ok).filter(|e| e.path().extension().is_some_and(|x| x == "json")).collect())
    }
}
