//! On-disk cache of simulated critical values.
//!
//! One CSV per law kind, columns `K,n,alpha,reps,seed,quantile,mc_stderr`.
//! Floats are written in shortest round-trip form so lookups are exact.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Environment variable naming the default cache directory.
pub const CACHE_DIR_ENV: &str = "PIBIC_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub n: usize,
    pub alpha: f64,
    pub reps: usize,
    pub seed: u64,
    pub quantile: f64,
    pub mc_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CriticalValueCache {
    dir: PathBuf,
}

impl CriticalValueCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// The cache named by `PIBIC_CACHE_DIR`, if set and nonempty.
    pub fn from_env() -> Option<Self> {
        std::env::var_os(CACHE_DIR_ENV)
            .filter(|v| !v.is_empty())
            .map(Self::new)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn file(&self, law_kind: &str) -> PathBuf {
        self.dir.join(format!("{law_kind}.csv"))
    }

    pub fn rows(&self, law_kind: &str) -> Result<Vec<CacheRow>> {
        let path = self.file(law_kind);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let mut reader = csv::Reader::from_path(path)?;
        reader
            .deserialize()
            .collect::<std::result::Result<Vec<CacheRow>, _>>()
            .map_err(Into::into)
    }

    pub fn lookup(&self, law_kind: &str, k: usize, n: usize, alpha: f64, reps: usize, seed: u64) -> Result<Option<CacheRow>> {
        Ok(self.rows(law_kind)?.into_iter().find(|r| {
            r.k == k && r.n == n && r.alpha == alpha && r.reps == reps && r.seed == seed
        }))
    }

    pub fn store(&self, law_kind: &str, row: &CacheRow) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        let path = self.file(law_kind);
        let fresh = !path.exists();
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut writer = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
        writer.serialize(row)?;
        writer.flush()?;
        Ok(())
    }
}
