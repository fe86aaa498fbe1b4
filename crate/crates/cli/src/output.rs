//! Run artifacts: CSV tables and summary.json.
//!
//! All floating-point values are written with 17 significant digits so
//! artifacts round-trip to the exact f64 and re-runs diff clean. Nothing
//! here records wall-clock time, host paths, or thread counts; a re-run
//! with the same config and seed reproduces every byte.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::RunConfig;

/// 17-significant-digit scientific notation; round-trips any f64.
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Map a float slice to formatted CSV cells.
pub fn cells(vals: &[f64]) -> Vec<String> {
    vals.iter().copied().map(fmt).collect()
}

/// Write one CSV file with a fixed header and pre-formatted rows.
pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One control-arm check: a named value against its bound.
#[derive(Debug, Clone, Serialize)]
pub struct ControlResult {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

impl ControlResult {
    /// Passes when `value <= bound`.
    pub fn upper(name: &str, value: f64, bound: f64) -> Self {
        Self {
            name: name.to_owned(),
            value,
            bound,
            pass: value <= bound,
        }
    }

    /// Passes when the boolean holds; value/bound record it numerically.
    pub fn flag(name: &str, pass: bool) -> Self {
        Self {
            name: name.to_owned(),
            value: if pass { 1.0 } else { 0.0 },
            bound: 1.0,
            pass,
        }
    }
}

/// The summary.json payload: full config echo, seeds, per-command
/// metrics, control-arm outcomes, contamination verdict, and the exit
/// status the process will return.
#[derive(Debug, Serialize)]
pub struct Summary<'a, M: Serialize> {
    pub command: &'static str,
    pub scenario: &'a str,
    pub seeds: SeedEcho,
    /// Full resolved config echo; absent only for the configless selftest.
    pub config: Option<&'a RunConfig>,
    pub metrics: M,
    pub controls: Vec<ControlResult>,
    pub flagged_fraction: f64,
    pub contaminated: bool,
    pub exit_status: i32,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SeedEcho {
    pub master: u64,
    pub alt: u64,
    pub resample: u64,
}

impl SeedEcho {
    pub fn of(cfg: &RunConfig) -> Self {
        Self {
            master: cfg.seed,
            alt: cfg.seed_alt,
            resample: cfg.resample_seed,
        }
    }
}

/// Create the output directory and return it.
pub fn ensure_out_dir(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir.to_owned())
}

pub fn write_summary<M: Serialize>(dir: &Path, summary: &Summary<'_, M>) -> Result<()> {
    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(summary)?;
    fs::write(&path, text + "\n").with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}
