//! Output directory handling: data files, metadata sidecars, run manifest.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use fidelity_core::export::Table;

use crate::config::{Format, RunConfig};
use crate::error::{RunError, RunResult};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Contents of `<name>.meta.json`. Carries no timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub file: String,
    pub kind: String,
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub columns: Vec<String>,
    pub rows: usize,
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub started: u64,
    pub finished: u64,
    /// Every file written by the run, relative to the output directory.
    pub files: Vec<String>,
}

/// Seconds since the Unix epoch.
pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Writes tables under one output directory and records what was written.
#[derive(Debug)]
pub struct Sink {
    dir: PathBuf,
    format: Format,
    command: String,
    config: serde_json::Value,
    hash: String,
    started: u64,
    files: Vec<String>,
}

impl Sink {
    /// Creates the output directory named in the config.
    pub fn create(cfg: &RunConfig, command: &str) -> RunResult<Self> {
        std::fs::create_dir_all(&cfg.out).map_err(|e| RunError::io(&cfg.out, e))?;
        Ok(Sink {
            dir: cfg.out.clone(),
            format: cfg.format,
            command: command.to_string(),
            config: cfg.to_json(),
            hash: cfg.hash(),
            started: unix_now(),
            files: Vec::new(),
        })
    }

    /// Records an earlier start time, for runs that compute before writing.
    pub fn started_at(mut self, started: u64) -> Self {
        self.started = started;
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn write(&mut self, name: &str, body: &[u8]) -> RunResult<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, body).map_err(|e| RunError::io(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Writes `<name>.csv` or `<name>.json` and its sidecar.
    pub fn table(&mut self, name: &str, kind: &str, table: &Table) -> RunResult<()> {
        let file = format!("{name}.{}", self.format.extension());
        let body = match self.format {
            Format::Csv => table.to_csv(),
            Format::Json => {
                let mut s = serde_json::to_string_pretty(&table.to_json()).expect("table serialises");
                s.push('\n');
                s
            }
        };
        self.write(&file, body.as_bytes())?;
        let sidecar = Sidecar {
            file: file.clone(),
            kind: kind.to_string(),
            command: self.command.clone(),
            version: VERSION.to_string(),
            config_hash: self.hash.clone(),
            config: self.config.clone(),
            columns: table.columns.clone(),
            rows: table.rows.len(),
        };
        let mut meta = serde_json::to_string_pretty(&sidecar).expect("sidecar serialises");
        meta.push('\n');
        self.write(&format!("{name}.meta.json"), meta.as_bytes())
    }

    /// Writes `manifest.json` listing every file of the run.
    pub fn finish(mut self) -> RunResult<RunManifest> {
        let mut files = self.files.clone();
        files.push("manifest.json".into());
        let manifest = RunManifest {
            command: self.command.clone(),
            config_hash: self.hash.clone(),
            version: VERSION.to_string(),
            started: self.started,
            finished: unix_now(),
            files,
        };
        let mut body = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        body.push('\n');
        self.write("manifest.json", body.as_bytes())?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use fidelity_core::export::Cell;

    #[test]
    fn writes_sidecars_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            out: dir.path().join("run"),
            ..RunConfig::default()
        };
        let mut sink = Sink::create(&cfg, "test").unwrap();
        let mut t = Table::new(&["a"]);
        t.push(vec![Cell::Float(0.5)]);
        sink.table("data", "demo", &t).unwrap();
        let m = sink.finish().unwrap();
        assert_eq!(m.files, vec!["data.csv", "data.meta.json", "manifest.json"]);
        for f in &m.files {
            assert!(cfg.out.join(f).exists(), "{f}");
        }
        let meta: Sidecar =
            serde_json::from_str(&std::fs::read_to_string(cfg.out.join("data.meta.json")).unwrap()).unwrap();
        assert_eq!(meta.config, cfg.to_json());
        assert_eq!(meta.rows, 1);
    }
}
