use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::{CliError, Command};

/// Collects output tables in memory and writes them, plus the manifest, from
/// the calling thread once the computation has finished.
pub struct OutputDir {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
    summary: toml::Table,
    started: Instant,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        if !dir.is_dir() {
            return Err(CliError::Usage(format!("{} is not a directory", dir.display())));
        }
        Ok(OutputDir { dir: dir.to_path_buf(), files: Vec::new(), summary: toml::Table::new(), started: Instant::now() })
    }

    pub fn table(&mut self, name: &str, header: &[String], rows: Vec<Vec<String>>) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?;
        self.files.push((name.to_string(), bytes));
        Ok(())
    }

    pub fn raw(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn note(&mut self, key: &str, value: impl Into<toml::Value>) {
        self.summary.insert(key.to_string(), value.into());
    }

    pub fn finish(self, command: &Command, seed: u64) -> Result<(), CliError> {
        let mut outputs = Vec::new();
        for (name, bytes) in &self.files {
            fs::write(self.dir.join(name), bytes)?;
            outputs.push(name.clone());
        }
        let manifest = Manifest {
            command: command.name(),
            seed,
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
            versions: Versions {
                chmm: env!("CARGO_PKG_VERSION"),
                model_format: chmm_core::model::FORMAT_VERSION,
            },
            outputs,
            summary: self.summary,
            config: command,
        };
        let text = toml::to_string(&manifest).map_err(|e| CliError::Usage(format!("manifest: {e}")))?;
        fs::write(self.dir.join("manifest.toml"), text)?;
        Ok(())
    }
}

#[derive(Serialize)]
struct Versions {
    chmm: &'static str,
    model_format: u32,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'static str,
    seed: u64,
    wall_time_seconds: f64,
    versions: Versions,
    outputs: Vec<String>,
    summary: toml::Table,
    config: &'a Command,
}

/// Shortest representation that parses back to the same value.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn strings<const N: usize>(names: [&str; N]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}
