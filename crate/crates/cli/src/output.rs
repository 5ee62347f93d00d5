//! Output directory handling and the run manifest.

use std::io::{self, Write};
use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::CliError;

#[derive(Debug, Serialize)]
struct FileEntry {
    name: String,
    bytes: usize,
}

pub struct RunOutput {
    dir: PathBuf,
    hash: String,
    files: Vec<FileEntry>,
    started: SystemTime,
    clock: Instant,
}

impl RunOutput {
    pub fn create(dir: PathBuf, hash: String) -> Result<Self, CliError> {
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir, hash, files: Vec::new(), started: SystemTime::now(), clock: Instant::now() })
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Render into memory, then write `name` in one go.
    pub fn write(&mut self, name: &str, render: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> Result<(), CliError> {
        let mut buf = Vec::new();
        render(&mut buf)?;
        let path = self.dir.join(name);
        std::fs::write(&path, &buf).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        self.files.push(FileEntry { name: name.to_string(), bytes: buf.len() });
        Ok(())
    }

    /// Pretty JSON object carrying a `config_hash` key.
    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let stamped = stamp(&self.hash, value)?;
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, &stamped).map_err(io::Error::other)?;
            writeln!(w)
        })
    }

    /// Hash-stamped CSV: header row, then rows already rendered as cells.
    pub fn write_csv(&mut self, name: &str, header: &str, rows: &[Vec<String>]) -> Result<(), CliError> {
        let hash = self.hash.clone();
        self.write(name, |w| {
            writeln!(w, "# config_hash: {hash}")?;
            writeln!(w, "{header}")?;
            for row in rows {
                writeln!(w, "{}", row.join(","))?;
            }
            Ok(())
        })
    }

    /// Write `manifest.json`. Only `wall_clock` differs between identical reruns.
    pub fn finish(mut self, command: &str, seed: u64, status: &str) -> Result<(), CliError> {
        let started_unix_ms = self.started.duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0);
        let files = std::mem::take(&mut self.files);
        let manifest = json!({
            "command": command,
            "seed": seed,
            "status": status,
            "versions": {
                "sticky_mfg": env!("CARGO_PKG_VERSION"),
                "config_schema": crate::config::SCHEMA_VERSION,
            },
            "files": files,
            "wall_clock": {
                "started_unix_ms": started_unix_ms,
                "elapsed_seconds": self.clock.elapsed().as_secs_f64(),
            },
        });
        self.write_json("manifest.json", &manifest)
    }
}

fn stamp<T: Serialize>(hash: &str, value: &T) -> Result<Value, CliError> {
    let body = serde_json::to_value(value).map_err(|e| CliError::Io(e.to_string()))?;
    let mut out = serde_json::Map::new();
    out.insert("config_hash".into(), Value::String(hash.to_string()));
    match body {
        Value::Object(map) => out.extend(map),
        other => {
            out.insert("data".into(), other);
        }
    }
    Ok(Value::Object(out))
}
