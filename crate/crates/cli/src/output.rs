use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Shortest round-trip text for a float; stable across runs.
pub fn fmt(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:?}")
    }
}

/// Pretty JSON with sorted keys (serde_json maps are ordered by key).
pub fn sorted_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_string_pretty(&v)?)
}

fn versions() -> Value {
    json!({ "wasep": VERSION, "rng": "ChaCha8" })
}

/// Writes CSV files stamped with the manifest hash and, at the end, the
/// manifest itself.
pub struct Output {
    dir: PathBuf,
    hash: String,
    files: Vec<String>,
}

impl Output {
    pub fn new(dir: &Path, config: &RunConfig) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        // Only deterministic inputs enter the hash, so reruns reproduce it.
        let stamped = json!({
            "command": config.command.name(),
            "config": config,
            "versions": versions(),
            "seed": config.seed,
        });
        let hash = hex::encode(Sha256::digest(sorted_json(&stamped)?.as_bytes()));
        Ok(Self { dir: dir.to_path_buf(), hash, files: Vec::new() })
    }

    pub fn csv<I>(&mut self, name: &str, header: &[&str], rows: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let path = self.dir.join(name);
        let mut file = File::create(&path)?;
        writeln!(file, "# sha256:{}", self.hash)?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn manifest(&self, config: &RunConfig, headline: &Value, wall_time: f64, threads: usize) -> Result<PathBuf, CliError> {
        let manifest = json!({
            "command": config.command.name(),
            "config": config,
            "versions": versions(),
            "seed": config.seed,
            "manifest_hash": self.hash,
            "wall_time_s": wall_time,
            "threads": threads,
            "files": self.files,
            "headline": headline,
        });
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, sorted_json(&manifest)? + "\n")?;
        Ok(path)
    }
}
