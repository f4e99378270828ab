//! Output directory handling: CSV files with a config-hash header and a versioned summary.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::CliResult;

pub const SCHEMA: u32 = 1;
/// Replaces the default output directory when `--out` is absent.
pub const OUT_ENV: &str = "MEANFIELD_OUT";

/// SHA-256 of the command name and the effective configuration.
pub fn config_hash(command: &str, cfg: &ExperimentConfig) -> String {
    let canonical = serde_json::to_string(&json!({ "command": command, "config": cfg })).expect("config serializes");
    Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Output {
    pub dir: PathBuf,
    pub command: String,
    pub hash: String,
    files: Vec<String>,
}

impl Output {
    pub fn create(dir: &Path, command: &str, cfg: &ExperimentConfig) -> CliResult<Self> {
        fs::create_dir_all(dir)?;
        Ok(Output { dir: dir.to_path_buf(), command: command.into(), hash: config_hash(command, cfg), files: Vec::new() })
    }

    /// Writes `name` as `# config_hash=...` followed by whatever `body` emits.
    pub fn csv(&mut self, name: &str, body: impl FnOnce(&mut dyn Write) -> CliResult<()>) -> CliResult<()> {
        let mut w = BufWriter::new(fs::File::create(self.dir.join(name))?);
        writeln!(w, "# config_hash={}", self.hash)?;
        body(&mut w)?;
        w.flush()?;
        self.files.push(name.into());
        Ok(())
    }

    /// Writes `summary.json` and returns the one-line stdout summary.
    pub fn finish(mut self, status: &str, results: impl Serialize) -> CliResult<String> {
        let results = serde_json::to_value(results).map_err(std::io::Error::other)?;
        self.files.push("summary.json".into());
        let summary = json!({
            "schema": SCHEMA,
            "command": self.command,
            "config_hash": self.hash,
            "status": status,
            "files": self.files,
            "results": results,
        });
        let text = serde_json::to_string_pretty(&summary).map_err(std::io::Error::other)?;
        fs::write(self.dir.join("summary.json"), text + "\n")?;
        let mut line = Map::new();
        line.insert("schema".into(), json!(SCHEMA));
        line.insert("command".into(), json!(self.command));
        line.insert("status".into(), json!(status));
        line.insert("out".into(), json!(self.dir.display().to_string()));
        line.insert("config_hash".into(), json!(self.hash));
        if let Value::Object(r) = &results {
            for (k, v) in r {
                if !v.is_array() && !v.is_object() {
                    line.insert(k.clone(), v.clone());
                }
            }
        }
        Ok(Value::Object(line).to_string())
    }
}

/// `--out`, else the environment override, else `out/<command>`.
pub fn resolve_dir(flag: Option<&Path>, command: &str) -> PathBuf {
    match flag {
        Some(p) => p.to_path_buf(),
        None => match std::env::var_os(OUT_ENV) {
            Some(d) if !d.is_empty() => PathBuf::from(d).join(command),
            _ => PathBuf::from("out").join(command),
        },
    }
}
