use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::Serialize;

pub const MANIFEST_SCHEMA: u32 = 1;

/// What one command read, wrote and ran with. Written once per run next to its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub args: Vec<String>,
    pub config_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: BTreeMap<String, PathBuf>,
    pub tool_versions: BTreeMap<String, String>,
    pub started_at: String,
    pub finished_at: Option<String>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        let mut tool_versions = BTreeMap::new();
        tool_versions.insert("docent".to_string(), env!("CARGO_PKG_VERSION").to_string());
        RunManifest {
            schema_version: MANIFEST_SCHEMA,
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            config_path: None,
            seed: None,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            tool_versions,
            started_at: now(),
            finished_at: None,
        }
    }

    pub fn input(&mut self, name: &str, p: &Path) {
        self.inputs.insert(name.to_string(), p.to_path_buf());
    }

    pub fn output(&mut self, name: &str, p: &Path) {
        self.outputs.insert(name.to_string(), p.to_path_buf());
    }

    pub fn tool(&mut self, name: &str, version: impl Into<String>) {
        self.tool_versions.insert(name.to_string(), version.into());
    }

    /// Writes `{dir}/{command}.manifest.json`.
    pub fn finish(mut self, dir: &Path) -> docent::Result<PathBuf> {
        self.finished_at = Some(now());
        let path = dir.join(format!("{}.manifest.json", self.command));
        std::fs::create_dir_all(dir).map_err(|e| docent::Error::io(dir, e))?;
        let mut text = serde_json::to_string_pretty(&self)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| docent::Error::io(&path, e))?;
        Ok(path)
    }
}
