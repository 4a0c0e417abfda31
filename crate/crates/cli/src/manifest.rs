use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::failure::{AtPath, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to re-run a command: its arguments (with the seed made
/// explicit), the resolved configuration, and what it read and wrote.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Working directory that relative paths in `args` resolve against.
    #[serde(default)]
    pub cwd: PathBuf,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub version: String,
    pub started_unix: f64,
    pub wall_clock_seconds: f64,
}

pub struct Recorder {
    manifest: RunManifest,
    clock: Instant,
}

impl Recorder {
    pub fn start(command: &str, args: &[String]) -> Self {
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0.0, |d| d.as_secs_f64());
        Recorder {
            manifest: RunManifest {
                command: command.to_string(),
                cwd: std::env::current_dir().unwrap_or_default(),
                args: args.to_vec(),
                config: serde_json::Value::Null,
                seeds: BTreeMap::new(),
                inputs: BTreeMap::new(),
                outputs: Vec::new(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                started_unix,
                wall_clock_seconds: 0.0,
            },
            clock: Instant::now(),
        }
    }

    pub fn config(&mut self, config: &impl Serialize) -> CliResult<()> {
        self.manifest.config = serde_json::to_value(config)?;
        Ok(())
    }

    /// Record a seed and pin it in the replay arguments, so a later replay
    /// does not depend on the environment.
    pub fn seed(&mut self, name: &str, value: u64) {
        self.manifest.seeds.insert(name.to_string(), value);
        if name == "seed" {
            pin_flag(&mut self.manifest.args, &["--seed"], &value.to_string());
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.manifest
            .inputs
            .insert(name.to_string(), path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.to_path_buf());
    }

    pub fn finish(mut self, dir: &Path) -> CliResult<PathBuf> {
        self.manifest.wall_clock_seconds = self.clock.elapsed().as_secs_f64();
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(&path, text + "\n").at(&path)?;
        Ok(path)
    }
}

/// Replace every `flag value` / `flag=value` occurrence of any spelling in
/// `flags` with one trailing pair using the first spelling.
pub fn pin_flag(args: &mut Vec<String>, flags: &[&str], value: &str) {
    let mut out = Vec::with_capacity(args.len() + 2);
    let mut skip = false;
    for a in args.iter() {
        if skip {
            skip = false;
            continue;
        }
        if flags.contains(&a.as_str()) {
            skip = true;
            continue;
        }
        if flags.iter().any(|f| a.starts_with(&format!("{f}="))) {
            continue;
        }
        out.push(a.clone());
    }
    out.push(flags[0].to_string());
    out.push(value.to_string());
    *args = out;
}

pub fn load(path: &Path) -> CliResult<RunManifest> {
    let text = std::fs::read_to_string(path).at(path)?;
    serde_json::from_str(&text).at(path)
}
