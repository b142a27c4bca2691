//! Run directories: every command that produces results records the resolved
//! configuration, seed, source version and metrics next to them.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::RunConfig;
use crate::{fail, CliResult};

#[derive(Serialize)]
struct RunInfo<'a> {
    command: &'a str,
    args: Vec<String>,
    seed: u64,
    git_describe: String,
    version: &'static str,
    started_unix: u64,
}

/// `git describe` of the source tree the binary was started from, or `unknown`.
pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// Creates `dir` and writes `config.json`, `seed.txt` and `run.json`.
pub fn init(dir: &Path, command: &str, cfg: &RunConfig) -> CliResult {
    fs::create_dir_all(dir).map_err(fail)?;
    write_json(&dir.join("config.json"), cfg)?;
    fs::write(dir.join("seed.txt"), format!("{}\n", cfg.seed)).map_err(fail)?;
    let info = RunInfo {
        command,
        args: std::env::args().collect(),
        seed: cfg.seed,
        git_describe: git_describe(),
        version: env!("CARGO_PKG_VERSION"),
        started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    };
    write_json(&dir.join("run.json"), &info)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(fail)?;
    fs::write(path, text + "\n").map_err(fail)
}
