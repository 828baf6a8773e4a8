//! Run every scenario file in a directory and aggregate the verdicts.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::parse_config;
use crate::scenario::{run_scenario, RunError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Passed,
    Failed,
    ConfigError,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioSummary {
    pub file: String,
    pub name: String,
    pub mode: Option<String>,
    pub status: Status,
    pub failed_assertions: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Summary {
    pub scenarios: Vec<ScenarioSummary>,
    pub passed: usize,
    pub failed: usize,
}

impl Summary {
    pub fn all_passed(&self) -> bool {
        self.failed == 0
    }

    pub fn has_config_errors(&self) -> bool {
        self.scenarios.iter().any(|s| s.status == Status::ConfigError)
    }

    pub fn table(&self) -> String {
        let w = self.scenarios.iter().map(|s| s.name.len()).max().unwrap_or(4).max(8);
        let mut out = format!("{:<w$}  {:<12}  {}\n", "scenario", "mode", "status");
        for s in &self.scenarios {
            let status = match s.status {
                Status::Passed => "pass".to_string(),
                Status::Failed => format!("FAIL ({})", s.failed_assertions.join("; ")),
                Status::ConfigError => format!("CONFIG ERROR: {}", s.error.as_deref().unwrap_or("")),
            };
            out += &format!("{:<w$}  {:<12}  {}\n", s.name, s.mode.as_deref().unwrap_or("-"), status);
        }
        out += &format!("{} passed, {} failed\n", self.passed, self.failed);
        out
    }
}

/// Sorted `*.toml` files of a directory.
pub fn scenario_files(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "toml"))
        .collect();
    files.sort();
    Ok(files)
}

/// Each scenario writes into `out_root/<file stem>`, so no two share a
/// directory. `seed` overrides every config's seed when given.
pub fn verify_all(
    dir: &Path,
    out_root: &Path,
    seed: Option<u64>,
    mut progress: impl FnMut(&ScenarioSummary),
) -> std::io::Result<Summary> {
    std::fs::create_dir_all(out_root)?;
    let mut summary = Summary::default();
    for path in scenario_files(dir)? {
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().to_string();
        let file = path.file_name().unwrap_or_default().to_string_lossy().to_string();
        let mut entry = ScenarioSummary {
            file,
            name: stem.clone(),
            mode: None,
            status: Status::ConfigError,
            failed_assertions: Vec::new(),
            error: None,
        };
        match parse_config(&path) {
            Err(e) => entry.error = Some(e.to_string()),
            Ok(mut cfg) => {
                if seed.is_some() {
                    cfg.numerics.seed = seed;
                }
                entry.mode = serde_json::to_value(cfg.mode).ok().and_then(|v| v.as_str().map(String::from));
                match run_scenario(&cfg, &cfg.name_or(&stem), &out_root.join(&stem)) {
                    Ok(m) => {
                        entry.failed_assertions = m.failed().iter().map(|a| a.name.clone()).collect();
                        entry.status = if m.passed { Status::Passed } else { Status::Failed };
                    }
                    Err(e @ RunError::Io(_)) => {
                        entry.status = Status::Failed;
                        entry.error = Some(e.to_string());
                    }
                    Err(e) => entry.error = Some(e.to_string()),
                }
            }
        }
        if entry.status == Status::Passed {
            summary.passed += 1;
        } else {
            summary.failed += 1;
        }
        progress(&entry);
        summary.scenarios.push(entry);
    }
    let mut text = serde_json::to_string_pretty(&summary).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(out_root.join("summary.json"), text)?;
    Ok(summary)
}
