//! On-disk layout of simulation runs: one directory per
//! `(scenario, method, seed)` holding the scenario source, one CSV log per
//! trial, desired-trajectory snapshots and a JSON summary.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::trial::{read_log, write_log};
use crate::sim::{LogRecord, Scenario, ScenarioError, Status, TrialOutcome};
use crate::vehicle::VehicleState;

pub const SUMMARY_FILE: &str = "summary.json";
pub const SCENARIO_FILE: &str = "scenario.toml";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{0}: no runs found")]
    NoRuns(PathBuf),
    #[error("{path}: summary lists {expected} trials but {found} logs exist")]
    TrialCount { path: PathBuf, expected: usize, found: usize },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub method: String,
    pub seed: u64,
    pub trials: usize,
    pub statuses: Vec<Status>,
    pub controller_failures: Vec<usize>,
}

/// A run read back from disk.
#[derive(Debug, Clone)]
pub struct Run {
    pub dir: PathBuf,
    pub scenario: Scenario,
    pub summary: RunSummary,
    pub logs: Vec<Vec<LogRecord>>,
}

pub fn trial_log_name(i: usize) -> String {
    format!("trial_{i:03}.csv")
}

pub fn desired_name(i: usize) -> String {
    format!("trial_{i:03}_desired.csv")
}

#[derive(Debug, Serialize, Deserialize)]
struct DesiredRow {
    step: usize,
    k: usize,
    x_m: f64,
    y_m: f64,
    rho_rad: f64,
}

/// Write a run directory. `scenario_source` is the scenario's TOML text.
pub fn write_run(dir: &Path, scenario_source: &str, outcomes: &[TrialOutcome], seed: u64) -> Result<RunSummary, RunError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let path = dir.join(SCENARIO_FILE);
    fs::write(&path, scenario_source).map_err(io(&path))?;
    for (i, o) in outcomes.iter().enumerate() {
        let path = dir.join(trial_log_name(i));
        let file = fs::File::create(&path).map_err(io(&path))?;
        write_log(&o.log, std::io::BufWriter::new(file)).map_err(|source| RunError::Csv { path, source })?;

        let path = dir.join(desired_name(i));
        let mut w = csv::Writer::from_path(&path).map_err(|source| RunError::Csv {
            path: path.clone(),
            source,
        })?;
        let csv_err = |source| RunError::Csv {
            path: path.clone(),
            source,
        };
        if o.desired.is_empty() {
            w.write_record(["step", "k", "x_m", "y_m", "rho_rad"]).map_err(csv_err)?;
        }
        for snap in &o.desired {
            for (k, z) in snap.states.iter().enumerate() {
                w.serialize(DesiredRow {
                    step: snap.step,
                    k,
                    x_m: z.x,
                    y_m: z.y,
                    rho_rad: z.rho,
                })
                .map_err(csv_err)?;
            }
        }
        w.flush().map_err(io(&path))?;
    }
    let summary = RunSummary {
        scenario: outcomes.first().map(|o| o.scenario.clone()).unwrap_or_default(),
        method: outcomes.first().map(|o| o.method.clone()).unwrap_or_default(),
        seed,
        trials: outcomes.len(),
        statuses: outcomes.iter().map(|o| o.status).collect(),
        controller_failures: outcomes.iter().map(|o| o.controller_failures).collect(),
    };
    let path = dir.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&path, text + "\n").map_err(io(&path))?;
    Ok(summary)
}

pub fn read_log_file(path: &Path) -> Result<Vec<LogRecord>, RunError> {
    let file = fs::File::open(path).map_err(io(path))?;
    read_log(std::io::BufReader::new(file)).map_err(|source| RunError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

/// Desired-trajectory snapshots written next to a trial log, if present.
pub fn read_desired(path: &Path) -> Result<Vec<Vec<VehicleState>>, RunError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path).map_err(|source| RunError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out: Vec<(usize, Vec<VehicleState>)> = Vec::new();
    for row in r.deserialize::<DesiredRow>() {
        let row = row.map_err(|source| RunError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let z = VehicleState::new(row.x_m, row.y_m, row.rho_rad);
        match out.last_mut() {
            Some((step, states)) if *step == row.step => states.push(z),
            _ => out.push((row.step, vec![z])),
        }
    }
    Ok(out.into_iter().map(|(_, s)| s).collect())
}

pub fn read_run(dir: &Path) -> Result<Run, RunError> {
    let path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).map_err(io(&path))?;
    let summary: RunSummary = serde_json::from_str(&text).map_err(|source| RunError::Json { path, source })?;
    let scenario = Scenario::from_path(dir.join(SCENARIO_FILE))?;
    let mut logs = Vec::with_capacity(summary.trials);
    for i in 0..summary.trials {
        logs.push(read_log_file(&dir.join(trial_log_name(i)))?);
    }
    if summary.statuses.len() != summary.trials {
        return Err(RunError::TrialCount {
            path: dir.to_path_buf(),
            expected: summary.trials,
            found: summary.statuses.len(),
        });
    }
    Ok(Run {
        dir: dir.to_path_buf(),
        scenario,
        summary,
        logs,
    })
}

/// `root` itself if it is a run directory, otherwise every run directory
/// below it, sorted by path.
pub fn find_runs(root: &Path) -> Result<Vec<PathBuf>, RunError> {
    if root.join(SUMMARY_FILE).is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(io(&dir))? {
            let p = entry.map_err(io(&dir))?.path();
            if p.is_dir() {
                if p.join(SUMMARY_FILE).is_file() {
                    found.push(p);
                } else {
                    stack.push(p);
                }
            }
        }
    }
    if found.is_empty() {
        return Err(RunError::NoRuns(root.to_path_buf()));
    }
    found.sort();
    Ok(found)
}
