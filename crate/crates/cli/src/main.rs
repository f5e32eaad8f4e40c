use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use lvd_nmpc::baselines::{DirectPolicy, DirectPolicyConfig, DwaNmpc, DwaNmpcConfig};
use lvd_nmpc::lvd::LvdController;
use lvd_nmpc::metrics::{self, MetricsReport, OfflineRecord, TrialMetrics};
use lvd_nmpc::policy::{train, QPolicy, TrainConfig};
use lvd_nmpc::runs::{self, Run};
use lvd_nmpc::sim::{run_trials, Controller, Scenario, TrialOptions, TrialOutcome};

#[derive(Parser)]
#[command(name = "lvd-nmpc", version, about = "Vision-dynamics NMPC workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    #[value(name = "lvd-nmpc")]
    LvdNmpc,
    #[value(name = "dwa-nmpc")]
    DwaNmpc,
    Direct,
}

impl Method {
    const ALL: [Method; 3] = [Method::LvdNmpc, Method::DwaNmpc, Method::Direct];

    fn name(self) -> &'static str {
        match self {
            Method::LvdNmpc => "lvd-nmpc",
            Method::DwaNmpc => "dwa-nmpc",
            Method::Direct => "direct",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run closed-loop trials and write one CSV log per trial.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, env = "LVD_NMPC_OUT")]
        out: PathBuf,
        /// Trained estimator checkpoint, required for lvd-nmpc.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Record controller wall-clock time (logs are then not reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Train the scene-dynamics estimator on every scenario in a directory.
    Train {
        #[arg(long)]
        scenario_set: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Aggregate simulation logs into a per-method report.
    Evaluate {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Speed-weighted position error of an estimated trajectory.
    OfflineEval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a trial log over its scenario as SVG.
    Plot {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to scenario.toml next to the log.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Run every method on a scenario set and write the comparison table.
    Compare {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value = "scenarios/gridsim")]
        scenario_set: PathBuf,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Keep the trial logs here.
        #[arg(long)]
        runs: Option<PathBuf>,
    },
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            scenario,
            method,
            trials,
            seed,
            out,
            policy,
            timing,
        } => {
            let source = fs::read_to_string(&scenario).with_context(|| format!("reading {}", scenario.display()))?;
            let s = Scenario::from_toml(&source).with_context(|| scenario.display().to_string())?;
            let policy = load_policy(method, policy.as_deref(), &s)?;
            let outcomes = simulate(&s, method, policy, trials, seed, timing)?;
            let summary = runs::write_run(&out, &source, &outcomes, seed)?;
            let goals = summary.statuses.iter().filter(|s| s.as_str() == "goal").count();
            let crashes = summary.statuses.iter().filter(|s| s.as_str() == "crash").count();
            println!(
                "{} on {}: {goals}/{trials} goal, {crashes} crash; logs in {}",
                method.name(),
                s.name,
                out.display()
            );
        }
        Command::Train {
            scenario_set,
            config,
            out,
            seed,
        } => {
            let mut cfg = match &config {
                Some(p) => {
                    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    TrainConfig::from_toml(&text).with_context(|| p.display().to_string())?
                }
                None => TrainConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let scenarios = load_scenario_set(&scenario_set)?;
            let (policy, log) = train(&scenarios.iter().map(|(_, s, _)| s.clone()).collect::<Vec<_>>(), &cfg)?;
            policy.save(&out)?;
            let log_path = out.with_extension("train.csv");
            fs::write(&log_path, log.to_csv()?).with_context(|| format!("writing {}", log_path.display()))?;
            let q = log.q_returns();
            if q.len() >= 40 {
                println!(
                    "mean return first 20: {:.3}, last 20: {:.3}",
                    log.mean_return(0..20),
                    log.mean_return(q.len() - 20..q.len())
                );
            }
            println!("checkpoint {}, training log {}", out.display(), log_path.display());
        }
        Command::Evaluate { logs, out } => {
            let found = runs::find_runs(&logs)?;
            let loaded = found.iter().map(|d| runs::read_run(d)).collect::<Result<Vec<_>, _>>()?;
            let reports = evaluate(&loaded)?;
            write_reports(&out, &reports)?;
        }
        Command::OfflineEval { dataset, out } => {
            let mut r = csv::Reader::from_path(&dataset).with_context(|| format!("reading {}", dataset.display()))?;
            let records: Vec<OfflineRecord> = r
                .deserialize()
                .collect::<Result<_, _>>()
                .with_context(|| dataset.display().to_string())?;
            let e = metrics::e_xy(&records).with_context(|| dataset.display().to_string())?;
            let report = OfflineReport {
                dataset: dataset.display().to_string(),
                records: records.len(),
                e_xy: e,
            };
            write_offline(&out, &report)?;
            println!("e_xy = {e:.6} over {} records", records.len());
        }
        Command::Plot { log, out, scenario } => {
            let scenario_path = match scenario {
                Some(p) => p,
                None => log.parent().unwrap_or(Path::new(".")).join(runs::SCENARIO_FILE),
            };
            let s = Scenario::from_path(&scenario_path)?;
            let records = runs::read_log_file(&log)?;
            let stem = log.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let desired = runs::read_desired(&log.with_file_name(format!("{stem}_desired.csv")))?;
            let svg = lvd_nmpc::plot::render_svg(&s, &records, &desired);
            fs::write(&out, svg).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Compare {
            out,
            policy,
            scenario_set,
            trials,
            seed,
            runs: keep,
        } => {
            let scenarios = load_scenario_set(&scenario_set)?;
            let policy = Arc::new(QPolicy::load(&policy)?);
            let label = set_label(&scenario_set);
            let mut groups = Vec::new();
            for method in Method::ALL {
                let mut trial_metrics = Vec::new();
                for (path, s, source) in &scenarios {
                    let p = (method == Method::LvdNmpc).then(|| policy.clone());
                    if let Some(p) = &p {
                        p.check_features(&p.lvd.features(s))
                            .with_context(|| format!("checkpoint does not fit {}", path.display()))?;
                    }
                    let outcomes = simulate(s, method, p, trials, seed, true)?;
                    if let Some(dir) = &keep {
                        runs::write_run(&dir.join(method.name()).join(&s.name), source, &outcomes, seed)?;
                    }
                    trial_metrics.extend(outcomes.iter().map(|o| metrics::outcome_metrics(o, s)));
                }
                groups.push((label.clone(), method.name().to_string(), trial_metrics));
            }
            let reports = metrics::aggregate(&groups)?;
            write_reports(&out, &reports)?;
            for r in &reports {
                println!(
                    "{:9} crash {:5.1}%  goal {:5.1}%  speed {:.2} m/s  e_xy {:.3}  e_c {:.3}  {:.2} ms",
                    r.method, r.crash_pct, r.goal_pct, r.avg_speed_mps, r.e_xy_mean, r.e_c_mean, r.processing_ms_mean
                );
            }
        }
    }
    Ok(())
}

fn load_policy(method: Method, path: Option<&Path>, s: &Scenario) -> Result<Option<Arc<QPolicy>>> {
    if method != Method::LvdNmpc {
        return Ok(None);
    }
    let Some(path) = path else {
        bail!("lvd-nmpc needs a trained checkpoint (--policy)");
    };
    let p = QPolicy::load(path)?;
    p.check_features(&p.lvd.features(s))
        .with_context(|| format!("checkpoint {} does not fit scenario {}", path.display(), s.name))?;
    Ok(Some(Arc::new(p)))
}

fn simulate(
    s: &Scenario,
    method: Method,
    policy: Option<Arc<QPolicy>>,
    trials: usize,
    seed: u64,
    timing: bool,
) -> Result<Vec<TrialOutcome>> {
    let opts = TrialOptions {
        timing,
        ..TrialOptions::default()
    };
    Ok(match method {
        Method::LvdNmpc => {
            let p = policy.context("lvd-nmpc needs a trained checkpoint")?;
            run_trials(s, move || Box::new(LvdController::learned(p.clone())) as Box<dyn Controller>, trials, seed, &opts)
        }
        Method::DwaNmpc => run_trials(s, || Box::new(DwaNmpc::new(DwaNmpcConfig::default())), trials, seed, &opts),
        Method::Direct => run_trials(
            s,
            || Box::new(DirectPolicy::new(DirectPolicyConfig::default())),
            trials,
            seed,
            &opts,
        ),
    })
}

/// Every `*.toml` scenario in `dir`, sorted by file name.
fn load_scenario_set(dir: &Path) -> Result<Vec<(PathBuf, Scenario, String)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    paths.sort();
    ensure!(!paths.is_empty(), "{}: no scenario files", dir.display());
    paths
        .into_iter()
        .map(|p| {
            let source = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            let s = Scenario::from_toml(&source).with_context(|| p.display().to_string())?;
            Ok((p, s, source))
        })
        .collect()
}

fn set_label(dir: &Path) -> String {
    dir.file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("scenarios")
        .to_string()
}

/// One report row per method; the scenario column joins the scenario names.
fn evaluate(runs: &[Run]) -> Result<Vec<MetricsReport>> {
    let mut methods: Vec<String> = runs.iter().map(|r| r.summary.method.clone()).collect();
    methods.sort();
    methods.dedup();
    let mut groups = Vec::new();
    for m in methods {
        let mine: Vec<&Run> = runs.iter().filter(|r| r.summary.method == m).collect();
        let mut names: Vec<&str> = mine.iter().map(|r| r.scenario.name.as_str()).collect();
        names.sort();
        names.dedup();
        let trials: Vec<TrialMetrics> = mine
            .iter()
            .flat_map(|r| {
                r.summary
                    .statuses
                    .iter()
                    .zip(&r.logs)
                    .map(|(st, log)| metrics::trial_metrics(*st, log, &r.scenario))
            })
            .collect();
        groups.push((names.join("+"), m, trials));
    }
    Ok(metrics::aggregate(&groups)?)
}

fn write_reports(out: &Path, reports: &[MetricsReport]) -> Result<()> {
    let csv = || metrics::reports_to_csv(reports);
    match out.extension().and_then(|e| e.to_str()) {
        Some("json") => write(out, metrics::reports_to_json(reports))?,
        Some("csv") => write(out, csv()?)?,
        _ => {
            write(&out.with_extension("csv"), csv()?)?;
            write(&out.with_extension("json"), metrics::reports_to_json(reports))?;
        }
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct OfflineReport {
    dataset: String,
    records: usize,
    e_xy: f64,
}

fn write_offline(out: &Path, report: &OfflineReport) -> Result<()> {
    let json = || {
        serde_json::to_string_pretty(&serde_json::json!({
            "metadata": metrics::report_metadata(),
            "report": report,
        }))
    };
    let csv = || -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(report)?;
        Ok(String::from_utf8(w.into_inner()?)?)
    };
    match out.extension().and_then(|e| e.to_str()) {
        Some("json") => write(out, json()?)?,
        Some("csv") => write(out, csv()?)?,
        _ => {
            write(&out.with_extension("csv"), csv()?)?;
            write(&out.with_extension("json"), json()?)?;
        }
    }
    Ok(())
}

fn write(path: &Path, text: String) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
