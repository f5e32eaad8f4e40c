//! Closed-loop trials: the controller interface, the trial loop and the
//! per-step CSV log.

use std::io::{Read, Write};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::scenario::Scenario;
use super::world::{cross_track, World};
use crate::memory::{AugmentedMemory, MemoryEntry, Observation};
use crate::vehicle::{ControlInput, VehicleState};
use crate::vision::{DesiredTrajectory, SceneDynamics};

#[derive(Debug, Error)]
#[error("{0}")]
pub struct ControllerError(pub String);

impl From<crate::nmpc::NmpcError> for ControllerError {
    fn from(e: crate::nmpc::NmpcError) -> Self {
        ControllerError(format!("solver: {e}"))
    }
}

impl From<crate::vision::VisionError> for ControllerError {
    fn from(e: crate::vision::VisionError) -> Self {
        ControllerError(format!("scene dynamics: {e}"))
    }
}

/// What a controller sees on each tick.
pub struct ControlContext<'a> {
    pub scenario: &'a Scenario,
    pub time: f64,
    pub state: VehicleState,
    pub observation: &'a Observation,
    pub memory: &'a AugmentedMemory,
    /// Control applied on the previous tick; zero before the first.
    pub last_control: ControlInput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlDecision {
    pub control: ControlInput,
    pub scene: Option<SceneDynamics>,
    pub desired: Option<DesiredTrajectory>,
}

impl ControlDecision {
    pub fn bare(control: ControlInput) -> Self {
        Self {
            control,
            scene: None,
            desired: None,
        }
    }
}

pub trait Controller {
    fn name(&self) -> &str;

    /// Number of memory entries the runner keeps for this controller.
    fn history(&self) -> usize {
        4
    }

    fn reset(&mut self, scenario: &Scenario);

    fn control(&mut self, ctx: &ControlContext) -> Result<ControlDecision, ControllerError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Crash,
    Goal,
    Timeout,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Crash => "crash",
            Status::Goal => "goal",
            Status::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    #[default]
    #[serde(rename = "")]
    None,
    /// The controller failed and the braking fallback was applied.
    SafeStop,
    Crash,
    Goal,
    Timeout,
}

impl Event {
    pub fn terminal(&self) -> Option<Status> {
        match self {
            Event::Crash => Some(Status::Crash),
            Event::Goal => Some(Status::Goal),
            Event::Timeout => Some(Status::Timeout),
            _ => None,
        }
    }
}

/// One logged step: the state after applying `control`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub time_s: f64,
    pub x_m: f64,
    pub y_m: f64,
    pub rho_rad: f64,
    pub v_cmd: f64,
    pub omega_cmd: f64,
    pub c: Option<f64>,
    pub w: Option<f64>,
    pub cross_track_m: f64,
    pub solve_ms: f64,
    pub event: Event,
}

impl LogRecord {
    pub fn state(&self) -> VehicleState {
        VehicleState {
            x: self.x_m,
            y: self.y_m,
            rho: self.rho_rad,
        }
    }

    pub fn control(&self) -> ControlInput {
        ControlInput::new(self.v_cmd, self.omega_cmd)
    }
}

/// Desired trajectory captured at a given step, for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct DesiredSnapshot {
    pub step: usize,
    pub states: Vec<VehicleState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub scenario: String,
    pub method: String,
    pub seed: u64,
    pub status: Status,
    pub steps: usize,
    pub log: Vec<LogRecord>,
    pub controller_failures: usize,
    pub desired: Vec<DesiredSnapshot>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOptions {
    /// Record controller wall-clock time; off keeps logs reproducible.
    pub timing: bool,
    /// Number of evenly spaced desired-trajectory snapshots to keep.
    pub snapshots: usize,
}

impl Default for TrialOptions {
    fn default() -> Self {
        Self {
            timing: false,
            snapshots: 3,
        }
    }
}

/// Brake and straighten as hard as the rate limits allow.
pub fn safe_stop(scenario: &Scenario, last: &ControlInput) -> ControlInput {
    scenario.limits().project(Some(last), &ControlInput::ZERO, scenario.dt)
}

/// Sense, remember, decide and step until crash, goal or timeout.
pub fn run_trial(scenario: &Scenario, controller: &mut dyn Controller, seed: u64, opts: &TrialOptions) -> TrialOutcome {
    let mut world = World::new(scenario, seed);
    let mut memory = AugmentedMemory::new(controller.history());
    controller.reset(scenario);
    let snapshot_every = if opts.snapshots == 0 {
        usize::MAX
    } else {
        let expected = (scenario.time_limit / scenario.dt).ceil().max(1.0) as usize;
        (expected / opts.snapshots).max(1)
    };

    let mut outcome = TrialOutcome {
        scenario: scenario.name.clone(),
        method: controller.name().to_string(),
        seed,
        status: Status::Timeout,
        steps: 0,
        log: Vec::new(),
        controller_failures: 0,
        desired: Vec::new(),
    };
    if world.collided() {
        outcome.status = Status::Crash;
        return outcome;
    }
    if world.reached_goal() {
        outcome.status = Status::Goal;
        return outcome;
    }

    let mut last = ControlInput::ZERO;
    while world.time() < scenario.time_limit {
        let observation = world.sense();
        let entry = MemoryEntry::new(observation.clone(), world.vehicle, last.v_cmd);
        memory
            .push(entry)
            .expect("simulation clock is strictly increasing");
        let ctx = ControlContext {
            scenario,
            time: world.time(),
            state: world.vehicle,
            observation: &observation,
            memory: &memory,
            last_control: last,
        };
        let started = Instant::now();
        let result = controller.control(&ctx);
        let solve_ms = if opts.timing {
            started.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };

        let (u, scene, mut event) = match result {
            Ok(d) => {
                if let Some(desired) = d.desired {
                    if world.steps % snapshot_every == 0 && outcome.desired.len() < opts.snapshots {
                        outcome.desired.push(DesiredSnapshot {
                            step: world.steps,
                            states: desired.states,
                        });
                    }
                }
                (d.control, d.scene, Event::None)
            }
            Err(_) => {
                outcome.controller_failures += 1;
                (safe_stop(scenario, &last), None, Event::SafeStop)
            }
        };

        world.step(&u);
        last = u;
        let status = if world.collided() {
            Some(Status::Crash)
        } else if world.reached_goal() {
            Some(Status::Goal)
        } else if world.time() >= scenario.time_limit {
            Some(Status::Timeout)
        } else {
            None
        };
        if let Some(s) = status {
            event = match s {
                Status::Crash => Event::Crash,
                Status::Goal => Event::Goal,
                Status::Timeout => Event::Timeout,
            };
        }
        let p = world.vehicle;
        outcome.log.push(LogRecord {
            time_s: world.time(),
            x_m: p.x,
            y_m: p.y,
            rho_rad: p.rho,
            v_cmd: u.v_cmd,
            omega_cmd: u.omega_cmd,
            c: scene.map(|d| d.c),
            w: scene.map(|d| d.w),
            cross_track_m: cross_track(scenario, p.position()),
            solve_ms,
            event,
        });
        if let Some(s) = status {
            outcome.status = s;
            break;
        }
    }
    outcome.steps = outcome.log.len();
    outcome
}

/// splitmix64 over the parts, for independent per-trial streams.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x243F_6A88_85A3_08D3;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// Run `trials` independent trials in parallel. Trial `i` is seeded from
/// `(seed, scenario.seed, i)` and results come back in trial order.
pub fn run_trials<F>(scenario: &Scenario, make: F, trials: usize, seed: u64, opts: &TrialOptions) -> Vec<TrialOutcome>
where
    F: Fn() -> Box<dyn Controller> + Sync,
{
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut controller = make();
            run_trial(
                scenario,
                controller.as_mut(),
                derive_seed(&[seed, scenario.seed, i as u64]),
                opts,
            )
        })
        .collect()
}

pub const LOG_HEADER: [&str; 11] = [
    "time_s",
    "x_m",
    "y_m",
    "rho_rad",
    "v_cmd",
    "omega_cmd",
    "c",
    "w",
    "cross_track_m",
    "solve_ms",
    "event",
];

pub fn write_log<W: Write>(log: &[LogRecord], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    if log.is_empty() {
        w.write_record(LOG_HEADER)?;
    }
    for r in log {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log<R: Read>(input: R) -> Result<Vec<LogRecord>, csv::Error> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().ne(LOG_HEADER) {
        return Err(csv::Error::from(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("unexpected log columns: {}", headers.iter().collect::<Vec<_>>().join(",")),
        )));
    }
    r.deserialize().collect()
}
