//! Deterministic 2D goal-navigation simulator.

pub mod scenario;
pub mod trial;
pub mod world;

pub use scenario::{Motion, Obstacle, RaySensorConfig, Route, Scenario, ScenarioError, VehicleConfig};
pub use trial::{
    run_trial, run_trials, ControlContext, ControlDecision, Controller, ControllerError, Event, LogRecord, Status,
    TrialOptions, TrialOutcome,
};
pub use world::{offset_reference_slice, reference_slice, sense, World};
