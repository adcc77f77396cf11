//! Closed-loop 2D traffic simulation and the evaluation harness.

pub mod controller;
pub mod events;
pub mod scenario;
pub mod training;
pub mod trial;
pub mod world;

pub use controller::Controller;
pub use events::{detect_events, find_leader, footprint, footprints_overlap, Event, LeaderInfo, Obstacle, TrvKind};
pub use scenario::{CompiledScenario, EventParams, LightPhase, LightSpec, RandomizeSpec, Scenario, BUILTIN_SCENARIOS};
pub use training::{default_predictors, train_predictors, Predictors, TrainingOptions};
pub use trial::{run_batch, run_trial, BatchReport, TrialConfig, TrialMetrics, TrialResult};
pub use world::{idm_accel, step_world, AutopilotParams, WorldState};
