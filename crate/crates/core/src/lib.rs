//! Unified decision making and control for urban driving.
//!
//! A potential-field augmented nonlinear MPC decides and controls in one
//! optimal control problem. Around it sit a Gaussian-process motion predictor,
//! an A* + cubic-spline global planner and a closed-loop 2D traffic simulator
//! with an evaluation harness.

pub mod autodiff;
pub mod dynamics;
pub mod error;
pub mod map;
pub mod ocp;
pub mod planner;
pub mod potential;
pub mod prediction;
pub mod sim;

pub use dynamics::{Bounds, ControlInput, VehicleParams, VehicleState};
pub use error::{Error, Result};
