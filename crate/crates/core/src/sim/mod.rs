//! Desk-scale quadruped simulator and the closed-loop experiment around it.

pub mod control;
pub mod experiment;
pub mod log;
pub mod plant;
pub mod robot;

pub use control::{Controller, GaitSchedule, SwingConfig};
pub use experiment::{run_experiment, ExperimentConfig, SweepConfig};
pub use log::{prediction_errors, RunLog, RunMetrics, RunStatus};
pub use plant::{step_simulation, Plant, SimState};
pub use robot::{RobotDescription, SpineMode};
