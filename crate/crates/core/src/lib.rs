//! Online gradient descent control of linear dynamical systems
//! `x_t = A x_{t-1} + B u_t` under time-varying tracking costs, with a
//! hindsight oracle for regret and an explicit regret certificate.
//!
//! The controller runs two gradient iterations: one on the input cost,
//! and one on the state cost evaluated at a `mu`-step-ahead prediction,
//! where `mu` is the controllability index. The state correction is mapped
//! back to inputs through the minimum-norm inverse of the controllability
//! matrix.

pub mod certificate;
pub mod controller;
pub mod cost;
pub mod error;
pub mod linalg;
pub mod oracle;
pub mod report;
pub mod sim;
pub mod system;

pub use nalgebra::{DMatrix, DVector};

pub use certificate::{
    compute_constants, lemma_bound_check, proof_inequality_diagnostics, verify_bound, BoundReport,
    DiagnosticReport, InequalityCheck, RegretCertificate,
};
pub use controller::{
    validate_step_sizes, ClosedLoopTrace, ControllerState, OgdController, StepOutput, TheoremMode,
};
pub use cost::{
    generate_random_setpoints, CostSequence, LogCoshTrackingCost, Moduli, PathMetrics,
    QuadraticTrackingCost, RandomSetpoints, SetpointSchedule, StageCost,
};
pub use error::{Error, Result};
pub use oracle::{comparator_regret, optimal_trajectory, regret, OptimalTrajectory, OracleMethod};
pub use report::{CheckReport, Condition, Relation};
pub use sim::{run_closed_loop, simulate, RunConfig, RunRecord, SimOptions};
pub use system::{reference_system, ControllabilityData, LinearSystem, SystemSpec};
