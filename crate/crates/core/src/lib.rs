//! Trajectory-tracking simulation for a rigid-link manipulator.
//!
//! The crate covers the full loop: closed-form two-link elbow dynamics
//! ([`dynamics`]), EKF and adaptive robust EKF state estimation
//! ([`estimation`]), a discontinuous Lyapunov-based tracking controller
//! ([`control`]), and a deterministic seeded experiment engine with
//! comparison metrics ([`sim`], [`config`]).

pub mod config;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod estimation;
pub mod linalg;
pub mod sim;

pub use config::{ControlSource, DisturbanceKind, FilterChoice, Integrator, ScenarioConfig};
pub use control::{
    control_law, lyapunov_value, saturation, settling_bound, sliding_variable, ControllerGains,
    ReferencePoint, SineReference, SlidingVars,
};
pub use dynamics::{
    inertia_bounds, uniform_elbow_grid, DynamicsTerms, ElbowDynamics, InertiaBounds, JointState,
    ManipulatorDynamics, ManipulatorParams,
};
pub use error::{Error, Result};
pub use estimation::{
    arekf_predict, arekf_update, ekf_predict, ekf_update, numeric_jacobian, Arekf, ArekfPrior,
    ArekfTuning, BranchTest, Ekf, GammaBasis, GaussianBelief, InnovationStats, NonlinearModel,
};
pub use sim::{
    build_filter_model, compute_metrics, plant_step, run_scenario, FilterMetrics, MetricsReport,
    SimTrace, StepRecord,
};
