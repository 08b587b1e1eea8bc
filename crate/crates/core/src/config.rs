//! Scenario description for closed-loop experiments.
//!
//! [`ScenarioConfig`] is a flat, serde-friendly record of everything one run
//! needs: plant parameters, sample time, noise levels, the model
//! perturbation applied inside the filter, disturbance and reference
//! shapes, controller gains, filter selection and tuning, and the RNG seed.
//! Every field has a default, so an empty document is a valid scenario.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::control::{ControllerGains, SineReference};
use crate::dynamics::{JointState, ManipulatorParams};
use crate::error::{Error, Result};
use crate::estimation::{ArekfTuning, BranchTest, GammaBasis, GaussianBelief};

/// Which filter(s) a scenario runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterChoice {
    Ekf,
    Arekf,
    Both,
}

impl FilterChoice {
    pub fn ekf_enabled(self) -> bool {
        matches!(self, FilterChoice::Ekf | FilterChoice::Both)
    }

    pub fn arekf_enabled(self) -> bool {
        matches!(self, FilterChoice::Arekf | FilterChoice::Both)
    }
}

/// Which estimate drives the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlSource {
    Ekf,
    Arekf,
    /// Debug mode: feed the true plant state to the controller.
    Truth,
}

/// Fixed-step integrator for the plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Rk4,
    Euler,
}

/// Shape of the torque disturbance acting on the plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisturbanceKind {
    Zero,
    Constant,
    /// Per-joint `d_i(t) = a_i sin(ω_i t + φ_i)`.
    Sine,
}

/// Full description of one closed-loop experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    // plant
    pub masses: Vec<f64>,
    pub inertias: Vec<f64>,
    pub lengths: Vec<f64>,
    pub com_offsets: Vec<f64>,
    pub gravity: f64,

    // timing
    pub ts: f64,
    pub duration: f64,

    // true noise levels (isotropic: variance × identity)
    pub q_true: f64,
    pub r_true: f64,
    // noise levels assumed by the filters
    pub q_filter: f64,
    pub r_filter: f64,

    // multiplicative perturbations applied to the filter's internal model
    pub filter_mass_scale: Vec<f64>,
    pub filter_inertia_scale: Vec<f64>,
    pub filter_length_scale: Vec<f64>,
    pub filter_com_scale: Vec<f64>,

    // disturbance
    pub disturbance_kind: DisturbanceKind,
    pub disturbance: Vec<f64>,
    pub disturbance_frequency: Vec<f64>,
    pub disturbance_phase: Vec<f64>,
    /// Assumed bound δ on ‖d(t)‖₂; the theorem needs kd > δ.
    pub delta: f64,

    // reference trajectory (per-joint sinusoids)
    pub ref_amplitude: Vec<f64>,
    pub ref_frequency: Vec<f64>,
    pub ref_phase: Vec<f64>,

    // controller
    pub kd: f64,
    pub lambda_gain: f64,
    pub epsilon: f64,

    // estimation
    pub filter: FilterChoice,
    pub control_source: ControlSource,
    pub arekf_alpha: f64,
    pub arekf_rho: f64,
    pub arekf_gamma: f64,
    pub arekf_lambda: f64,
    pub arekf_branch_test: BranchTest,
    pub arekf_gamma_exponent: i32,
    pub arekf_gamma_basis: GammaBasis,
    /// Use the closed-form process Jacobian in the filter model (finite
    /// differences otherwise).
    pub analytic_jacobian: bool,

    // simulation
    pub seed: u64,
    pub x0: Vec<f64>,
    pub belief_mean: Vec<f64>,
    /// Isotropic initial covariance (variance × identity).
    pub belief_cov: f64,
    pub integrator: Integrator,
    /// Fraction of the trace discarded before computing metrics.
    pub transient_fraction: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            masses: vec![1.0, 1.0],
            inertias: vec![0.25, 0.25],
            lengths: vec![0.5, 0.5],
            com_offsets: vec![0.25, 0.25],
            gravity: 9.81,
            ts: 0.005,
            duration: 10.0,
            q_true: 1e-5,
            r_true: 1e-3,
            q_filter: 1e-9,
            r_filter: 1e-1,
            filter_mass_scale: vec![1.1, 1.1],
            filter_inertia_scale: vec![1.0, 1.0],
            filter_length_scale: vec![1.0, 1.0],
            filter_com_scale: vec![1.0, 1.0],
            disturbance_kind: DisturbanceKind::Constant,
            disturbance: vec![1.0, 1.0],
            disturbance_frequency: vec![1.0, 1.0],
            disturbance_phase: vec![0.0, 0.0],
            delta: 1.5,
            ref_amplitude: vec![0.5, 0.5],
            ref_frequency: vec![1.0, 1.0],
            ref_phase: vec![0.0, std::f64::consts::FRAC_PI_2],
            kd: 9.0,
            lambda_gain: 3.0,
            epsilon: 0.01,
            filter: FilterChoice::Both,
            control_source: ControlSource::Arekf,
            arekf_alpha: 0.9,
            arekf_rho: 0.97,
            arekf_gamma: 0.001,
            arekf_lambda: 0.7,
            arekf_branch_test: BranchTest::Trace,
            arekf_gamma_exponent: 2,
            arekf_gamma_basis: GammaBasis::Predicted,
            analytic_jacobian: true,
            seed: 0,
            x0: vec![0.4, -0.3, 0.0, 0.0],
            belief_mean: vec![0.0, 0.0, 0.0, 0.0],
            belief_cov: 0.1,
            integrator: Integrator::Rk4,
            transient_fraction: 0.1,
        }
    }
}

impl ScenarioConfig {
    /// True plant parameters.
    pub fn manipulator_params(&self) -> Result<ManipulatorParams> {
        ManipulatorParams::new(
            self.masses.clone(),
            self.inertias.clone(),
            self.lengths.clone(),
            self.com_offsets.clone(),
            self.gravity,
        )
    }

    /// Parameters of the filter's internal model (perturbed).
    pub fn filter_params(&self) -> Result<ManipulatorParams> {
        let n = self.masses.len();
        let scale = |values: &[f64], scales: &[f64], what: &str| -> Result<Vec<f64>> {
            if scales.len() != n {
                return Err(Error::Config(format!("{what} must have length {n}")));
            }
            Ok(values.iter().zip(scales).map(|(v, s)| v * s).collect())
        };
        ManipulatorParams::new(
            scale(&self.masses, &self.filter_mass_scale, "filter_mass_scale")?,
            scale(&self.inertias, &self.filter_inertia_scale, "filter_inertia_scale")?,
            scale(&self.lengths, &self.filter_length_scale, "filter_length_scale")?,
            scale(&self.com_offsets, &self.filter_com_scale, "filter_com_scale")?,
            self.gravity,
        )
        .map_err(|e| Error::Config(format!("perturbed filter model is non-physical: {e}")))
    }

    pub fn gains(&self) -> Result<ControllerGains> {
        ControllerGains::new(self.kd, self.lambda_gain, self.epsilon)
    }

    pub fn tuning(&self) -> ArekfTuning {
        ArekfTuning {
            alpha: self.arekf_alpha,
            rho: self.arekf_rho,
            gamma: self.arekf_gamma,
            lambda: self.arekf_lambda,
            branch_test: self.arekf_branch_test,
            gamma_exponent: self.arekf_gamma_exponent,
            gamma_basis: self.arekf_gamma_basis,
        }
    }

    pub fn reference(&self) -> Result<SineReference> {
        SineReference::new(
            self.ref_amplitude.clone(),
            self.ref_frequency.clone(),
            self.ref_phase.clone(),
        )
    }

    /// Disturbance torque at time `t`.
    pub fn disturbance_at(&self, t: f64) -> DVector<f64> {
        let n = self.disturbance.len();
        match self.disturbance_kind {
            DisturbanceKind::Zero => DVector::zeros(n),
            DisturbanceKind::Constant => DVector::from_row_slice(&self.disturbance),
            DisturbanceKind::Sine => DVector::from_fn(n, |i, _| {
                self.disturbance[i]
                    * (self.disturbance_frequency[i] * t + self.disturbance_phase[i]).sin()
            }),
        }
    }

    pub fn initial_truth(&self) -> Result<JointState> {
        JointState::from_vector(&DVector::from_row_slice(&self.x0))
    }

    pub fn initial_belief(&self) -> Result<GaussianBelief> {
        let n = self.belief_mean.len();
        GaussianBelief::new(
            DVector::from_row_slice(&self.belief_mean),
            DMatrix::identity(n, n) * self.belief_cov,
        )
    }

    /// Number of integration steps; the trace has one more record.
    pub fn step_count(&self) -> usize {
        (self.duration / self.ts).floor() as usize
    }

    pub fn state_dim(&self) -> usize {
        2 * self.masses.len()
    }

    /// Check every invariant; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        self.manipulator_params()?;
        self.filter_params()?;
        self.reference()?;
        let gains = self.gains()?;
        self.tuning().validate()?;

        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return Err(Error::Config(format!("ts must be > 0, got {}", self.ts)));
        }
        if !(self.duration >= self.ts && self.duration.is_finite()) {
            return Err(Error::Config(format!(
                "duration must be at least one sample time, got {}",
                self.duration
            )));
        }
        for (key, value) in [
            ("q_true", self.q_true),
            ("r_true", self.r_true),
            ("q_filter", self.q_filter),
            ("belief_cov", self.belief_cov),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::Config(format!("{key} must be >= 0, got {value}")));
            }
        }
        if !(self.r_filter > 0.0 && self.r_filter.is_finite()) {
            return Err(Error::Config(format!(
                "r_filter must be > 0, got {}",
                self.r_filter
            )));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!("delta must be >= 0, got {}", self.delta)));
        }
        if !gains.theorem_applies(self.delta) {
            return Err(Error::Config(format!(
                "k_d must exceed delta (kd = {}, delta = {})",
                self.kd, self.delta
            )));
        }

        let n = self.masses.len();
        for (key, len) in [
            ("disturbance", self.disturbance.len()),
            ("disturbance_frequency", self.disturbance_frequency.len()),
            ("disturbance_phase", self.disturbance_phase.len()),
            ("ref_amplitude", self.ref_amplitude.len()),
        ] {
            if len != n {
                return Err(Error::Config(format!("{key} must have length {n}")));
            }
        }
        for (key, values) in [
            ("disturbance", &self.disturbance),
            ("disturbance_frequency", &self.disturbance_frequency),
            ("disturbance_phase", &self.disturbance_phase),
        ] {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("{key} entries must be finite")));
            }
        }

        let dim = self.state_dim();
        if self.x0.len() != dim {
            return Err(Error::Config(format!("x0 must have length {dim}")));
        }
        if self.belief_mean.len() != dim {
            return Err(Error::Config(format!("belief_mean must have length {dim}")));
        }
        if self.x0.iter().chain(&self.belief_mean).any(|v| !v.is_finite()) {
            return Err(Error::Config("x0 and belief_mean entries must be finite".into()));
        }
        if !(0.0..1.0).contains(&self.transient_fraction) {
            return Err(Error::Config(format!(
                "transient_fraction must be in [0, 1), got {}",
                self.transient_fraction
            )));
        }
        match self.control_source {
            ControlSource::Ekf if !self.filter.ekf_enabled() => {
                return Err(Error::Config(
                    "control_source = ekf requires the EKF to be enabled".into(),
                ));
            }
            ControlSource::Arekf if !self.filter.arekf_enabled() => {
                return Err(Error::Config(
                    "control_source = arekf requires the AREKF to be enabled".into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }
}
