//! Closed-loop experiment engine.
//!
//! One scenario is one deterministic seeded loop: measure the true state,
//! run the enabled filter(s), compute the control torque from the selected
//! estimate, record everything, then advance the plant one sample with the
//! disturbance and additive discrete process noise. The per-step schedule
//! matches the filters' step drivers: the initial record assimilates the
//! first measurement without propagation.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{ControlSource, Integrator, ScenarioConfig};
use crate::control::{control_law, lyapunov_value, sliding_variable};
use crate::dynamics::{ElbowDynamics, JointState, ManipulatorDynamics};
use crate::error::{Error, Result};
use crate::estimation::{Arekf, Ekf, GaussianBelief, NonlinearModel};
use crate::linalg;

/// Advance the continuous dynamics by one sample with zero-order-hold
/// torque and disturbance.
pub fn plant_step<M: ManipulatorDynamics>(
    dynamics: &M,
    state: &JointState,
    torque: &DVector<f64>,
    disturbance: &DVector<f64>,
    ts: f64,
    integrator: Integrator,
) -> Result<JointState> {
    if ts <= 0.0 {
        return Err(Error::Config(format!("step size must be > 0, got {ts}")));
    }
    let deriv = |x: &DVector<f64>| -> Result<DVector<f64>> {
        let s = JointState::from_vector(x)?;
        let qdd = dynamics.forward_dynamics(&s, torque, disturbance)?;
        let n = s.dof();
        let mut dx = DVector::zeros(2 * n);
        dx.rows_mut(0, n).copy_from(&s.dq);
        dx.rows_mut(n, n).copy_from(&qdd);
        Ok(dx)
    };

    let x = state.to_vector();
    let next = match integrator {
        Integrator::Euler => &x + deriv(&x)? * ts,
        Integrator::Rk4 => {
            let k1 = deriv(&x)?;
            let k2 = deriv(&(&x + &k1 * (ts / 2.0)))?;
            let k3 = deriv(&(&x + &k2 * (ts / 2.0)))?;
            let k4 = deriv(&(&x + &k3 * ts))?;
            &x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (ts / 6.0)
        }
    };
    JointState::from_vector(&next)
}

/// Build the filter's internal model from a scenario: Euler-discretized
/// dynamics with the perturbed parameters, full-state measurement, and the
/// filter-assumed noise covariances. The disturbance is deliberately
/// absent from the model.
pub fn build_filter_model(config: &ScenarioConfig) -> Result<NonlinearModel> {
    let arm = ElbowDynamics::new(config.filter_params()?)?;
    let n = arm.dof();
    let dim = 2 * n;
    let ts = config.ts;

    let process_arm = arm.clone();
    let process = move |x: &DVector<f64>, u: &DVector<f64>| -> DVector<f64> {
        let state = match JointState::from_vector(x) {
            Ok(s) => s,
            Err(_) => return DVector::from_element(x.len(), f64::NAN),
        };
        let zero = DVector::zeros(n);
        match process_arm.forward_dynamics(&state, u, &zero) {
            Ok(qdd) => {
                let mut next = x.clone();
                next.rows_mut(0, n).axpy(ts, &state.dq, 1.0);
                next.rows_mut(n, n).axpy(ts, &qdd, 1.0);
                next
            }
            Err(_) => DVector::from_element(x.len(), f64::NAN),
        }
    };

    let model = NonlinearModel::new(
        dim,
        dim,
        process,
        |x| x.clone(),
        DMatrix::identity(dim, dim) * config.q_filter,
        DMatrix::identity(dim, dim) * config.r_filter,
    )?
    .with_measurement_jacobian(move |_x| DMatrix::identity(dim, dim));

    if config.analytic_jacobian {
        let jac_arm = arm;
        let jacobian = move |x: &DVector<f64>, u: &DVector<f64>| -> DMatrix<f64> {
            let state = match JointState::from_vector(x) {
                Ok(s) => s,
                Err(_) => return DMatrix::from_element(x.len(), x.len(), f64::NAN),
            };
            match jac_arm.acceleration_partials(&state, u) {
                Ok((aq, av)) => {
                    // F = I + Ts · [[0, I], [∂q̈/∂q, ∂q̈/∂q̇]]
                    let mut f = DMatrix::identity(2 * n, 2 * n);
                    for i in 0..n {
                        f[(i, n + i)] += ts;
                        for j in 0..n {
                            f[(n + i, j)] += ts * aq[(i, j)];
                            f[(n + i, n + j)] += ts * av[(i, j)];
                        }
                    }
                    f
                }
                Err(_) => DMatrix::from_element(x.len(), x.len(), f64::NAN),
            }
        };
        Ok(model.with_process_jacobian(jacobian))
    } else {
        Ok(model)
    }
}

/// One row of the simulation trace.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub time: f64,
    /// True plant state `[q; dq]`.
    pub truth: DVector<f64>,
    pub measurement: DVector<f64>,
    /// Reference joint positions at this time.
    pub reference_q: DVector<f64>,
    pub ekf_estimate: Option<DVector<f64>>,
    pub arekf_estimate: Option<DVector<f64>>,
    pub ekf_innovation: Option<DVector<f64>>,
    pub arekf_innovation: Option<DVector<f64>>,
    /// Normalized estimation error squared against the true state.
    pub ekf_nees: Option<f64>,
    pub arekf_nees: Option<f64>,
    /// Sliding variable of the controller's estimate.
    pub sigma: DVector<f64>,
    pub torque: DVector<f64>,
    pub disturbance: DVector<f64>,
    /// Lyapunov value ½ σᵀD(q̂)σ.
    pub lyapunov: f64,
    /// True when the AREKF took its robust branch this step.
    pub arekf_robust: Option<bool>,
}

/// Full record of one scenario run.
#[derive(Debug, Clone)]
pub struct SimTrace {
    pub records: Vec<StepRecord>,
    /// Step at which the run blew up, when it did.
    pub diverged_step: Option<usize>,
}

/// Per-filter summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterMetrics {
    /// RMSE of each state component over the post-transient window.
    pub state_rmse: Vec<f64>,
    /// Time-averaged NEES (None when no finite samples were available).
    pub mean_nees: Option<f64>,
}

/// Summary of one scenario run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ekf: Option<FilterMetrics>,
    pub arekf: Option<FilterMetrics>,
    /// RMSE of the true joint positions against the reference, per joint.
    pub tracking_rmse: Vec<f64>,
    /// First time ‖σ‖ enters the ε-layer and stays there.
    pub settling_time: Option<f64>,
    pub max_torque: f64,
    pub diverged: bool,
    pub diverged_step: Option<usize>,
}

fn sample_noise(rng: &mut ChaCha12Rng, variance: f64, dim: usize) -> DVector<f64> {
    if variance <= 0.0 {
        return DVector::zeros(dim);
    }
    let std = variance.sqrt();
    DVector::from_fn(dim, |_, _| {
        let n: f64 = StandardNormal.sample(rng);
        n * std
    })
}

fn nees(estimate: &GaussianBelief, truth: &DVector<f64>) -> f64 {
    let err = &estimate.mean - truth;
    match nalgebra::Cholesky::new(linalg::symmetrize(&estimate.cov)) {
        Some(c) => (err.transpose() * c.solve(&err))[(0, 0)],
        None => f64::NAN,
    }
}

fn is_runtime_failure(err: &Error) -> bool {
    matches!(
        err,
        Error::FilterDivergence(_)
            | Error::Tuning { .. }
            | Error::Controller(_)
            | Error::Dynamics(_)
            | Error::Numeric(_)
            | Error::BlowUp { .. }
    )
}

/// Run one scenario to completion (or blow-up) and compute its metrics.
///
/// Blow-ups do not error: the partial trace is returned with the
/// divergence flag and failing step set.
pub fn run_scenario(config: &ScenarioConfig) -> Result<(SimTrace, MetricsReport)> {
    config.validate()?;
    let dynamics = ElbowDynamics::new(config.manipulator_params()?)?;
    let reference = config.reference()?;
    let gains = config.gains()?;
    let dim = config.state_dim();
    let n_joints = dim / 2;

    let initial_belief = config.initial_belief()?;
    let mut ekf = if config.filter.ekf_enabled() {
        Some(Ekf::new(build_filter_model(config)?, initial_belief.clone())?)
    } else {
        None
    };
    let mut arekf = if config.filter.arekf_enabled() {
        Some(Arekf::new(
            build_filter_model(config)?,
            initial_belief,
            config.tuning(),
        )?)
    } else {
        None
    };

    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut truth = config.initial_truth()?;
    let n_steps = config.step_count();
    let mut records: Vec<StepRecord> = Vec::with_capacity(n_steps + 1);
    let mut diverged_step = None;
    let mut torque_hold = DVector::zeros(n_joints);

    'steps: for k in 0..=n_steps {
        let t = k as f64 * config.ts;
        let process_noise = sample_noise(&mut rng, config.q_true, dim);
        let measurement_noise = sample_noise(&mut rng, config.r_true, dim);
        let truth_vec = truth.to_vector();
        let measurement = &truth_vec + &measurement_noise;

        let mut ekf_estimate = None;
        let mut ekf_innovation = None;
        let mut ekf_nees = None;
        if let Some(filter) = ekf.as_mut() {
            match filter.step(&torque_hold, &measurement) {
                Ok(innovation) => {
                    ekf_estimate = Some(filter.belief().mean.clone());
                    ekf_innovation = Some(innovation);
                    ekf_nees = Some(nees(filter.belief(), &truth_vec));
                }
                Err(e) if is_runtime_failure(&e) => {
                    diverged_step = Some(k);
                    break 'steps;
                }
                Err(e) => return Err(e),
            }
        }

        let mut arekf_estimate = None;
        let mut arekf_innovation = None;
        let mut arekf_nees = None;
        let mut arekf_robust = None;
        if let Some(filter) = arekf.as_mut() {
            match filter.step(&torque_hold, &measurement) {
                Ok(info) => {
                    arekf_estimate = Some(filter.belief().mean.clone());
                    arekf_innovation = Some(info.innovation);
                    arekf_nees = Some(nees(filter.belief(), &truth_vec));
                    arekf_robust = Some(info.robust);
                }
                Err(e) if is_runtime_failure(&e) => {
                    diverged_step = Some(k);
                    break 'steps;
                }
                Err(e) => return Err(e),
            }
        }

        let control_state = match config.control_source {
            ControlSource::Truth => truth.clone(),
            ControlSource::Ekf => {
                let Some(mean) = ekf_estimate.as_ref() else {
                    return Err(Error::Config("EKF estimate unavailable for control".into()));
                };
                JointState::from_vector(mean)?
            }
            ControlSource::Arekf => {
                let Some(mean) = arekf_estimate.as_ref() else {
                    return Err(Error::Config("AREKF estimate unavailable for control".into()));
                };
                JointState::from_vector(mean)?
            }
        };
        if !control_state.is_finite() {
            diverged_step = Some(k);
            break 'steps;
        }

        let ref_point = reference.sample(t);
        let vars = sliding_variable(&control_state, &ref_point, gains.lambda_gain)?;
        let torque = match control_law(&dynamics, &control_state, &ref_point, &gains) {
            Ok(u) => u,
            Err(e) if is_runtime_failure(&e) => {
                diverged_step = Some(k);
                break 'steps;
            }
            Err(e) => return Err(e),
        };
        let lyapunov = lyapunov_value(&dynamics, &control_state, &vars.sigma)?;
        let disturbance = config.disturbance_at(t);

        records.push(StepRecord {
            time: t,
            truth: truth_vec,
            measurement,
            reference_q: ref_point.q,
            ekf_estimate,
            arekf_estimate,
            ekf_innovation,
            arekf_innovation,
            ekf_nees,
            arekf_nees,
            sigma: vars.sigma,
            torque: torque.clone(),
            disturbance: disturbance.clone(),
            lyapunov,
            arekf_robust,
        });

        if k < n_steps {
            let next = match plant_step(
                &dynamics,
                &truth,
                &torque,
                &disturbance,
                config.ts,
                config.integrator,
            ) {
                Ok(s) => s,
                Err(e) if is_runtime_failure(&e) => {
                    diverged_step = Some(k + 1);
                    break 'steps;
                }
                Err(e) => return Err(e),
            };
            let perturbed = next.to_vector() + &process_noise;
            if !linalg::all_finite(&perturbed) {
                diverged_step = Some(k + 1);
                break 'steps;
            }
            truth = JointState::from_vector(&perturbed)?;
        }
        torque_hold = torque;
    }

    let trace = SimTrace { records, diverged_step };
    let metrics = compute_metrics(&trace, config);
    Ok((trace, metrics))
}

/// Summarize a trace: component RMSE and NEES over the post-transient
/// window, tracking RMSE, σ settling time and peak torque.
pub fn compute_metrics(trace: &SimTrace, config: &ScenarioConfig) -> MetricsReport {
    let n = trace.records.len();
    let dim = config.state_dim();
    let n_joints = dim / 2;
    if n == 0 {
        return MetricsReport {
            ekf: None,
            arekf: None,
            tracking_rmse: vec![0.0; n_joints],
            settling_time: None,
            max_torque: 0.0,
            diverged: trace.diverged_step.is_some(),
            diverged_step: trace.diverged_step,
        };
    }
    let start = ((n as f64) * config.transient_fraction).floor() as usize;
    let start = start.min(n - 1);
    let window = &trace.records[start..];

    let filter_metrics = |estimate: fn(&StepRecord) -> Option<&DVector<f64>>,
                          nees_of: fn(&StepRecord) -> Option<f64>|
     -> Option<FilterMetrics> {
        let mut sq_sum = vec![0.0f64; dim];
        let mut count = 0usize;
        let mut nees_sum = 0.0f64;
        let mut nees_count = 0usize;
        for rec in window {
            let est = estimate(rec)?;
            for i in 0..dim {
                let e = est[i] - rec.truth[i];
                sq_sum[i] += e * e;
            }
            count += 1;
            if let Some(v) = nees_of(rec) {
                if v.is_finite() {
                    nees_sum += v;
                    nees_count += 1;
                }
            }
        }
        if count == 0 {
            return None;
        }
        Some(FilterMetrics {
            state_rmse: sq_sum.iter().map(|s| (s / count as f64).sqrt()).collect(),
            mean_nees: if nees_count > 0 {
                Some(nees_sum / nees_count as f64)
            } else {
                None
            },
        })
    };

    let ekf = filter_metrics(|r| r.ekf_estimate.as_ref(), |r| r.ekf_nees);
    let arekf = filter_metrics(|r| r.arekf_estimate.as_ref(), |r| r.arekf_nees);

    let mut tracking_sq = vec![0.0f64; n_joints];
    for rec in window {
        for (j, acc) in tracking_sq.iter_mut().enumerate() {
            let e = rec.truth[j] - rec.reference_q[j];
            *acc += e * e;
        }
    }
    let tracking_rmse = tracking_sq
        .iter()
        .map(|s| (s / window.len() as f64).sqrt())
        .collect();

    // first time ‖σ‖ enters the ε-layer and never leaves
    let eps = config.epsilon;
    let mut settled_from: Option<usize> = None;
    for (i, rec) in trace.records.iter().enumerate() {
        if rec.sigma.norm() <= eps {
            settled_from.get_or_insert(i);
        } else {
            settled_from = None;
        }
    }
    let settling_time = settled_from.map(|i| trace.records[i].time);

    let max_torque = trace
        .records
        .iter()
        .map(|r| r.torque.amax())
        .fold(0.0f64, f64::max);

    MetricsReport {
        ekf,
        arekf,
        tracking_rmse,
        settling_time,
        max_torque,
        diverged: trace.diverged_step.is_some(),
        diverged_step: trace.diverged_step,
    }
}
