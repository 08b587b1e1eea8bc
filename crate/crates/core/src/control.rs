//! Discontinuous Lyapunov-based trajectory tracking.
//!
//! The control torque is the inverse-dynamics feedforward along a sliding
//! reference plus a bounded switching term:
//!
//! ```text
//! u = D(q̂)ζ̈ + C(q̂, q̇̂)ζ̇ + G(q̂) - K_D · sw(σ)
//! ```
//!
//! with the sliding variable σ = (q̇̂ - q̇_d) + Λ(q̂ - q_d). The switching
//! term is the unit vector σ/‖σ‖ (zero at σ = 0) or its saturated variant
//! inside a norm boundary layer of width ε.

use nalgebra::DVector;

use crate::dynamics::{JointState, ManipulatorDynamics};
use crate::error::{Error, Result};
use crate::linalg;

/// Gains of the tracking controller. `K_D = kd·I`, `Λ = lambda_gain·I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerGains {
    /// Switching gain (N·m), strictly positive.
    pub kd: f64,
    /// Sliding-surface slope (1/s), strictly positive.
    pub lambda_gain: f64,
    /// Boundary-layer width; 0 selects the pure unit-vector switching term.
    pub epsilon: f64,
}

impl ControllerGains {
    pub fn new(kd: f64, lambda_gain: f64, epsilon: f64) -> Result<Self> {
        let g = Self { kd, lambda_gain, epsilon };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kd > 0.0 && self.kd.is_finite()) {
            return Err(Error::Config(format!("kd must be > 0, got {}", self.kd)));
        }
        if !(self.lambda_gain > 0.0 && self.lambda_gain.is_finite()) {
            return Err(Error::Config(format!(
                "lambda_gain must be > 0, got {}",
                self.lambda_gain
            )));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        Ok(())
    }

    /// The global-stability theorem applies iff kd exceeds the disturbance
    /// bound.
    pub fn theorem_applies(&self, disturbance_bound: f64) -> bool {
        self.kd > disturbance_bound
    }
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self { kd: 9.0, lambda_gain: 3.0, epsilon: 0.01 }
    }
}

/// Desired position, velocity and acceleration at one time instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePoint {
    pub q: DVector<f64>,
    pub dq: DVector<f64>,
    pub ddq: DVector<f64>,
}

/// Smooth per-joint sinusoidal reference, `q_d,i(t) = a_i sin(ω_i t + φ_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SineReference {
    pub amplitude: Vec<f64>,
    pub frequency: Vec<f64>,
    pub phase: Vec<f64>,
}

impl SineReference {
    pub fn new(amplitude: Vec<f64>, frequency: Vec<f64>, phase: Vec<f64>) -> Result<Self> {
        let r = Self { amplitude, frequency, phase };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.amplitude.len();
        if n == 0 || self.frequency.len() != n || self.phase.len() != n {
            return Err(Error::Config(
                "reference amplitude, frequency and phase must have equal non-zero length".into(),
            ));
        }
        for i in 0..n {
            if !(self.amplitude[i].is_finite()
                && self.frequency[i].is_finite()
                && self.phase[i].is_finite())
            {
                return Err(Error::Config(format!("reference joint {i}: non-finite value")));
            }
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.amplitude.len()
    }

    pub fn sample(&self, t: f64) -> ReferencePoint {
        let n = self.dof();
        let mut q = DVector::zeros(n);
        let mut dq = DVector::zeros(n);
        let mut ddq = DVector::zeros(n);
        for i in 0..n {
            let (a, w, p) = (self.amplitude[i], self.frequency[i], self.phase[i]);
            let arg = w * t + p;
            q[i] = a * arg.sin();
            dq[i] = a * w * arg.cos();
            ddq[i] = -a * w * w * arg.sin();
        }
        ReferencePoint { q, dq, ddq }
    }

    /// Check that the sampled velocity/acceleration really are the time
    /// derivatives of the position, by central differences at `times`.
    pub fn derivatives_consistent(&self, times: &[f64], rel_tol: f64) -> bool {
        let h = 1e-5;
        for &t in times {
            let p = self.sample(t);
            let fwd = self.sample(t + h);
            let bwd = self.sample(t - h);
            let dq_fd = (&fwd.q - &bwd.q) / (2.0 * h);
            let ddq_fd = (&fwd.dq - &bwd.dq) / (2.0 * h);
            let scale_v = p.dq.norm().max(1.0);
            let scale_a = p.ddq.norm().max(1.0);
            if (dq_fd - &p.dq).norm() > rel_tol * scale_v {
                return false;
            }
            if (ddq_fd - &p.ddq).norm() > rel_tol * scale_a {
                return false;
            }
        }
        true
    }
}

impl Default for SineReference {
    /// q_d(t) = [0.5 sin t, 0.5 cos t].
    fn default() -> Self {
        Self {
            amplitude: vec![0.5, 0.5],
            frequency: vec![1.0, 1.0],
            phase: vec![0.0, std::f64::consts::FRAC_PI_2],
        }
    }
}

/// Sliding variable and the sliding-reference derivatives.
#[derive(Debug, Clone)]
pub struct SlidingVars {
    /// σ = (q̇̂ - q̇_d) + Λ(q̂ - q_d).
    pub sigma: DVector<f64>,
    /// ζ̇ = q̇_d - Λ(q̂ - q_d).
    pub zeta_dot: DVector<f64>,
    /// ζ̈ = q̈_d - Λ(q̇̂ - q̇_d).
    pub zeta_ddot: DVector<f64>,
}

/// Sliding-variable bookkeeping for an estimated state and a reference
/// sample.
pub fn sliding_variable(
    est: &JointState,
    reference: &ReferencePoint,
    lambda_gain: f64,
) -> Result<SlidingVars> {
    let n = est.dof();
    if reference.q.len() != n || reference.dq.len() != n || reference.ddq.len() != n {
        return Err(Error::Config(format!("reference must have {n} joints")));
    }
    let pos_err = &est.q - &reference.q;
    let vel_err = &est.dq - &reference.dq;
    let zeta_dot = &reference.dq - &pos_err * lambda_gain;
    let zeta_ddot = &reference.ddq - &vel_err * lambda_gain;
    let sigma = &vel_err + &pos_err * lambda_gain;
    Ok(SlidingVars { sigma, zeta_dot, zeta_ddot })
}

/// Norm boundary layer: σ/‖σ‖ outside the layer, σ/ε inside.
pub fn saturation(sigma: &DVector<f64>, epsilon: f64) -> DVector<f64> {
    let norm = sigma.norm();
    if norm >= epsilon {
        if norm == 0.0 {
            return DVector::zeros(sigma.len());
        }
        sigma / norm
    } else {
        sigma / epsilon
    }
}

/// The switching direction: unit vector for ε = 0 (zero at σ = 0), the
/// saturated variant otherwise.
fn switching_term(sigma: &DVector<f64>, epsilon: f64) -> DVector<f64> {
    if epsilon == 0.0 {
        let norm = sigma.norm();
        if norm == 0.0 {
            DVector::zeros(sigma.len())
        } else {
            sigma / norm
        }
    } else {
        saturation(sigma, epsilon)
    }
}

/// Control torque for an estimated state and a reference sample.
pub fn control_law<M: ManipulatorDynamics>(
    dynamics: &M,
    est: &JointState,
    reference: &ReferencePoint,
    gains: &ControllerGains,
) -> Result<DVector<f64>> {
    gains.validate()?;
    let vars = sliding_variable(est, reference, gains.lambda_gain)?;
    let terms = dynamics.dynamics_terms(est)?;
    let torque = &terms.inertia * &vars.zeta_ddot
        + &terms.coriolis * &vars.zeta_dot
        + &terms.gravity
        - switching_term(&vars.sigma, gains.epsilon) * gains.kd;
    if !linalg::all_finite(&torque) {
        return Err(Error::Controller("non-finite torque".into()));
    }
    Ok(torque)
}

/// Lyapunov function value V = ½ σᵀ D(q̂) σ.
pub fn lyapunov_value<M: ManipulatorDynamics>(
    dynamics: &M,
    est: &JointState,
    sigma: &DVector<f64>,
) -> Result<f64> {
    if sigma.len() != est.dof() {
        return Err(Error::Config(format!("sigma must have length {}", est.dof())));
    }
    let d = dynamics.mass_matrix(&est.q)?;
    Ok(0.5 * (sigma.transpose() * d * sigma)[(0, 0)])
}

/// Upper bound on the time for σ to reach zero: `λ_M ‖σ(0)‖ / (kd - δ)`.
///
/// Errors when the theorem precondition kd > δ fails.
pub fn settling_bound(
    gains: &ControllerGains,
    disturbance_bound: f64,
    lambda_max: f64,
    sigma0_norm: f64,
) -> Result<f64> {
    if !gains.theorem_applies(disturbance_bound) {
        return Err(Error::TheoremInapplicable(format!(
            "kd = {} does not exceed the disturbance bound {}",
            gains.kd, disturbance_bound
        )));
    }
    let kd_hat = gains.kd - disturbance_bound;
    Ok(lambda_max * sigma0_norm / kd_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ElbowDynamics, ManipulatorParams};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn elbow() -> ElbowDynamics {
        ElbowDynamics::new(ManipulatorParams::default()).unwrap()
    }

    fn reference_at(t: f64) -> ReferencePoint {
        SineReference::default().sample(t)
    }

    #[test]
    fn sliding_variable_zero_on_perfect_tracking() {
        let r = reference_at(0.7);
        let est = JointState::new(r.q.clone(), r.dq.clone()).unwrap();
        let v = sliding_variable(&est, &r, 3.0).unwrap();
        assert_relative_eq!(v.sigma.norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(v.zeta_dot, r.dq, epsilon = 1e-12);
    }

    #[test]
    fn sliding_variable_position_error_only() {
        // q̃ = [0.1, 0] with matched velocity and Λ = 3I gives σ = [0.3, 0]
        let r = reference_at(0.0);
        let mut q = r.q.clone();
        q[0] += 0.1;
        let est = JointState::new(q, r.dq.clone()).unwrap();
        let v = sliding_variable(&est, &r, 3.0).unwrap();
        assert_relative_eq!(v.sigma[0], 0.3, epsilon = 1e-12);
        assert_relative_eq!(v.sigma[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn sigma_equals_velocity_minus_zeta_dot() {
        let r = reference_at(1.3);
        let est = JointState::from_slices(&[0.9, -0.2], &[0.4, 1.1]).unwrap();
        let v = sliding_variable(&est, &r, 3.0).unwrap();
        assert_relative_eq!(v.sigma, &est.dq - &v.zeta_dot, epsilon = 1e-12);
    }

    #[test]
    fn saturation_cases() {
        let sigma = DVector::from_row_slice(&[0.0, 0.0]);
        assert_eq!(saturation(&sigma, 0.5), DVector::zeros(2));

        let sigma = DVector::from_row_slice(&[0.6, 0.8]); // norm 1 = 2 eps
        let s = saturation(&sigma, 0.5);
        assert_relative_eq!(s.norm(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(s, &sigma / 1.0, epsilon = 1e-12);

        let sigma = DVector::from_row_slice(&[0.15, 0.2]); // norm 0.25 = eps/2
        let s = saturation(&sigma, 0.5);
        assert_relative_eq!(s.norm(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn control_reduces_to_feedforward_at_sigma_zero() {
        let arm = elbow();
        let r = reference_at(0.4);
        let est = JointState::new(r.q.clone(), r.dq.clone()).unwrap();
        let gains = ControllerGains::default();
        let u = control_law(&arm, &est, &r, &gains).unwrap();
        let v = sliding_variable(&est, &r, gains.lambda_gain).unwrap();
        let terms = arm.dynamics_terms(&est).unwrap();
        let ff = &terms.inertia * &v.zeta_ddot + &terms.coriolis * &v.zeta_dot + &terms.gravity;
        assert_relative_eq!(u, ff, epsilon = 1e-12);
    }

    #[test]
    fn switching_norm_is_kd_outside_layer() {
        let arm = elbow();
        let r = reference_at(0.0);
        let est = JointState::from_slices(&[2.0, -1.5], &[3.0, 2.0]).unwrap();
        let gains = ControllerGains { epsilon: 0.0, ..ControllerGains::default() };
        let u = control_law(&arm, &est, &r, &gains).unwrap();
        let v = sliding_variable(&est, &r, gains.lambda_gain).unwrap();
        let terms = arm.dynamics_terms(&est).unwrap();
        let ff = &terms.inertia * &v.zeta_ddot + &terms.coriolis * &v.zeta_dot + &terms.gravity;
        assert_relative_eq!((u - ff).norm(), gains.kd, epsilon = 1e-9);
    }

    #[test]
    fn control_matches_independent_evaluation() {
        // second, component-wise implementation of the same formula
        let arm = elbow();
        let params = ManipulatorParams::default();
        let r = reference_at(0.8);
        let est = JointState::from_slices(&[0.31, -0.77], &[1.21, 0.45]).unwrap();
        let gains = ControllerGains::default();
        let u = control_law(&arm, &est, &r, &gains).unwrap();

        let (m1, m2) = (params.masses[0], params.masses[1]);
        let (i1, i2) = (params.inertias[0], params.inertias[1]);
        let (l1, lc1, lc2) = (params.lengths[0], params.com_offsets[0], params.com_offsets[1]);
        let g0 = params.gravity;
        let (q1, q2) = (est.q[0], est.q[1]);
        let (dq1, dq2) = (est.dq[0], est.dq[1]);

        let d11 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * q2.cos()) + i1 + i2;
        let d12 = m2 * (lc2 * lc2 + l1 * lc2 * q2.cos()) + i2;
        let d22 = m2 * lc2 * lc2 + i2;
        let h = -m2 * l1 * lc2 * q2.sin();
        let g1 = (m1 * lc1 + m2 * l1) * g0 * q1.cos() + m2 * lc2 * g0 * (q1 + q2).cos();
        let g2 = m2 * lc2 * g0 * (q1 + q2).cos();

        let e1 = q1 - r.q[0];
        let e2 = q2 - r.q[1];
        let de1 = dq1 - r.dq[0];
        let de2 = dq2 - r.dq[1];
        let lam = gains.lambda_gain;
        let zd1 = r.dq[0] - lam * e1;
        let zd2 = r.dq[1] - lam * e2;
        let zdd1 = r.ddq[0] - lam * de1;
        let zdd2 = r.ddq[1] - lam * de2;
        let s1 = de1 + lam * e1;
        let s2 = de2 + lam * e2;
        let snorm = (s1 * s1 + s2 * s2).sqrt();
        let (sw1, sw2) = if snorm >= gains.epsilon {
            (s1 / snorm, s2 / snorm)
        } else {
            (s1 / gains.epsilon, s2 / gains.epsilon)
        };
        let u1 = d11 * zdd1 + d12 * zdd2 + (h * dq2) * zd1 + (h * (dq1 + dq2)) * zd2 + g1
            - gains.kd * sw1;
        let u2 = d12 * zdd1 + d22 * zdd2 + (-h * dq1) * zd1 + g2 - gains.kd * sw2;

        assert_relative_eq!(u[0], u1, epsilon = 1e-10);
        assert_relative_eq!(u[1], u2, epsilon = 1e-10);
    }

    #[test]
    fn lyapunov_value_basics() {
        let arm = elbow();
        let est = JointState::from_slices(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(lyapunov_value(&arm, &est, &DVector::zeros(2)).unwrap(), 0.0);
        let v = lyapunov_value(&arm, &est, &DVector::from_row_slice(&[1.0, 0.0])).unwrap();
        assert_relative_eq!(v, 0.5 * 1.125, epsilon = 1e-12); // ½ D₁₁ at q = 0
    }

    #[test]
    fn settling_bound_values() {
        let gains = ControllerGains { kd: 5.5, ..ControllerGains::default() };
        assert_eq!(settling_bound(&gains, 1.5, 2.0, 0.0).unwrap(), 0.0);
        // λ_M = 2, ‖σ(0)‖ = 1, k̂d = 4 -> 0.5 s
        assert_relative_eq!(settling_bound(&gains, 1.5, 2.0, 1.0).unwrap(), 0.5, epsilon = 1e-12);
        // doubling k̂d halves the bound
        let faster = ControllerGains { kd: 9.5, ..gains };
        assert_relative_eq!(
            settling_bound(&faster, 1.5, 2.0, 1.0).unwrap(),
            0.25,
            epsilon = 1e-12
        );
        assert!(settling_bound(&ControllerGains::default(), 10.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn default_reference_derivatives_are_consistent() {
        let r = SineReference::default();
        let times: Vec<f64> = (0..50).map(|i| 0.2 * i as f64).collect();
        assert!(r.derivatives_consistent(&times, 1e-4));
    }

    proptest! {
        #[test]
        fn switching_contribution_never_exceeds_kd(
            q1 in -PI..PI, q2 in -PI..PI,
            dq1 in -5.0..5.0f64, dq2 in -5.0..5.0f64,
            t in 0.0..10.0f64,
            eps in 0.0..0.5f64,
        ) {
            let arm = elbow();
            let r = reference_at(t);
            let est = JointState::from_slices(&[q1, q2], &[dq1, dq2]).unwrap();
            let gains = ControllerGains { epsilon: eps, ..ControllerGains::default() };
            let u = control_law(&arm, &est, &r, &gains).unwrap();
            let v = sliding_variable(&est, &r, gains.lambda_gain).unwrap();
            let terms = arm.dynamics_terms(&est).unwrap();
            let ff = &terms.inertia * &v.zeta_ddot + &terms.coriolis * &v.zeta_dot + &terms.gravity;
            prop_assert!((u - ff).norm() <= gains.kd * (1.0 + 1e-12));
        }

        #[test]
        fn switching_term_scales_linearly_with_kd(
            q1 in -PI..PI, q2 in -PI..PI,
            dq1 in -5.0..5.0f64, dq2 in -5.0..5.0f64,
            t in 0.0..10.0f64,
            c in 0.5..4.0f64,
        ) {
            let arm = elbow();
            let r = reference_at(t);
            let est = JointState::from_slices(&[q1, q2], &[dq1, dq2]).unwrap();
            let base = ControllerGains::default();
            let scaled = ControllerGains { kd: c * base.kd, ..base };
            let u0 = control_law(&arm, &est, &r, &base).unwrap();
            let u1 = control_law(&arm, &est, &r, &scaled).unwrap();
            let v = sliding_variable(&est, &r, base.lambda_gain).unwrap();
            let terms = arm.dynamics_terms(&est).unwrap();
            let ff = &terms.inertia * &v.zeta_ddot + &terms.coriolis * &v.zeta_dot + &terms.gravity;
            // switching contribution scales by exactly c
            let sw0 = u0 - &ff;
            let sw1 = u1 - &ff;
            prop_assert!((sw1 - &sw0 * c).norm() <= 1e-9 * (1.0 + sw0.norm()));
        }
    }
}
