//! Rigid-body dynamics of a planar elbow manipulator.
//!
//! Provides the inertia matrix `D(q)`, the Coriolis/centripetal matrix
//! `C(q, q̇)` built from Christoffel symbols (so `Ḋ - 2C` is skew-symmetric),
//! the gravity torque `G(q)` and the forward dynamics
//! `q̈ = D⁻¹(u + d - Cq̇ - G)`. The [`ManipulatorDynamics`] trait keeps the
//! joint count generic; [`ElbowDynamics`] is the concrete two-link model.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Condition-number cap beyond which the inertia matrix is treated as
/// numerically singular. Valid elbow parameters never get close.
const CONDITION_CAP: f64 = 1e12;

/// Physical parameters of an n-link manipulator.
///
/// Per link: mass (kg), rotational inertia about the centre of mass
/// (kg·m²), link length (m) and centre-of-mass offset along the link (m).
#[derive(Debug, Clone, PartialEq)]
pub struct ManipulatorParams {
    pub masses: Vec<f64>,
    pub inertias: Vec<f64>,
    pub lengths: Vec<f64>,
    pub com_offsets: Vec<f64>,
    /// Gravitational acceleration acting in the plane of motion (m/s²).
    pub gravity: f64,
}

impl ManipulatorParams {
    pub fn new(
        masses: Vec<f64>,
        inertias: Vec<f64>,
        lengths: Vec<f64>,
        com_offsets: Vec<f64>,
        gravity: f64,
    ) -> Result<Self> {
        let p = Self { masses, inertias, lengths, com_offsets, gravity };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.masses.len();
        if n == 0 {
            return Err(Error::Config("manipulator needs at least one link".into()));
        }
        if self.inertias.len() != n || self.lengths.len() != n || self.com_offsets.len() != n {
            return Err(Error::Config(format!(
                "link parameter arrays must all have length {n}"
            )));
        }
        for i in 0..n {
            let (m, ii, l, lc) = (self.masses[i], self.inertias[i], self.lengths[i], self.com_offsets[i]);
            if !(m.is_finite() && ii.is_finite() && l.is_finite() && lc.is_finite()) {
                return Err(Error::Config(format!("link {i}: non-finite parameter")));
            }
            if m <= 0.0 || ii <= 0.0 || l <= 0.0 {
                return Err(Error::Config(format!(
                    "link {i}: mass, inertia and length must be strictly positive"
                )));
            }
            if lc <= 0.0 || lc > l {
                return Err(Error::Config(format!(
                    "link {i}: centre-of-mass offset must satisfy 0 < l_c <= l"
                )));
            }
        }
        if !self.gravity.is_finite() {
            return Err(Error::Config("gravity must be finite".into()));
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.masses.len()
    }
}

impl Default for ManipulatorParams {
    /// Two identical links: 1 kg, 0.25 kg·m², 0.5 m long, COM at 0.25 m.
    fn default() -> Self {
        Self {
            masses: vec![1.0, 1.0],
            inertias: vec![0.25, 0.25],
            lengths: vec![0.5, 0.5],
            com_offsets: vec![0.25, 0.25],
            gravity: 9.81,
        }
    }
}

/// Joint angles and velocities; the state the filters estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub dq: DVector<f64>,
}

impl JointState {
    pub fn new(q: DVector<f64>, dq: DVector<f64>) -> Result<Self> {
        if q.len() != dq.len() || q.is_empty() {
            return Err(Error::Config(format!(
                "joint state needs matching non-empty q ({}) and dq ({})",
                q.len(),
                dq.len()
            )));
        }
        if !(linalg::all_finite(&q) && linalg::all_finite(&dq)) {
            return Err(Error::Config("joint state entries must be finite".into()));
        }
        Ok(Self { q, dq })
    }

    pub fn from_slices(q: &[f64], dq: &[f64]) -> Result<Self> {
        Self::new(DVector::from_row_slice(q), DVector::from_row_slice(dq))
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }

    /// Stack into the filter state layout `[q; dq]`.
    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.dof();
        let mut x = DVector::zeros(2 * n);
        x.rows_mut(0, n).copy_from(&self.q);
        x.rows_mut(n, n).copy_from(&self.dq);
        x
    }

    /// Split a stacked `[q; dq]` vector back into a state.
    pub fn from_vector(x: &DVector<f64>) -> Result<Self> {
        if !x.len().is_multiple_of(2) || x.is_empty() {
            return Err(Error::Config(format!(
                "stacked state must have even non-zero length, got {}",
                x.len()
            )));
        }
        let n = x.len() / 2;
        Ok(Self {
            q: x.rows(0, n).into_owned(),
            dq: x.rows(n, n).into_owned(),
        })
    }

    pub fn is_finite(&self) -> bool {
        linalg::all_finite(&self.q) && linalg::all_finite(&self.dq)
    }
}

/// The dynamics terms of the motion equation at one state.
#[derive(Debug, Clone)]
pub struct DynamicsTerms {
    /// Inertia matrix, symmetric positive definite.
    pub inertia: DMatrix<f64>,
    /// Coriolis/centripetal matrix (Christoffel construction).
    pub coriolis: DMatrix<f64>,
    /// Gravity torque vector.
    pub gravity: DVector<f64>,
}

/// Extreme eigenvalues of the inertia matrix over a configuration grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InertiaBounds {
    /// Smallest eigenvalue of D(q) seen on the grid (α₁ = λ_m).
    pub lambda_min: f64,
    /// Largest eigenvalue of D(q) seen on the grid (α₂ = λ_M).
    pub lambda_max: f64,
}

/// Rigid-link manipulator dynamics for an arbitrary joint count.
pub trait ManipulatorDynamics {
    fn dof(&self) -> usize;

    fn params(&self) -> &ManipulatorParams;

    /// Inertia matrix D(q), symmetric positive definite.
    fn mass_matrix(&self, q: &DVector<f64>) -> Result<DMatrix<f64>>;

    /// Coriolis/centripetal matrix C(q, q̇) such that Ḋ - 2C is skew-symmetric.
    fn coriolis_matrix(&self, state: &JointState) -> Result<DMatrix<f64>>;

    /// Gravity torque G(q).
    fn gravity_vector(&self, q: &DVector<f64>) -> Result<DVector<f64>>;

    fn dynamics_terms(&self, state: &JointState) -> Result<DynamicsTerms> {
        Ok(DynamicsTerms {
            inertia: self.mass_matrix(&state.q)?,
            coriolis: self.coriolis_matrix(state)?,
            gravity: self.gravity_vector(&state.q)?,
        })
    }

    /// Joint accelerations q̈ = D⁻¹(u + d - Cq̇ - G).
    fn forward_dynamics(
        &self,
        state: &JointState,
        torque: &DVector<f64>,
        disturbance: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let n = self.dof();
        if torque.len() != n || disturbance.len() != n {
            return Err(Error::Config(format!(
                "torque and disturbance must have length {n}"
            )));
        }
        let terms = self.dynamics_terms(state)?;
        let (lo, hi) = linalg::eigenvalue_range(&terms.inertia);
        if lo <= 0.0 || hi / lo > CONDITION_CAP {
            return Err(Error::Dynamics(format!(
                "inertia matrix numerically singular (eigenvalues {lo:.3e}..{hi:.3e})"
            )));
        }
        let rhs = torque + disturbance - &terms.coriolis * &state.dq - &terms.gravity;
        linalg::spd_solve(&terms.inertia, &rhs, "inertia matrix")
            .map_err(|_| Error::Dynamics("inertia matrix solve failed".into()))
    }
}

/// Closed-form dynamics of the two-link planar elbow arm.
///
/// Angles are measured from the horizontal axis, gravity acts in the plane
/// of motion, and the second joint angle is relative to the first link.
#[derive(Debug, Clone)]
pub struct ElbowDynamics {
    params: ManipulatorParams,
}

impl ElbowDynamics {
    pub fn new(params: ManipulatorParams) -> Result<Self> {
        params.validate()?;
        if params.dof() != 2 {
            return Err(Error::Config(format!(
                "elbow model is two-link, got {} links",
                params.dof()
            )));
        }
        Ok(Self { params })
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != 2 {
            return Err(Error::Config(format!("expected 2 joints, got {len}")));
        }
        Ok(())
    }

    /// Velocity-independent coupling coefficient h(q₂) = -m₂ l₁ l_c2 sin q₂.
    fn coupling(&self, q2: f64) -> f64 {
        let p = &self.params;
        -p.masses[1] * p.lengths[0] * p.com_offsets[1] * q2.sin()
    }

    /// Gravitational potential energy (zero at the horizontal configuration).
    pub fn potential_energy(&self, q: &DVector<f64>) -> f64 {
        let p = &self.params;
        let y1 = p.com_offsets[0] * q[0].sin();
        let y2 = p.lengths[0] * q[0].sin() + p.com_offsets[1] * (q[0] + q[1]).sin();
        p.gravity * (p.masses[0] * y1 + p.masses[1] * y2)
    }

    /// Kinetic energy ½ q̇ᵀ D(q) q̇.
    pub fn kinetic_energy(&self, state: &JointState) -> Result<f64> {
        let d = self.mass_matrix(&state.q)?;
        Ok(0.5 * (state.dq.transpose() * d * &state.dq)[(0, 0)])
    }

    /// Total mechanical energy of the arm.
    pub fn mechanical_energy(&self, state: &JointState) -> Result<f64> {
        Ok(self.kinetic_energy(state)? + self.potential_energy(&state.q))
    }

    /// Partial derivatives of the joint accelerations with respect to the
    /// state, `(∂q̈/∂q, ∂q̈/∂q̇)`, for a fixed applied torque.
    ///
    /// Used to build the analytic process Jacobian of the filter model.
    pub fn acceleration_partials(
        &self,
        state: &JointState,
        torque: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_dim(state.dof())?;
        let p = &self.params;
        let (q1, q2) = (state.q[0], state.q[1]);
        let (dq1, dq2) = (state.dq[0], state.dq[1]);
        let g0 = p.gravity;
        let (m1, m2) = (p.masses[0], p.masses[1]);
        let (l1, lc1, lc2) = (p.lengths[0], p.com_offsets[0], p.com_offsets[1]);

        let d = self.mass_matrix(&state.q)?;
        let d_inv = linalg::spd_inverse(&d, "inertia matrix")
            .map_err(|_| Error::Dynamics("inertia matrix not positive definite".into()))?;
        let zero_d = DVector::zeros(2);
        let qdd = self.forward_dynamics(state, torque, &zero_d)?;

        // ∂D/∂q2 (D depends on q only through cos q2)
        let k = m2 * l1 * lc2 * q2.sin();
        let dd_dq2 = DMatrix::from_row_slice(2, 2, &[-2.0 * k, -k, -k, 0.0]);

        let h = self.coupling(q2);
        let dh_dq2 = -m2 * l1 * lc2 * q2.cos();

        // C q̇ = [h (2 q̇1 q̇2 + q̇2²), -h q̇1²]
        let cdq_dq2 = DVector::from_row_slice(&[
            dh_dq2 * (2.0 * dq1 * dq2 + dq2 * dq2),
            -dh_dq2 * dq1 * dq1,
        ]);
        let cdq_ddq1 = DVector::from_row_slice(&[2.0 * h * dq2, -2.0 * h * dq1]);
        let cdq_ddq2 = DVector::from_row_slice(&[2.0 * h * (dq1 + dq2), 0.0]);

        // ∂G/∂q
        let s1 = (m1 * lc1 + m2 * l1) * g0 * q1.sin();
        let s12 = m2 * lc2 * g0 * (q1 + q2).sin();
        let dg = DMatrix::from_row_slice(2, 2, &[-s1 - s12, -s12, -s12, -s12]);

        // ∂q̈/∂q_k = D⁻¹(-∂D/∂q_k q̈ - ∂(Cq̇)/∂q_k - ∂G/∂q_k)
        let col_q1 = &d_inv * (-dg.column(0).into_owned());
        let col_q2 = &d_inv * (-(&dd_dq2 * &qdd) - cdq_dq2 - dg.column(1).into_owned());
        let mut ddq_dq = DMatrix::zeros(2, 2);
        ddq_dq.set_column(0, &col_q1);
        ddq_dq.set_column(1, &col_q2);

        let col_v1 = &d_inv * (-cdq_ddq1);
        let col_v2 = &d_inv * (-cdq_ddq2);
        let mut ddq_ddq = DMatrix::zeros(2, 2);
        ddq_ddq.set_column(0, &col_v1);
        ddq_ddq.set_column(1, &col_v2);

        Ok((ddq_dq, ddq_ddq))
    }
}

impl ManipulatorDynamics for ElbowDynamics {
    fn dof(&self) -> usize {
        2
    }

    fn params(&self) -> &ManipulatorParams {
        &self.params
    }

    fn mass_matrix(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(q.len())?;
        let p = &self.params;
        let (m1, m2) = (p.masses[0], p.masses[1]);
        let (i1, i2) = (p.inertias[0], p.inertias[1]);
        let (l1, lc1, lc2) = (p.lengths[0], p.com_offsets[0], p.com_offsets[1]);
        let c2 = q[1].cos();

        let d11 = m1 * lc1 * lc1
            + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * c2)
            + i1
            + i2;
        let d12 = m2 * (lc2 * lc2 + l1 * lc2 * c2) + i2;
        let d22 = m2 * lc2 * lc2 + i2;
        Ok(DMatrix::from_row_slice(2, 2, &[d11, d12, d12, d22]))
    }

    fn coriolis_matrix(&self, state: &JointState) -> Result<DMatrix<f64>> {
        self.check_dim(state.dof())?;
        let h = self.coupling(state.q[1]);
        let (dq1, dq2) = (state.dq[0], state.dq[1]);
        Ok(DMatrix::from_row_slice(
            2,
            2,
            &[h * dq2, h * (dq1 + dq2), -h * dq1, 0.0],
        ))
    }

    fn gravity_vector(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(q.len())?;
        let p = &self.params;
        let (m1, m2) = (p.masses[0], p.masses[1]);
        let (l1, lc1, lc2) = (p.lengths[0], p.com_offsets[0], p.com_offsets[1]);
        let g0 = p.gravity;
        let g1 = (m1 * lc1 + m2 * l1) * g0 * q[0].cos() + m2 * lc2 * g0 * (q[0] + q[1]).cos();
        let g2 = m2 * lc2 * g0 * (q[0] + q[1]).cos();
        Ok(DVector::from_row_slice(&[g1, g2]))
    }
}

/// Extreme eigenvalues of D(q) over a set of configuration samples.
///
/// Errors if the inertia matrix is not positive definite at any sample.
pub fn inertia_bounds<M: ManipulatorDynamics>(
    dynamics: &M,
    grid: &[DVector<f64>],
) -> Result<InertiaBounds> {
    if grid.is_empty() {
        return Err(Error::Config("inertia bounds need a non-empty sample grid".into()));
    }
    let mut lambda_min = f64::INFINITY;
    let mut lambda_max = f64::NEG_INFINITY;
    for q in grid {
        let d = dynamics.mass_matrix(q)?;
        let (lo, hi) = linalg::eigenvalue_range(&d);
        if lo <= 0.0 {
            return Err(Error::Dynamics(format!(
                "inertia matrix not positive definite at q = {q:?} (min eigenvalue {lo:.3e})"
            )));
        }
        lambda_min = lambda_min.min(lo);
        lambda_max = lambda_max.max(hi);
    }
    Ok(InertiaBounds { lambda_min, lambda_max })
}

/// Uniform two-joint grid over [-π, π] × [-π, π], inclusive of the endpoints
/// and of q = 0 when the per-axis count is odd.
pub fn uniform_elbow_grid(count_per_axis: usize) -> Vec<DVector<f64>> {
    use std::f64::consts::PI;
    let n = count_per_axis.max(2);
    let mut grid = Vec::with_capacity(n * n);
    for i in 0..n {
        let q1 = -PI + 2.0 * PI * i as f64 / (n - 1) as f64;
        for j in 0..n {
            let q2 = -PI + 2.0 * PI * j as f64 / (n - 1) as f64;
            grid.push(DVector::from_row_slice(&[q1, q2]));
        }
    }
    grid
}
