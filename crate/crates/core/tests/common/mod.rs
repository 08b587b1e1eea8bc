//! Independent oracles for the integration suites.
//!
//! The dynamics oracles derive every quantity from link kinematics and
//! energies, never from the closed-form matrices under test. The Kalman
//! oracle is a plain textbook implementation of the linear filter.

#![allow(dead_code)]

use manipsim::ManipulatorParams;
use nalgebra::{DMatrix, DVector};

/// Kinetic energy of the elbow arm from centre-of-mass velocities.
pub fn kinetic_energy_oracle(p: &ManipulatorParams, q: &DVector<f64>, dq: &DVector<f64>) -> f64 {
    let (m1, m2) = (p.masses[0], p.masses[1]);
    let (i1, i2) = (p.inertias[0], p.inertias[1]);
    let (l1, lc1, lc2) = (p.lengths[0], p.com_offsets[0], p.com_offsets[1]);
    let (q1, q12) = (q[0], q[0] + q[1]);
    let (w1, w2) = (dq[0], dq[0] + dq[1]);

    // differentiated COM positions
    let v1x = -lc1 * q1.sin() * w1;
    let v1y = lc1 * q1.cos() * w1;
    let v2x = -l1 * q1.sin() * w1 - lc2 * q12.sin() * w2;
    let v2y = l1 * q1.cos() * w1 + lc2 * q12.cos() * w2;

    0.5 * m1 * (v1x * v1x + v1y * v1y)
        + 0.5 * i1 * w1 * w1
        + 0.5 * m2 * (v2x * v2x + v2y * v2y)
        + 0.5 * i2 * w2 * w2
}

/// Gravitational potential energy from centre-of-mass heights.
pub fn potential_energy_oracle(p: &ManipulatorParams, q: &DVector<f64>) -> f64 {
    let (m1, m2) = (p.masses[0], p.masses[1]);
    let (l1, lc1, lc2) = (p.lengths[0], p.com_offsets[0], p.com_offsets[1]);
    let y1 = lc1 * q[0].sin();
    let y2 = l1 * q[0].sin() + lc2 * (q[0] + q[1]).sin();
    p.gravity * (m1 * y1 + m2 * y2)
}

/// Inertia matrix from the kinetic energy: the polarization identity
/// D_ij = K(e_i + e_j) - K(e_i) - K(e_j) is exact for a quadratic form.
pub fn mass_matrix_oracle(p: &ManipulatorParams, q: &DVector<f64>) -> DMatrix<f64> {
    let n = q.len();
    let k = |dq: &DVector<f64>| kinetic_energy_oracle(p, q, dq);
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut ei = DVector::zeros(n);
        ei[i] = 1.0;
        for j in i..n {
            let mut ej = DVector::zeros(n);
            ej[j] = 1.0;
            let dij = k(&(&ei + &ej)) - k(&ei) - k(&ej);
            d[(i, j)] = dij;
            d[(j, i)] = dij;
        }
    }
    d
}

/// Gravity torque as the finite-difference gradient of the potential
/// energy.
pub fn gravity_oracle(p: &ManipulatorParams, q: &DVector<f64>) -> DVector<f64> {
    let n = q.len();
    let h = 1e-6;
    DVector::from_fn(n, |j, _| {
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[j] += h;
        qm[j] -= h;
        (potential_energy_oracle(p, &qp) - potential_energy_oracle(p, &qm)) / (2.0 * h)
    })
}

/// Coriolis matrix from Christoffel symbols of the oracle inertia matrix,
/// with the partial derivatives taken by central differences.
pub fn coriolis_oracle(p: &ManipulatorParams, q: &DVector<f64>, dq: &DVector<f64>) -> DMatrix<f64> {
    let n = q.len();
    let h = 1e-6;
    // dd[i] = ∂D/∂q_i
    let mut dd = Vec::with_capacity(n);
    for i in 0..n {
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[i] += h;
        qm[i] -= h;
        dd.push((mass_matrix_oracle(p, &qp) - mass_matrix_oracle(p, &qm)) / (2.0 * h));
    }
    let mut c = DMatrix::zeros(n, n);
    for k in 0..n {
        for j in 0..n {
            let mut entry = 0.0;
            for i in 0..n {
                entry += 0.5 * (dd[i][(k, j)] + dd[j][(k, i)] - dd[k][(i, j)]) * dq[i];
            }
            c[(k, j)] = entry;
        }
    }
    c
}

/// Plain linear Kalman filter; the reference path for the EKF on linear
/// models.
pub struct TextbookKf {
    pub a: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl TextbookKf {
    pub fn predict(&mut self) {
        self.x = &self.a * &self.x;
        self.p = &self.a * &self.p * self.a.transpose() + &self.q;
        self.p = (&self.p + self.p.transpose()) * 0.5;
    }

    pub fn update(&mut self, y: &DVector<f64>) {
        let s = &self.h * &self.p * self.h.transpose() + &self.r;
        let k = &self.p * self.h.transpose() * s.try_inverse().expect("S invertible");
        self.x += &k * (y - &self.h * &self.x);
        let i = DMatrix::identity(self.p.nrows(), self.p.ncols());
        self.p = (i - &k * &self.h) * &self.p;
        self.p = (&self.p + self.p.transpose()) * 0.5;
    }
}

/// Two-sided chi-square interval for the mean of `count` independent
/// chi-square variables with `dof_each` degrees of freedom.
pub fn chi2_mean_interval(dof_each: usize, count: usize, confidence: f64) -> (f64, f64) {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let dof = (dof_each * count) as f64;
    let dist = ChiSquared::new(dof).expect("valid dof");
    let tail = (1.0 - confidence) / 2.0;
    (
        dist.inverse_cdf(tail) / count as f64,
        dist.inverse_cdf(1.0 - tail) / count as f64,
    )
}
