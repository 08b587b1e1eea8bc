//! Discrete-time nonlinear Gaussian filtering.
//!
//! [`NonlinearModel`] wraps a process map, a measurement map and the noise
//! covariances; Jacobians are either supplied analytically or obtained by
//! central differences. [`ekf_predict`]/[`ekf_update`] are the stateless
//! filter equations, [`Ekf`] the step driver used by the simulation loop.

mod arekf;

pub use arekf::{
    arekf_predict, arekf_update, Arekf, ArekfPrior, ArekfTuning, BranchTest, GammaBasis,
    InnovationStats,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

type ProcessFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;
type MeasurementFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type ProcessJacFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync;
type MeasurementJacFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// Default base step for finite-difference Jacobians; scaled per component
/// by `max(1, |x_i|)`.
pub const DEFAULT_JACOBIAN_STEP: f64 = 1e-6;

/// A discrete-time process/measurement model with Gaussian noise.
pub struct NonlinearModel {
    state_dim: usize,
    measurement_dim: usize,
    process: Box<ProcessFn>,
    measurement: Box<MeasurementFn>,
    process_noise: DMatrix<f64>,
    measurement_noise: DMatrix<f64>,
    process_jacobian: Option<Box<ProcessJacFn>>,
    measurement_jacobian: Option<Box<MeasurementJacFn>>,
    jacobian_step: f64,
}

impl NonlinearModel {
    /// Build a model from the process map `f(x, u)`, measurement map `g(x)`
    /// and noise covariances. Q must be symmetric PSD, R symmetric PD.
    pub fn new(
        state_dim: usize,
        measurement_dim: usize,
        process: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        measurement: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        process_noise: DMatrix<f64>,
        measurement_noise: DMatrix<f64>,
    ) -> Result<Self> {
        if process_noise.nrows() != state_dim || process_noise.ncols() != state_dim {
            return Err(Error::Config(format!(
                "process noise must be {state_dim}x{state_dim}"
            )));
        }
        if measurement_noise.nrows() != measurement_dim
            || measurement_noise.ncols() != measurement_dim
        {
            return Err(Error::Config(format!(
                "measurement noise must be {measurement_dim}x{measurement_dim}"
            )));
        }
        check_symmetric(&process_noise, "process noise")?;
        check_symmetric(&measurement_noise, "measurement noise")?;
        let (q_min, _) = linalg::eigenvalue_range(&process_noise);
        if q_min < -1e-12 {
            return Err(Error::Config("process noise must be positive semi-definite".into()));
        }
        let (r_min, _) = linalg::eigenvalue_range(&measurement_noise);
        if r_min <= 0.0 {
            return Err(Error::Config("measurement noise must be positive definite".into()));
        }
        Ok(Self {
            state_dim,
            measurement_dim,
            process: Box::new(process),
            measurement: Box::new(measurement),
            process_noise,
            measurement_noise,
            process_jacobian: None,
            measurement_jacobian: None,
            jacobian_step: DEFAULT_JACOBIAN_STEP,
        })
    }

    /// Attach an analytic process Jacobian ∂f/∂x.
    pub fn with_process_jacobian(
        mut self,
        jac: impl Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.process_jacobian = Some(Box::new(jac));
        self
    }

    /// Attach an analytic measurement Jacobian ∂g/∂x.
    pub fn with_measurement_jacobian(
        mut self,
        jac: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.measurement_jacobian = Some(Box::new(jac));
        self
    }

    pub fn with_jacobian_step(mut self, step: f64) -> Self {
        self.jacobian_step = step;
        self
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn measurement_dim(&self) -> usize {
        self.measurement_dim
    }

    pub fn process_noise(&self) -> &DMatrix<f64> {
        &self.process_noise
    }

    pub fn measurement_noise(&self) -> &DMatrix<f64> {
        &self.measurement_noise
    }

    pub fn apply_process(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.process)(x, u)
    }

    pub fn apply_measurement(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.measurement)(x)
    }

    pub fn has_analytic_process_jacobian(&self) -> bool {
        self.process_jacobian.is_some()
    }

    /// Process Jacobian at (x, u): analytic when supplied, else central
    /// finite differences.
    pub fn process_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        match &self.process_jacobian {
            Some(j) => Ok(j(x, u)),
            None => numeric_jacobian(|v| (self.process)(v, u), x, self.jacobian_step),
        }
    }

    /// Measurement Jacobian at x: analytic when supplied, else central
    /// finite differences.
    pub fn measurement_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        match &self.measurement_jacobian {
            Some(j) => Ok(j(x)),
            None => numeric_jacobian(|v| (self.measurement)(v), x, self.jacobian_step),
        }
    }
}

fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let scale = m.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1.0);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-9 * scale {
                return Err(Error::Config(format!("{what} must be symmetric")));
            }
        }
    }
    Ok(())
}

/// State mean and covariance of a Gaussian filter.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::Config(format!("covariance must be {n}x{n}")));
        }
        check_symmetric(&cov, "belief covariance")?;
        let (lo, _) = linalg::eigenvalue_range(&cov);
        if lo < -1e-12 {
            return Err(Error::Config("belief covariance must be positive semi-definite".into()));
        }
        Ok(Self { mean, cov: linalg::symmetrize(&cov) })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_finite(&self) -> bool {
        linalg::all_finite(&self.mean) && linalg::all_finite_matrix(&self.cov)
    }
}

/// Central-difference Jacobian of `map` at `x`.
///
/// Entry (i, j) is `(map(x + h_j e_j)_i - map(x - h_j e_j)_i) / (2 h_j)`
/// with the per-component step `h_j = step * max(1, |x_j|)`.
pub fn numeric_jacobian(
    map: impl Fn(&DVector<f64>) -> DVector<f64>,
    x: &DVector<f64>,
    step: f64,
) -> Result<DMatrix<f64>> {
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::Numeric(format!("finite-difference step must be positive, got {step}")));
    }
    let n = x.len();
    let probe = map(x);
    if !linalg::all_finite(&probe) {
        return Err(Error::Numeric("map produced a non-finite value".into()));
    }
    let m = probe.len();
    let mut jac = DMatrix::zeros(m, n);
    for j in 0..n {
        let h = step * x[j].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let fp = map(&xp);
        let fm = map(&xm);
        if !(linalg::all_finite(&fp) && linalg::all_finite(&fm)) {
            return Err(Error::Numeric("map produced a non-finite value".into()));
        }
        let col = (fp - fm) / (2.0 * h);
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// Time update: propagate the mean through the process map and the
/// covariance through the linearization, `P⁻ = F P Fᵀ + Q`.
pub fn ekf_predict(
    model: &NonlinearModel,
    belief: &GaussianBelief,
    input: &DVector<f64>,
) -> Result<GaussianBelief> {
    let f = model.process_jacobian(&belief.mean, input)?;
    let mean = model.apply_process(&belief.mean, input);
    let cov = linalg::symmetrize(&(&f * &belief.cov * f.transpose() + model.process_noise()));
    if !linalg::all_finite(&mean) || !linalg::all_finite_matrix(&cov) {
        return Err(Error::FilterDivergence("non-finite prediction".into()));
    }
    Ok(GaussianBelief { mean, cov })
}

/// Measurement update. Returns the posterior belief and the innovation
/// `y - g(x⁻)`.
pub fn ekf_update(
    model: &NonlinearModel,
    prior: &GaussianBelief,
    measurement: &DVector<f64>,
) -> Result<(GaussianBelief, DVector<f64>)> {
    if measurement.len() != model.measurement_dim() {
        return Err(Error::Config(format!(
            "measurement must have length {}",
            model.measurement_dim()
        )));
    }
    let h = model.measurement_jacobian(&prior.mean)?;
    let innovation = measurement - model.apply_measurement(&prior.mean);
    let s = linalg::symmetrize(&(&h * &prior.cov * h.transpose() + model.measurement_noise()));
    let s_inv = linalg::spd_inverse(&s, "innovation covariance")?;
    let gain = &prior.cov * h.transpose() * s_inv;
    let mean = &prior.mean + &gain * &innovation;
    let identity = DMatrix::identity(prior.dim(), prior.dim());
    let cov = linalg::symmetrize(&((identity - &gain * &h) * &prior.cov));
    if !linalg::all_finite(&mean) || !linalg::all_finite_matrix(&cov) {
        return Err(Error::FilterDivergence("non-finite posterior".into()));
    }
    Ok((GaussianBelief { mean, cov }, innovation))
}

/// Extended Kalman filter step driver.
///
/// The first call assimilates the measurement against the initial belief
/// without propagation; later calls predict with the supplied input and
/// then update.
pub struct Ekf {
    model: NonlinearModel,
    belief: GaussianBelief,
    steps: usize,
}

impl Ekf {
    pub fn new(model: NonlinearModel, initial: GaussianBelief) -> Result<Self> {
        if initial.dim() != model.state_dim() {
            return Err(Error::Config("initial belief dimension does not match model".into()));
        }
        Ok(Self { model, belief: initial, steps: 0 })
    }

    pub fn belief(&self) -> &GaussianBelief {
        &self.belief
    }

    pub fn model(&self) -> &NonlinearModel {
        &self.model
    }

    /// Advance one step; returns the innovation.
    pub fn step(&mut self, input: &DVector<f64>, measurement: &DVector<f64>) -> Result<DVector<f64>> {
        let prior = if self.steps == 0 {
            self.belief.clone()
        } else {
            ekf_predict(&self.model, &self.belief, input)?
        };
        let (posterior, innovation) = ekf_update(&self.model, &prior, measurement)?;
        self.belief = posterior;
        self.steps += 1;
        Ok(innovation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn identity_model(n: usize, q: f64, r: f64) -> NonlinearModel {
        NonlinearModel::new(
            n,
            n,
            |x, _u| x.clone(),
            |x| x.clone(),
            DMatrix::identity(n, n) * q,
            DMatrix::identity(n, n) * r,
        )
        .unwrap()
    }

    #[test]
    fn filters_are_send_and_sync() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<NonlinearModel>();
        assert_send_sync::<Ekf>();
        assert_send_sync::<super::Arekf>();
        assert_send_sync::<GaussianBelief>();
    }

    #[test]
    fn numeric_jacobian_of_identity() {
        let x = DVector::from_row_slice(&[1.0, -2.0, 0.5]);
        let j = numeric_jacobian(|v| v.clone(), &x, 1e-6).unwrap();
        assert_relative_eq!(j, DMatrix::identity(3, 3), epsilon = 1e-9);
    }

    #[test]
    fn numeric_jacobian_of_square() {
        let x = DVector::from_row_slice(&[2.0]);
        let j = numeric_jacobian(|v| v.map(|e| e * e), &x, 1e-6).unwrap();
        assert_relative_eq!(j[(0, 0)], 4.0, epsilon = 1e-6);
    }

    #[test]
    fn numeric_jacobian_rejects_non_finite_maps() {
        let x = DVector::from_row_slice(&[0.0]);
        let err = numeric_jacobian(|v| v.map(|e| 1.0 / e), &x, 1e-6).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn predict_identity_with_zero_noise_is_identity() {
        let model = NonlinearModel::new(
            2,
            2,
            |x, _u| x.clone(),
            |x| x.clone(),
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let belief = GaussianBelief::new(
            DVector::from_row_slice(&[1.0, 2.0]),
            DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]),
        )
        .unwrap();
        let out = ekf_predict(&model, &belief, &DVector::zeros(1)).unwrap();
        assert_relative_eq!(out.mean, belief.mean, epsilon = 1e-9);
        assert_relative_eq!(out.cov, belief.cov, epsilon = 1e-9);
    }

    #[test]
    fn predict_scalar_square_map() {
        // f(x) = x², x̂=2, P=1, Q=0: F = 4, so mean 4 and covariance 16
        let model = NonlinearModel::new(
            1,
            1,
            |x, _u| x.map(|e| e * e),
            |x| x.clone(),
            DMatrix::zeros(1, 1),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let belief = GaussianBelief::new(
            DVector::from_row_slice(&[2.0]),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let out = ekf_predict(&model, &belief, &DVector::zeros(1)).unwrap();
        assert_relative_eq!(out.mean[0], 4.0, epsilon = 1e-12);
        assert_relative_eq!(out.cov[(0, 0)], 16.0, epsilon = 1e-6);
    }

    #[test]
    fn update_identity_unit_covariances_halves() {
        let model = identity_model(3, 0.0, 1.0);
        let prior = GaussianBelief::new(DVector::zeros(3), DMatrix::identity(3, 3)).unwrap();
        let y = DVector::from_row_slice(&[1.0, 0.0, -1.0]);
        let (post, innovation) = ekf_update(&model, &prior, &y).unwrap();
        assert_relative_eq!(post.cov, DMatrix::identity(3, 3) * 0.5, epsilon = 1e-12);
        assert_relative_eq!(post.mean, &y * 0.5, epsilon = 1e-12);
        assert_relative_eq!(innovation, y, epsilon = 1e-12);
    }

    #[test]
    fn update_uninformative_measurement_keeps_prior() {
        // g(x) = const has a zero Jacobian, so the gain is zero
        let model = NonlinearModel::new(
            2,
            1,
            |x, _u| x.clone(),
            |_x| DVector::from_row_slice(&[3.0]),
            DMatrix::zeros(2, 2),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let prior = GaussianBelief::new(
            DVector::from_row_slice(&[1.0, -1.0]),
            DMatrix::identity(2, 2) * 0.7,
        )
        .unwrap();
        let y = DVector::from_row_slice(&[10.0]);
        let (post, _) = ekf_update(&model, &prior, &y).unwrap();
        assert_relative_eq!(post.mean, prior.mean, epsilon = 1e-12);
        assert_relative_eq!(post.cov, prior.cov, epsilon = 1e-12);
    }

    #[test]
    fn update_near_perfect_measurement_pins_mean() {
        let model = identity_model(2, 0.0, 1e-12);
        let prior = GaussianBelief::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let y = DVector::from_row_slice(&[0.3, -0.8]);
        let (post, _) = ekf_update(&model, &prior, &y).unwrap();
        assert!((post.mean - &y).norm() < 1e-6);
    }

    #[test]
    fn covariances_stay_symmetric_psd_over_many_random_steps() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);

        // stable linear model x' = A x with |eigenvalues| < 1
        let a = DMatrix::from_row_slice(4, 4, &[
            0.9, 0.05, 0.0, 0.0,
            -0.05, 0.9, 0.0, 0.02,
            0.0, 0.0, 0.8, 0.1,
            0.01, 0.0, -0.1, 0.8,
        ]);
        let a_jac = a.clone();
        let model = NonlinearModel::new(
            4,
            4,
            move |x, _u| &a * x,
            |x| x.clone(),
            DMatrix::identity(4, 4) * 1e-4,
            DMatrix::identity(4, 4) * 1e-2,
        )
        .unwrap()
        .with_process_jacobian(move |_x, _u| a_jac.clone())
        .with_measurement_jacobian(|_x| DMatrix::identity(4, 4));

        let mut filter = Ekf::new(
            model,
            GaussianBelief::new(DVector::zeros(4), DMatrix::identity(4, 4)).unwrap(),
        )
        .unwrap();
        let u = DVector::zeros(1);
        for _ in 0..10_000 {
            let y = DVector::from_fn(4, |_, _| {
                let n: f64 = StandardNormal.sample(&mut rng);
                n * 0.1
            });
            filter.step(&u, &y).unwrap();
            let cov = &filter.belief().cov;
            assert_relative_eq!(cov, &linalg::symmetrize(cov), epsilon = 1e-14);
            let (lo, _) = linalg::eigenvalue_range(cov);
            assert!(lo >= -1e-12, "covariance lost positive semi-definiteness: {lo}");
        }
    }

    #[test]
    fn joseph_form_agrees_with_standard_update() {
        let model = identity_model(3, 1e-3, 0.5);
        let prior = GaussianBelief::new(
            DVector::from_row_slice(&[0.2, -0.4, 1.0]),
            DMatrix::from_row_slice(3, 3, &[
                1.0, 0.2, 0.0,
                0.2, 0.8, -0.1,
                0.0, -0.1, 0.6,
            ]),
        )
        .unwrap();
        let y = DVector::from_row_slice(&[0.5, 0.0, 0.9]);
        let (post, _) = ekf_update(&model, &prior, &y).unwrap();

        // Joseph-form recomputation
        let h = DMatrix::identity(3, 3);
        let s = &h * &prior.cov * h.transpose() + model.measurement_noise();
        let k = &prior.cov * h.transpose() * s.try_inverse().unwrap();
        let i_kh = DMatrix::identity(3, 3) - &k * &h;
        let joseph = &i_kh * &prior.cov * i_kh.transpose()
            + &k * model.measurement_noise() * k.transpose();
        assert_relative_eq!(post.cov, joseph, epsilon = 1e-8);
    }

    #[test]
    fn rejects_indefinite_measurement_noise() {
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let out = NonlinearModel::new(
            2,
            2,
            |x, _u| x.clone(),
            |x| x.clone(),
            DMatrix::zeros(2, 2),
            r,
        );
        assert!(out.is_err());
    }
}
