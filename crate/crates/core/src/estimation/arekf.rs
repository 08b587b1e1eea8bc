//! Adaptive robust extension of the EKF.
//!
//! The filter monitors a forgetting-factor estimate of the real innovation
//! covariance. While the predicted innovation covariance dominates the
//! α-scaled estimate the step is a plain EKF step; once the measured
//! innovations outgrow what the filter predicts, the prediction covariance
//! is replaced by an inflated matrix Ξ built from an H∞-style correction
//!
//! ```text
//! Ξ = (P⁻¹ - γ⁻² ΓᵀΓ)⁻¹,   ΓᵀΓ = γ^p (1 - 1/λ) M⁻¹
//! ```
//!
//! where `M` is the predicted covariance by default (then Ξ = λP and γ
//! cancels for the default exponent p = 2) and λ is doubled until Ξ is
//! positive definite and bounded by λP. The larger Ξ raises the gain, so
//! the filter leans on measurements precisely when its own model has
//! stopped explaining them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

use super::{ekf_predict, GaussianBelief, NonlinearModel};

/// Maximum number of λ doublings before the robust branch gives up.
const MAX_LAMBDA_DOUBLINGS: u32 = 10;

/// How the matrix branch test `α·P_y  vs  P̄_y` is scalarized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BranchTest {
    /// Nominal branch iff trace(P̄_y) <= α · trace(P_y). Cheap and monotone
    /// in the innovation magnitude the rule is screening.
    #[serde(rename = "trace")]
    Trace,
    /// Nominal branch iff α·P_y - P̄_y is positive semi-definite.
    #[serde(rename = "min-eig")]
    MinEigenvalue,
}

/// Which covariance the robust correction ΓᵀΓ is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaBasis {
    /// The predicted covariance P_{t|t-1}; the robust branch then yields
    /// exactly Ξ = λ P_{t|t-1}.
    Predicted,
    /// The previous posterior covariance P_{t-1}.
    Posterior,
}

/// Tuning parameters of the adaptive robust filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArekfTuning {
    /// Innovation-test threshold (> 0; +∞ forces the nominal branch, so the
    /// filter degenerates to the EKF).
    pub alpha: f64,
    /// Forgetting factor of the innovation-covariance recursion, in (0, 1].
    pub rho: f64,
    /// Robustness level (≠ 0). With the default `gamma_exponent` of 2 the
    /// value cancels out of the correction.
    pub gamma: f64,
    /// Inflation bound parameter (> 0). Values below 1 are doubled by the
    /// safeguard until the correction is realizable.
    pub lambda: f64,
    pub branch_test: BranchTest,
    /// Exponent p of γ inside ΓᵀΓ. 2 makes γ cancel against the γ⁻² in the
    /// correction; 0 leaves the correction scaled by γ⁻².
    pub gamma_exponent: i32,
    pub gamma_basis: GammaBasis,
}

impl Default for ArekfTuning {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            rho: 0.97,
            gamma: 0.001,
            lambda: 0.7,
            branch_test: BranchTest::Trace,
            gamma_exponent: 2,
            gamma_basis: GammaBasis::Predicted,
        }
    }
}

impl ArekfTuning {
    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_nan() || self.alpha <= 0.0 {
            return Err(Error::Config(format!("arekf alpha must be > 0, got {}", self.alpha)));
        }
        if self.rho.is_nan() || self.rho <= 0.0 || self.rho > 1.0 {
            return Err(Error::Config(format!("arekf rho must be in (0, 1], got {}", self.rho)));
        }
        if self.gamma == 0.0 || !self.gamma.is_finite() {
            return Err(Error::Config(format!(
                "arekf gamma must be finite and non-zero, got {}",
                self.gamma
            )));
        }
        if self.lambda.is_nan() || self.lambda <= 0.0 || !self.lambda.is_finite() {
            return Err(Error::Config(format!(
                "arekf lambda must be positive and finite, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Running estimate of the real innovation covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct InnovationStats {
    /// Forgetting-factor estimate P̄_y of E[ỹ ỹᵀ].
    pub real_innovation_cov: DMatrix<f64>,
    /// Number of innovations absorbed so far.
    pub samples: usize,
}

impl InnovationStats {
    pub fn new(measurement_dim: usize) -> Self {
        Self {
            real_innovation_cov: DMatrix::zeros(measurement_dim, measurement_dim),
            samples: 0,
        }
    }

    /// Absorb one innovation: seeds with ỹỹᵀ on the first sample, then
    /// follows the recursion `(ρ P̄ + ỹỹᵀ) / (ρ + 1)`.
    pub fn absorb(&self, innovation: &DVector<f64>, rho: f64) -> Self {
        let outer = innovation * innovation.transpose();
        let updated = if self.samples == 0 {
            outer
        } else {
            (&self.real_innovation_cov * rho + outer) / (rho + 1.0)
        };
        Self {
            real_innovation_cov: linalg::symmetrize(&updated),
            samples: self.samples + 1,
        }
    }
}

/// Prediction augmented with the robust covariance Ξ used by the update.
#[derive(Debug, Clone)]
pub struct ArekfPrior {
    pub mean: DVector<f64>,
    /// Standard predicted covariance P_{t|t-1}.
    pub cov: DMatrix<f64>,
    /// Covariance handed to the measurement update (equals `cov` on the
    /// nominal branch).
    pub robust_cov: DMatrix<f64>,
    /// True when the robust branch fired this step.
    pub robust: bool,
    /// λ actually used after the doubling safeguard.
    pub lambda_used: f64,
    /// Number of λ doublings the safeguard performed.
    pub lambda_doublings: u32,
}

fn nominal_branch(
    p_y: &DMatrix<f64>,
    real_cov: &DMatrix<f64>,
    tuning: &ArekfTuning,
) -> bool {
    if tuning.alpha.is_infinite() {
        return true;
    }
    match tuning.branch_test {
        BranchTest::Trace => real_cov.trace() <= tuning.alpha * p_y.trace(),
        BranchTest::MinEigenvalue => {
            let diff = p_y * tuning.alpha - real_cov;
            let (lo, _) = linalg::eigenvalue_range(&diff);
            let scale = p_y.trace().abs().max(1e-300);
            lo >= -1e-12 * scale
        }
    }
}

/// Build Ξ for a prediction, doubling λ until Ξ is positive definite and
/// bounded by λ·P_pred. `previous_cov` is the posterior covariance of the
/// previous step (the basis choice may reference it).
fn robust_covariance(
    pred_cov: &DMatrix<f64>,
    previous_cov: &DMatrix<f64>,
    tuning: &ArekfTuning,
    step: usize,
) -> Result<(DMatrix<f64>, f64, u32)> {
    let p_inv = linalg::spd_inverse(pred_cov, "predicted covariance")
        .map_err(|_| Error::Tuning {
            step,
            msg: "predicted covariance not positive definite".into(),
        })?;
    let basis_inv = match tuning.gamma_basis {
        GammaBasis::Predicted => p_inv.clone(),
        GammaBasis::Posterior => linalg::spd_inverse(previous_cov, "previous covariance")
            .map_err(|_| Error::Tuning {
                step,
                msg: "previous covariance not positive definite".into(),
            })?,
    };

    let n = pred_cov.nrows();
    let gamma_pow = tuning.gamma.powi(tuning.gamma_exponent);
    let inv_gamma_sq = tuning.gamma.powi(-2);

    for doublings in 0..=MAX_LAMBDA_DOUBLINGS {
        let lambda = tuning.lambda * f64::powi(2.0, doublings as i32);
        // ΓᵀΓ = γ^p (1 - 1/λ) M⁻¹, realized through the clamped PSD square
        // root so a negative coefficient rounds up to Γ = 0.
        let coeff = gamma_pow * (1.0 - 1.0 / lambda);
        let gamma_mat = linalg::psd_sqrt(&(&basis_inv * coeff));
        let correction = gamma_mat.transpose() * &gamma_mat * inv_gamma_sq;
        let xi_inv = linalg::symmetrize(&(&p_inv - correction));

        let xi = match nalgebra::Cholesky::new(xi_inv) {
            Some(c) => linalg::symmetrize(&c.inverse()),
            None => continue,
        };

        // side condition: Ξ must not exceed λ·P_pred (up to round-off)
        let bound = pred_cov * lambda - &xi;
        let (lo, _) = linalg::eigenvalue_range(&bound);
        let scale = (lambda * pred_cov.trace() / n as f64).abs().max(1e-300);
        if lo >= -1e-9 * scale {
            return Ok((xi, lambda, doublings));
        }
    }
    Err(Error::Tuning {
        step,
        msg: format!(
            "no positive-definite inflated covariance within {MAX_LAMBDA_DOUBLINGS} lambda doublings"
        ),
    })
}

/// Shared tail of the prediction: absorb the innovation, run the branch
/// test and attach Ξ.
fn robustify(
    model: &NonlinearModel,
    predicted: GaussianBelief,
    previous_cov: &DMatrix<f64>,
    tuning: &ArekfTuning,
    stats: &InnovationStats,
    innovation: &DVector<f64>,
) -> Result<(ArekfPrior, InnovationStats)> {
    if innovation.len() != model.measurement_dim() {
        return Err(Error::Config(format!(
            "innovation must have length {}",
            model.measurement_dim()
        )));
    }
    let step = stats.samples;
    let updated_stats = stats.absorb(innovation, tuning.rho);

    let g = model.measurement_jacobian(&predicted.mean)?;
    let p_y =
        linalg::symmetrize(&(&g * &predicted.cov * g.transpose() + model.measurement_noise()));

    let (robust_cov, lambda_used, lambda_doublings, robust) =
        if nominal_branch(&p_y, &updated_stats.real_innovation_cov, tuning) {
            (predicted.cov.clone(), tuning.lambda, 0, false)
        } else {
            let (xi, lambda, doublings) =
                robust_covariance(&predicted.cov, previous_cov, tuning, step)?;
            (xi, lambda, doublings, true)
        };

    Ok((
        ArekfPrior {
            mean: predicted.mean,
            cov: predicted.cov,
            robust_cov,
            robust,
            lambda_used,
            lambda_doublings,
        },
        updated_stats,
    ))
}

/// Time update of the adaptive robust filter.
///
/// Performs the standard EKF prediction, absorbs `innovation` into the
/// running innovation-covariance estimate, evaluates the branch test and
/// attaches Ξ. `innovation` is the most recent measurement residual
/// (against the initial mean on the very first step).
pub fn arekf_predict(
    model: &NonlinearModel,
    belief: &GaussianBelief,
    input: &DVector<f64>,
    tuning: &ArekfTuning,
    stats: &InnovationStats,
    innovation: &DVector<f64>,
) -> Result<(ArekfPrior, InnovationStats)> {
    tuning.validate()?;
    let predicted = ekf_predict(model, belief, input)?;
    robustify(model, predicted, &belief.cov, tuning, stats, innovation)
}

/// Measurement update using the robust covariance:
/// `K = Ξ Gᵀ P_y⁻¹`, `P = (Ξ⁻¹ + Gᵀ R⁻¹ G)⁻¹`.
pub fn arekf_update(
    model: &NonlinearModel,
    prior: &ArekfPrior,
    measurement: &DVector<f64>,
) -> Result<(GaussianBelief, DVector<f64>)> {
    if measurement.len() != model.measurement_dim() {
        return Err(Error::Config(format!(
            "measurement must have length {}",
            model.measurement_dim()
        )));
    }
    let g = model.measurement_jacobian(&prior.mean)?;
    let xi = &prior.robust_cov;
    let p_y = linalg::symmetrize(&(&g * xi * g.transpose() + model.measurement_noise()));
    let p_y_inv = linalg::spd_inverse(&p_y, "innovation covariance")?;
    let gain = xi * g.transpose() * p_y_inv;

    let innovation = measurement - model.apply_measurement(&prior.mean);
    let mean = &prior.mean + &gain * &innovation;

    let xi_inv = linalg::spd_inverse(xi, "robust covariance")?;
    let r_inv = linalg::spd_inverse(model.measurement_noise(), "measurement noise")?;
    let info = linalg::symmetrize(&(xi_inv + g.transpose() * r_inv * &g));
    let cov = linalg::spd_inverse(&info, "posterior information")?;

    if !linalg::all_finite(&mean) || !linalg::all_finite_matrix(&cov) {
        return Err(Error::FilterDivergence("non-finite posterior".into()));
    }
    Ok((GaussianBelief { mean, cov }, innovation))
}

/// Diagnostics for one adaptive filter step.
#[derive(Debug, Clone)]
pub struct ArekfStepInfo {
    pub innovation: DVector<f64>,
    pub robust: bool,
    pub lambda_used: f64,
    pub lambda_doublings: u32,
}

/// Adaptive robust EKF step driver.
///
/// Mirrors [`super::Ekf`]: the first call assimilates the measurement
/// against the initial belief (which also seeds the innovation-covariance
/// estimate with the first residual); later calls predict then update.
pub struct Arekf {
    model: NonlinearModel,
    tuning: ArekfTuning,
    belief: GaussianBelief,
    stats: InnovationStats,
    steps: usize,
    robust_steps: usize,
    total_lambda_doublings: u64,
}

impl Arekf {
    pub fn new(model: NonlinearModel, initial: GaussianBelief, tuning: ArekfTuning) -> Result<Self> {
        tuning.validate()?;
        if initial.dim() != model.state_dim() {
            return Err(Error::Config("initial belief dimension does not match model".into()));
        }
        let stats = InnovationStats::new(model.measurement_dim());
        Ok(Self {
            model,
            tuning,
            belief: initial,
            stats,
            steps: 0,
            robust_steps: 0,
            total_lambda_doublings: 0,
        })
    }

    pub fn belief(&self) -> &GaussianBelief {
        &self.belief
    }

    pub fn stats(&self) -> &InnovationStats {
        &self.stats
    }

    /// Steps on which the robust branch fired so far.
    pub fn robust_steps(&self) -> usize {
        self.robust_steps
    }

    pub fn total_lambda_doublings(&self) -> u64 {
        self.total_lambda_doublings
    }

    /// Advance one step.
    pub fn step(&mut self, input: &DVector<f64>, measurement: &DVector<f64>) -> Result<ArekfStepInfo> {
        let predicted = if self.steps == 0 {
            self.belief.clone()
        } else {
            ekf_predict(&self.model, &self.belief, input)?
        };
        let innovation = measurement - self.model.apply_measurement(&predicted.mean);
        let (prior, stats) = robustify(
            &self.model,
            predicted,
            &self.belief.cov,
            &self.tuning,
            &self.stats,
            &innovation,
        )?;
        let (posterior, innovation) = arekf_update(&self.model, &prior, measurement)?;

        self.belief = posterior;
        self.stats = stats;
        self.steps += 1;
        if prior.robust {
            self.robust_steps += 1;
        }
        self.total_lambda_doublings += u64::from(prior.lambda_doublings);
        Ok(ArekfStepInfo {
            innovation,
            robust: prior.robust,
            lambda_used: prior.lambda_used,
            lambda_doublings: prior.lambda_doublings,
        })
    }
}
