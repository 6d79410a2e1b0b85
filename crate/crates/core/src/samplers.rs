//! DPS, ΠGDM and CGDM as conditional DDPM samplers.
//!
//! Under a Gaussian prior each guided backward step is affine in the current
//! state, `y_{t-1} = lin_t y_t + shift_t + √β_t z_t`, which is what makes the
//! closed-form propagation in [`crate::analysis`] possible.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{self, DiffusedPrior, GaussianLaw, GaussianSampler, LinearInverseProblem};
use crate::linalg;
use crate::schedule::Schedule;

/// States with a norm above this are treated as a divergence.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Choice of the noisy-likelihood covariance `C_{v|t}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum GuidanceModel {
    #[serde(rename = "dps")]
    Dps { alpha_dps: f64 },
    #[serde(rename = "pigdm")]
    PiGdm,
    #[serde(rename = "cgdm")]
    Cgdm,
}

impl GuidanceModel {
    pub fn validate(&self) -> Result<()> {
        if let GuidanceModel::Dps { alpha_dps } = self {
            if !(*alpha_dps > 0.0 && alpha_dps.is_finite()) {
                return Err(Error::Parameter(format!("alpha_dps must be > 0, got {alpha_dps}")));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            GuidanceModel::Dps { .. } => "DPS",
            GuidanceModel::PiGdm => "PiGDM",
            GuidanceModel::Cgdm => "CGDM",
        }
    }
}

impl fmt::Display for GuidanceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One backward step `y ↦ lin·y + shift + √noise_var·z`.
#[derive(Debug, Clone)]
pub struct BackwardAffineStep {
    pub lin: DMatrix<f64>,
    pub shift: DVector<f64>,
    pub noise_var: f64,
}

impl BackwardAffineStep {
    pub fn apply(&self, y: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        &self.lin * y + &self.shift + z * self.noise_var.sqrt()
    }
}

/// `C_{v|t}` at any `0 ≤ t ≤ T`.
pub(crate) fn guidance_covariance_with(
    model: GuidanceModel,
    dp: &DiffusedPrior,
    prob: &LinearInverseProblem,
    alpha_bar: f64,
) -> DMatrix<f64> {
    let a = &prob.a;
    let m = a.nrows();
    let noise = DMatrix::identity(m, m).scale(prob.sigma * prob.sigma);
    let c = match model {
        GuidanceModel::Dps { alpha_dps } => noise / alpha_dps,
        GuidanceModel::PiGdm => (a * a.transpose()).scale(1.0 - alpha_bar) + noise,
        GuidanceModel::Cgdm => (a * dp.sigma_pow_sigma_t_inv(alpha_bar, 1) * a.transpose()).scale(1.0 - alpha_bar) + noise,
    };
    linalg::symmetrize(&c)
}

/// Covariance `C_{v|t}` the model assigns to `v` given `x_t`.
pub fn guidance_covariance(
    model: GuidanceModel,
    prior: &GaussianLaw,
    prob: &LinearInverseProblem,
    sched: &Schedule,
    t: usize,
) -> Result<DMatrix<f64>> {
    model.validate()?;
    sched.check_step(t)?;
    prob.check_against(prior.dim())?;
    let dp = DiffusedPrior::new(prior)?;
    Ok(guidance_covariance_with(model, &dp, prob, sched.alpha_bar(t)))
}

pub(crate) fn backward_affine_step_with(
    model: GuidanceModel,
    dp: &DiffusedPrior,
    prob: &LinearInverseProblem,
    v: &DVector<f64>,
    sched: &Schedule,
    t: usize,
) -> Result<BackwardAffineStep> {
    let d = dp.dim();
    let (ab, alpha, beta) = (sched.alpha_bar(t), sched.alpha(t), sched.beta(t));
    let inv = dp.sigma_t_inv(ab)?;
    let gain = dp.sigma_sigma_t_inv(ab)?;
    let a = &prob.a;
    let mu = &dp.law.mean;

    let cv = guidance_covariance_with(model, dp, prob, ab);
    let chol = linalg::cholesky(&cv, "guidance covariance")?;
    let ag = a * &gain;
    // G Aᵀ C⁻¹ with G = Σ Σ_t⁻¹ symmetric
    let back = chol.solve(&ag).transpose();

    let mut lin = DMatrix::identity(d, d) - inv.scale(beta) - (&back * &ag).scale(beta * ab);
    lin /= alpha.sqrt();
    let resid = v - a * mu + &ag * mu * ab;
    let shift = (&inv * mu + &back * resid) * (beta * sched.alpha_bar(t - 1).sqrt());
    Ok(BackwardAffineStep {
        lin: linalg::symmetrize(&lin),
        shift,
        noise_var: sched.noise_var(t),
    })
}

/// Affine form of the guided step from `t` to `t-1`.
pub fn backward_affine_step(
    model: GuidanceModel,
    prior: &GaussianLaw,
    prob: &LinearInverseProblem,
    sched: &Schedule,
    t: usize,
) -> Result<BackwardAffineStep> {
    model.validate()?;
    sched.check_step(t)?;
    prob.check_against(prior.dim())?;
    let v = prob.observation()?;
    let dp = DiffusedPrior::new(prior)?;
    backward_affine_step_with(model, &dp, prob, v, sched, t)
}

fn check_state(model: &str, t: usize, y: &DVector<f64>) -> Result<()> {
    let n = y.norm();
    if !n.is_finite() || n > DIVERGENCE_NORM {
        return Err(Error::Instability {
            model: model.to_string(),
            t,
            detail: format!("state norm {n:e}"),
        });
    }
    Ok(())
}

/// Precomputed affine steps for repeated trajectory simulation.
#[derive(Debug, Clone)]
pub struct ConditionalSampler {
    model: GuidanceModel,
    dim: usize,
    // steps[t - 1] moves from t to t - 1
    steps: Vec<BackwardAffineStep>,
}

impl ConditionalSampler {
    pub fn new(model: GuidanceModel, prior: &GaussianLaw, prob: &LinearInverseProblem, sched: &Schedule) -> Result<Self> {
        model.validate()?;
        prob.check_against(prior.dim())?;
        let v = prob.observation()?;
        let dp = DiffusedPrior::new(prior)?;
        let steps = (1..=sched.steps())
            .map(|t| backward_affine_step_with(model, &dp, prob, v, sched, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model,
            dim: prior.dim(),
            steps,
        })
    }

    pub fn step(&self, t: usize) -> &BackwardAffineStep {
        &self.steps[t - 1]
    }

    /// States `y_T, y_{T-1}, ..., y_0`.
    pub fn trajectory<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<DVector<f64>>> {
        let mut y = gaussian::standard_normal_vector(self.dim, rng);
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        out.push(y.clone());
        for t in (1..=self.steps.len()).rev() {
            let z = gaussian::standard_normal_vector(self.dim, rng);
            y = self.step(t).apply(&y, &z);
            check_state(self.model.name(), t - 1, &y)?;
            out.push(y.clone());
        }
        Ok(out)
    }

    /// Final state `y_0` only.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let mut y = gaussian::standard_normal_vector(self.dim, rng);
        let mut next = DVector::zeros(self.dim);
        for t in (1..=self.steps.len()).rev() {
            let step = self.step(t);
            let sd = step.noise_var.sqrt();
            next.copy_from(&step.shift);
            next.gemv(1.0, &step.lin, &y, 1.0);
            for x in next.iter_mut() {
                *x += sd * rng.sample::<f64, _>(StandardNormal);
            }
            std::mem::swap(&mut y, &mut next);
        }
        check_state(self.model.name(), 0, &y)?;
        Ok(y)
    }
}

/// One run of the conditional backward process, returned as `y_T, ..., y_0`.
///
/// The stream is consumed as `y_T` then `z_T, ..., z_1`, so equal seeds give
/// every model the same injected noise.
pub fn simulate_conditional<R: Rng + ?Sized>(
    model: GuidanceModel,
    prior: &GaussianLaw,
    prob: &LinearInverseProblem,
    sched: &Schedule,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    ConditionalSampler::new(model, prior, prob, sched)?.trajectory(rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

/// Unconditional DDPM.
///
/// Forward returns `x_0, ..., x_T` with `x_0 ~ prior`; backward returns
/// `y_T, ..., y_0` driven by the exact score.
pub fn simulate_unconditional<R: Rng + ?Sized>(
    prior: &GaussianLaw,
    sched: &Schedule,
    rng: &mut R,
    direction: Direction,
) -> Result<Vec<DVector<f64>>> {
    let d = prior.dim();
    let mut out = Vec::with_capacity(sched.steps() + 1);
    match direction {
        Direction::Forward => {
            let mut x = GaussianSampler::new(prior)?.sample(rng);
            out.push(x.clone());
            for t in 1..=sched.steps() {
                let xi = gaussian::standard_normal_vector(d, rng);
                x = x * sched.alpha(t).sqrt() + xi * sched.beta(t).sqrt();
                out.push(x.clone());
            }
        }
        Direction::Backward => {
            let dp = DiffusedPrior::new(prior)?;
            let mut y = gaussian::standard_normal_vector(d, rng);
            out.push(y.clone());
            for t in (1..=sched.steps()).rev() {
                let (ab, beta) = (sched.alpha_bar(t), sched.beta(t));
                let score = -(dp.sigma_t_inv(ab)? * (&y - prior.mean.scale(ab.sqrt())));
                let z = gaussian::standard_normal_vector(d, rng);
                y = (&y + score * beta) / sched.alpha(t).sqrt() + z * sched.noise_var(t).sqrt();
                check_state("DDPM", t - 1, &y)?;
                out.push(y.clone());
            }
        }
    }
    Ok(out)
}
