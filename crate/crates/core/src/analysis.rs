//! Closed-form laws of the sampler trajectories and their distance to the
//! true noisy posterior.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gaussian::{self, DiffusedPrior, GaussianLaw, LinearInverseProblem};
use crate::linalg::{self, KERNEL_REL_TOL};
use crate::samplers::{self, GuidanceModel};
use crate::schedule::Schedule;

/// Largest dimension handled by the dense path.
pub const MAX_DENSE_DIM: usize = 512;

/// Gaussian law of `y_t` for every `t`, stored from `t = T` down to `t = 0`.
#[derive(Debug, Clone)]
pub struct BackwardLawTrajectory {
    pub model: Option<GuidanceModel>,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

impl BackwardLawTrajectory {
    pub fn steps(&self) -> usize {
        self.means.len() - 1
    }

    pub fn mean(&self, t: usize) -> &DVector<f64> {
        &self.means[self.steps() - t]
    }

    pub fn cov(&self, t: usize) -> &DMatrix<f64> {
        &self.covs[self.steps() - t]
    }

    pub fn law(&self, t: usize) -> GaussianLaw {
        GaussianLaw {
            mean: self.mean(t).clone(),
            cov: self.cov(t).clone(),
        }
    }
}

pub(crate) fn check_dense_dim(d: usize) -> Result<()> {
    if d > MAX_DENSE_DIM {
        return Err(Error::Parameter(format!(
            "dense propagation limited to dimension {MAX_DENSE_DIM}, got {d}; use the spectral path"
        )));
    }
    Ok(())
}

fn check_law(label: &str, t: usize, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<()> {
    let (m, c) = (mean.norm(), cov.amax());
    if !m.is_finite() || !c.is_finite() || m > samplers::DIVERGENCE_NORM || c > samplers::DIVERGENCE_NORM.powi(2) {
        return Err(Error::Instability {
            model: label.to_string(),
            t,
            detail: format!("mean norm {m:e}, covariance max entry {c:e}"),
        });
    }
    Ok(())
}

/// Mean and covariance recursions `μ ← lin μ + shift`, `Σ ← lin Σ linᵀ + β I` from `N(0, I)`.
pub fn propagate(
    model: GuidanceModel,
    prior: &GaussianLaw,
    prob: &LinearInverseProblem,
    sched: &Schedule,
) -> Result<BackwardLawTrajectory> {
    model.validate()?;
    let d = prior.dim();
    check_dense_dim(d)?;
    prob.check_against(d)?;
    let v = prob.observation()?;
    let dp = DiffusedPrior::new(prior)?;
    let big_t = sched.steps();
    let mut means = Vec::with_capacity(big_t + 1);
    let mut covs = Vec::with_capacity(big_t + 1);
    let mut mean = DVector::zeros(d);
    let mut cov = DMatrix::identity(d, d);
    means.push(mean.clone());
    covs.push(cov.clone());
    for t in (1..=big_t).rev() {
        let step = samplers::backward_affine_step_with(model, &dp, prob, v, sched, t)?;
        mean = &step.lin * &mean + &step.shift;
        cov = &step.lin * &cov * step.lin.transpose() + DMatrix::identity(d, d) * step.noise_var;
        cov = linalg::symmetrize(&cov);
        check_law(model.name(), t - 1, &mean, &cov)?;
        means.push(mean.clone());
        covs.push(cov.clone());
    }
    Ok(BackwardLawTrajectory {
        model: Some(model),
        means,
        covs,
    })
}

/// `μ_T, ..., μ_0` of the sampler's backward law.
pub fn propagate_mean(
    model: GuidanceModel,
    prior: &GaussianLaw,
    prob: &LinearInverseProblem,
    sched: &Schedule,
) -> Result<Vec<DVector<f64>>> {
    Ok(propagate(model, prior, prob, sched)?.means)
}

/// `Σ_T, ..., Σ_0` of the sampler's backward law.
pub fn propagate_covariance(
    model: GuidanceModel,
    prior: &GaussianLaw,
    prob: &LinearInverseProblem,
    sched: &Schedule,
) -> Result<Vec<DMatrix<f64>>> {
    Ok(propagate(model, prior, prob, sched)?.covs)
}

/// Backward law of the ideal sampler: started at the true `p_T(· | v)` and
/// driven by the exact (non-isotropic) backward transitions of the posterior.
pub fn propagate_exact_backward(
    prior: &GaussianLaw,
    prob: &LinearInverseProblem,
    sched: &Schedule,
) -> Result<BackwardLawTrajectory> {
    check_dense_dim(prior.dim())?;
    let post = gaussian::condition_on_observation(prior, prob)?;
    let dp = DiffusedPrior::new(&post)?;
    let start = gaussian::forward_marginal(&post, sched, sched.steps())?;
    let (mut means, mut covs) = (vec![start.mean.clone()], vec![start.cov.clone()]);
    let mut law = start;
    for t in (1..=sched.steps()).rev() {
        law = gaussian::exact_backward_kernel_with(&dp, sched, t)?.push_forward(&law);
        check_law("exact", t - 1, &law.mean, &law.cov)?;
        means.push(law.mean.clone());
        covs.push(law.cov.clone());
    }
    Ok(BackwardLawTrajectory { model: None, means, covs })
}

/// Noisy posterior implied by combining the exact prior score with the model's likelihood.
///
/// Covariance `Σ_t - ᾱ_t Σ Aᵀ (C_{v|t} + ᾱ_t A Σ² Σ_t⁻¹ Aᵀ)⁻¹ A Σ`, mean
/// `√ᾱ_t μ + √ᾱ_t C Σ Σ_t⁻¹ Aᵀ C_{v|t}⁻¹ (v - A μ)`. Defined for `0 ≤ t ≤ T`;
/// at `t = 0` the products involving `Σ_t⁻¹` are taken by continuity.
pub fn induced_noisy_posterior(
    model: GuidanceModel,
    prior: &GaussianLaw,
    prob: &LinearInverseProblem,
    sched: &Schedule,
    t: usize,
) -> Result<GaussianLaw> {
    model.validate()?;
    sched.check_t(t)?;
    check_dense_dim(prior.dim())?;
    prob.check_against(prior.dim())?;
    let v = prob.observation()?;
    let dp = DiffusedPrior::new(prior)?;
    let ab = sched.alpha_bar(t);
    let a = &prob.a;
    let cv = samplers::guidance_covariance_with(model, &dp, prob, ab);
    let gain = dp.sigma_pow_sigma_t_inv(ab, 1);
    let inner = &cv + a * dp.sigma_pow_sigma_t_inv(ab, 2) * a.transpose() * ab;
    let a_sigma = a * &prior.cov;
    let solved = linalg::cholesky(&inner, "induced posterior inner matrix")?.solve(&a_sigma);
    let cov = linalg::symmetrize(&(dp.sigma_t(ab) - a_sigma.transpose() * solved * ab));
    let resid = linalg::cholesky(&cv, "guidance covariance")?.solve(&(v - a * &prior.mean));
    let mean = prior.mean.scale(ab.sqrt()) + &cov * gain * a.transpose() * resid * ab.sqrt();
    Ok(GaussianLaw { mean, cov })
}

/// `‖C_{t|v} - (ᾱ_t C_{0|v} + (1-ᾱ_t) I)‖_F` for the model's induced posterior.
pub fn forward_consistency_defect(
    model: GuidanceModel,
    prior: &GaussianLaw,
    prob: &LinearInverseProblem,
    sched: &Schedule,
    t: usize,
) -> Result<f64> {
    let ct = induced_noisy_posterior(model, prior, prob, sched, t)?.cov;
    let c0 = induced_noisy_posterior(model, prior, prob, sched, 0)?.cov;
    let ab = sched.alpha_bar(t);
    let d = prior.dim();
    Ok((ct - (c0 * ab + DMatrix::identity(d, d) * (1.0 - ab))).norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub t: usize,
    pub w_total: f64,
    /// Component on `ker Σ` of the prior.
    pub w_ker: f64,
    /// Component on the orthogonal complement of `ker Σ`.
    pub w_perp: f64,
    /// Distance between the two means.
    pub mean_gap: f64,
}

/// W2 to the true noisy posterior for `t = T, ..., 0`.
#[derive(Debug, Clone, Serialize)]
pub struct WassersteinCurve {
    pub model: String,
    pub points: Vec<CurvePoint>,
}

impl WassersteinCurve {
    pub fn at(&self, t: usize) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.t == t)
    }
}

fn project(law: &GaussianLaw, basis: &DMatrix<f64>) -> GaussianLaw {
    GaussianLaw {
        mean: basis.transpose() * &law.mean,
        cov: linalg::symmetrize(&(basis.transpose() * &law.cov * basis)),
    }
}

/// W2 of a block, with square-root floors set by the full covariances.
fn block_w2(a: &GaussianLaw, b: &GaussianLaw, floors: (f64, f64)) -> Result<f64> {
    if a.dim() == 0 {
        return Ok(0.0);
    }
    let mean_sq = (&a.mean - &b.mean).norm_squared();
    let bures = gaussian::bures_squared_above(&a.cov, &b.cov, Some(floors.0), Some(floors.1))?;
    Ok((mean_sq + bures).max(0.0).sqrt())
}

fn floor_of(cov: &DMatrix<f64>) -> f64 {
    linalg::rounding_floor(cov.symmetric_eigenvalues().max().max(0.0))
}

/// Distance of a propagated trajectory to the true noisy posterior at every `t`.
///
/// Both laws are block diagonal in `ker Σ ⊕ (ker Σ)^⊥`, so the split into the
/// two components is exact.
pub fn curve_from_trajectory(
    label: &str,
    traj: &BackwardLawTrajectory,
    prior: &GaussianLaw,
    prob: &LinearInverseProblem,
    sched: &Schedule,
) -> Result<WassersteinCurve> {
    if traj.steps() != sched.steps() {
        return Err(Error::dim("trajectory length", sched.steps() + 1, traj.means.len()));
    }
    let post = gaussian::condition_on_observation(prior, prob)?;
    let spectrum = linalg::PsdSpectrum::new(&prior.cov)?;
    let mask = spectrum.kernel_mask(KERNEL_REL_TOL);
    let ker = spectrum.basis(&mask);
    let perp = spectrum.basis(&mask.iter().map(|k| !k).collect::<Vec<_>>());
    let points = (0..sched.steps() + 1)
        .into_par_iter()
        .rev()
        .map(|t| {
            let truth = gaussian::forward_marginal(&post, sched, t)?;
            let law = traj.law(t);
            let floors = (floor_of(&law.cov), floor_of(&truth.cov));
            Ok(CurvePoint {
                t,
                w_total: block_w2(&law, &truth, floors)?,
                w_ker: block_w2(&project(&law, &ker), &project(&truth, &ker), floors)?,
                w_perp: block_w2(&project(&law, &perp), &project(&truth, &perp), floors)?,
                mean_gap: (&law.mean - &truth.mean).norm(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WassersteinCurve {
        model: label.to_string(),
        points,
    })
}

pub fn wasserstein_curve(
    model: GuidanceModel,
    prior: &GaussianLaw,
    prob: &LinearInverseProblem,
    sched: &Schedule,
) -> Result<WassersteinCurve> {
    let traj = propagate(model, prior, prob, sched)?;
    curve_from_trajectory(model.name(), &traj, prior, prob, sched)
}
