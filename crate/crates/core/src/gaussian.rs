//! Exact Gaussian machinery: conditioning, forward marginals, scores,
//! Tweedie denoising, noisy likelihood/posterior, the exact backward
//! transition, kriging sampling and 2-Wasserstein distances.
//!
//! Everything here is dense and serves as the reference implementation for
//! the structured paths in [`crate::deblur`].

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, PsdSpectrum};
use crate::schedule::Schedule;

/// `N(mean, cov)` with `cov` symmetric PSD, rank deficiency allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLaw {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianLaw {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() || cov.nrows() != mean.len() {
            return Err(Error::dim(
                "GaussianLaw",
                format!("{0}x{0} covariance", mean.len()),
                format!("{}x{}", cov.nrows(), cov.ncols()),
            ));
        }
        let asym = (&cov - cov.transpose()).amax();
        if asym > 1e-12 * cov.amax().max(1.0) {
            return Err(Error::Parameter(format!(
                "covariance not symmetric (max asymmetry {asym:e})"
            )));
        }
        linalg::psd_eigen(&cov)?;
        Ok(Self {
            mean,
            cov: linalg::symmetrize(&cov),
        })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            cov: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `v = A x + σ n` with `n ~ N(0, I)` and `σ > 0`.
#[derive(Debug, Clone)]
pub struct LinearInverseProblem {
    pub a: DMatrix<f64>,
    pub sigma: f64,
    pub v: Option<DVector<f64>>,
}

impl LinearInverseProblem {
    pub fn new(a: DMatrix<f64>, sigma: f64, v: Option<DVector<f64>>) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Parameter(format!("noise level must be > 0, got {sigma}")));
        }
        if let Some(v) = &v {
            if v.len() != a.nrows() {
                return Err(Error::dim("LinearInverseProblem", a.nrows(), v.len()));
            }
        }
        Ok(Self { a, sigma, v })
    }

    /// Observe the coordinates listed in `observed` of a `dim`-dimensional signal.
    pub fn inpainting(dim: usize, observed: &[usize], sigma: f64, v: Option<DVector<f64>>) -> Result<Self> {
        let mut a = DMatrix::zeros(observed.len(), dim);
        for (row, &i) in observed.iter().enumerate() {
            if i >= dim {
                return Err(Error::Parameter(format!("observed coordinate {i} out of range for dimension {dim}")));
            }
            a[(row, i)] = 1.0;
        }
        Self::new(a, sigma, v)
    }

    pub fn with_observation(mut self, v: DVector<f64>) -> Result<Self> {
        if v.len() != self.a.nrows() {
            return Err(Error::dim("observation", self.a.nrows(), v.len()));
        }
        self.v = Some(v);
        Ok(self)
    }

    pub fn observation(&self) -> Result<&DVector<f64>> {
        self.v
            .as_ref()
            .ok_or_else(|| Error::Parameter("inverse problem has no observation".into()))
    }

    pub(crate) fn check_against(&self, dim: usize) -> Result<()> {
        if self.a.ncols() != dim {
            return Err(Error::dim("degradation operator columns", dim, self.a.ncols()));
        }
        Ok(())
    }
}

/// Conditional law `x ↦ N(lin·x + shift, noise_cov)`.
#[derive(Debug, Clone)]
pub struct AffineGaussianKernel {
    pub lin: DMatrix<f64>,
    pub shift: DVector<f64>,
    pub noise_cov: DMatrix<f64>,
}

impl AffineGaussianKernel {
    pub fn mean_at(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.lin * x + &self.shift
    }

    /// Law of `lin·x + shift + noise` for `x ~ law`.
    pub fn push_forward(&self, law: &GaussianLaw) -> GaussianLaw {
        GaussianLaw {
            mean: self.mean_at(&law.mean),
            cov: linalg::symmetrize(&(&self.lin * &law.cov * self.lin.transpose() + &self.noise_cov)),
        }
    }
}

/// Gaussian prior together with the eigendecomposition of its covariance.
///
/// `Σ_t = ᾱ_t Σ + (1-ᾱ_t) I` shares the eigenvectors of `Σ`, so `Σ_t⁻¹`,
/// `Σ Σ_t⁻¹` and friends are spectral maps of one decomposition.
#[derive(Debug, Clone)]
pub struct DiffusedPrior {
    pub law: GaussianLaw,
    pub spectrum: PsdSpectrum,
}

impl DiffusedPrior {
    pub fn new(law: &GaussianLaw) -> Result<Self> {
        Ok(Self {
            law: law.clone(),
            spectrum: PsdSpectrum::new(&law.cov)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.law.dim()
    }

    fn check_invertible(&self, alpha_bar: f64) -> Result<()> {
        let floor = 1e-12 * self.spectrum.max_value().max(1.0);
        let smallest = self
            .spectrum
            .values
            .iter()
            .map(|&l| alpha_bar * l + (1.0 - alpha_bar))
            .fold(f64::INFINITY, f64::min);
        if smallest <= floor {
            return Err(Error::Singular(format!(
                "diffused covariance at alpha_bar={alpha_bar} has eigenvalue {smallest:e}"
            )));
        }
        Ok(())
    }

    /// `Σ_t`.
    pub fn sigma_t(&self, alpha_bar: f64) -> DMatrix<f64> {
        self.law.cov.scale(alpha_bar) + DMatrix::identity(self.dim(), self.dim()).scale(1.0 - alpha_bar)
    }

    /// `Σ_t⁻¹`.
    pub fn sigma_t_inv(&self, alpha_bar: f64) -> Result<DMatrix<f64>> {
        self.check_invertible(alpha_bar)?;
        Ok(self.spectrum.map(|l| 1.0 / (alpha_bar * l + 1.0 - alpha_bar)))
    }

    /// `Σ Σ_t⁻¹` (symmetric since the factors commute).
    pub fn sigma_sigma_t_inv(&self, alpha_bar: f64) -> Result<DMatrix<f64>> {
        self.check_invertible(alpha_bar)?;
        Ok(self.spectrum.map(|l| l / (alpha_bar * l + 1.0 - alpha_bar)))
    }

    /// `Σ^p Σ_t⁻¹` for `p ≥ 1`, extended by continuity to `ᾱ = 1` on `ker Σ`.
    pub fn sigma_pow_sigma_t_inv(&self, alpha_bar: f64, p: i32) -> DMatrix<f64> {
        let floor = 1e-12 * self.spectrum.max_value().max(1.0);
        self.spectrum.map(|l| {
            let s = alpha_bar * l + 1.0 - alpha_bar;
            if s <= floor {
                0.0
            } else {
                l.powi(p) / s
            }
        })
    }
}

fn check_vec(context: &'static str, x: &DVector<f64>, dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::dim(context, dim, x.len()));
    }
    Ok(())
}

/// Exact posterior `p(x₀ | v)` by kriging.
pub fn condition_on_observation(prior: &GaussianLaw, prob: &LinearInverseProblem) -> Result<GaussianLaw> {
    prob.check_against(prior.dim())?;
    let v = prob.observation()?;
    let a = &prob.a;
    let sigma_at = &prior.cov * a.transpose();
    let m = a * &sigma_at + DMatrix::identity(a.nrows(), a.nrows()).scale(prob.sigma * prob.sigma);
    let chol = linalg::cholesky(&m, "AΣAᵀ + σ²I")?;
    // Λ = M⁻¹ A Σ
    let lambda = chol.solve(&sigma_at.transpose());
    let resid = v - a * &prior.mean;
    let mean = &prior.mean + lambda.transpose() * resid;
    let cov = linalg::symmetrize(&(&prior.cov - &sigma_at * &lambda));
    Ok(GaussianLaw { mean, cov })
}

/// Law of `x_t` under the forward process started at `prior`.
pub fn forward_marginal(prior: &GaussianLaw, sched: &Schedule, t: usize) -> Result<GaussianLaw> {
    sched.check_t(t)?;
    let ab = sched.alpha_bar(t);
    let d = prior.dim();
    Ok(GaussianLaw {
        mean: prior.mean.scale(ab.sqrt()),
        cov: prior.cov.scale(ab) + DMatrix::identity(d, d).scale(1.0 - ab),
    })
}

/// `∇ log p_t(x) = -Σ_t⁻¹ (x - √ᾱ_t μ)`.
pub fn score(prior: &GaussianLaw, sched: &Schedule, t: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
    sched.check_t(t)?;
    check_vec("score input", x, prior.dim())?;
    let dp = DiffusedPrior::new(prior)?;
    let ab = sched.alpha_bar(t);
    Ok(-(dp.sigma_t_inv(ab)? * (x - prior.mean.scale(ab.sqrt()))))
}

/// MMSE denoiser `E[x₀ | x_t] = μ + √ᾱ_t Σ Σ_t⁻¹ (x - √ᾱ_t μ)`.
pub fn tweedie_denoise(prior: &GaussianLaw, sched: &Schedule, t: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
    sched.check_t(t)?;
    check_vec("tweedie input", x, prior.dim())?;
    let dp = DiffusedPrior::new(prior)?;
    let ab = sched.alpha_bar(t);
    let g = dp.sigma_sigma_t_inv(ab)?;
    Ok(&prior.mean + g * (x - prior.mean.scale(ab.sqrt())) * ab.sqrt())
}

/// Exact noisy likelihood `p_t(v | x_t)` as an affine kernel in `x_t`.
pub fn noisy_likelihood(
    prior: &GaussianLaw,
    prob: &LinearInverseProblem,
    sched: &Schedule,
    t: usize,
) -> Result<AffineGaussianKernel> {
    sched.check_t(t)?;
    prob.check_against(prior.dim())?;
    let dp = DiffusedPrior::new(prior)?;
    let ab = sched.alpha_bar(t);
    let g = dp.sigma_sigma_t_inv(ab)?;
    let a = &prob.a;
    // x̂₀(x) = (μ - ᾱ G μ) + √ᾱ G x with G = Σ Σ_t⁻¹
    let lin = a * &g * ab.sqrt();
    let shift = a * (&prior.mean - &g * &prior.mean * ab);
    let m = a.nrows();
    let noise_cov = linalg::symmetrize(
        &((a * &g * a.transpose()).scale(1.0 - ab) + DMatrix::identity(m, m).scale(prob.sigma * prob.sigma)),
    );
    Ok(AffineGaussianKernel { lin, shift, noise_cov })
}

/// Exact noisy posterior `p_t(x_t | v)`: the forward marginal of the conditioned prior.
pub fn noisy_posterior(
    prior: &GaussianLaw,
    prob: &LinearInverseProblem,
    sched: &Schedule,
    t: usize,
) -> Result<GaussianLaw> {
    sched.check_t(t)?;
    let post = condition_on_observation(prior, prob)?;
    forward_marginal(&post, sched, t)
}

/// Exact backward transition `p(x_{t-1} | x_t)` for the forward process started at `prior`.
///
/// The mean map is the DDPM step with the exact score; the noise covariance
/// `β_t Σ_{t-1} Σ_t⁻¹` is generally not diagonal.
pub fn exact_backward_kernel(prior: &GaussianLaw, sched: &Schedule, t: usize) -> Result<AffineGaussianKernel> {
    sched.check_step(t)?;
    let dp = DiffusedPrior::new(prior)?;
    exact_backward_kernel_with(&dp, sched, t)
}

pub(crate) fn exact_backward_kernel_with(dp: &DiffusedPrior, sched: &Schedule, t: usize) -> Result<AffineGaussianKernel> {
    let d = dp.dim();
    let (ab, ab_prev, alpha, beta) = (sched.alpha_bar(t), sched.alpha_bar(t - 1), sched.alpha(t), sched.beta(t));
    let inv = dp.sigma_t_inv(ab)?;
    let lin = (DMatrix::identity(d, d) - inv.scale(beta)) / alpha.sqrt();
    let shift = &inv * &dp.law.mean * (beta * ab.sqrt() / alpha.sqrt());
    let noise_cov = dp.spectrum.map(|l| beta * (ab_prev * l + 1.0 - ab_prev) / (ab * l + 1.0 - ab));
    Ok(AffineGaussianKernel { lin, shift, noise_cov })
}

/// Draws from a Gaussian law through a PSD square root of its covariance.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    root: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(law: &GaussianLaw) -> Result<Self> {
        Ok(Self {
            mean: law.mean.clone(),
            root: linalg::psd_sqrt(&law.cov)?,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = standard_normal_vector(self.mean.len(), rng);
        &self.mean + &self.root * z
    }
}

pub fn standard_normal_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample(StandardNormal))
}

/// Conditional simulation: `Λᵀv + x̃ - Λᵀ(A x̃ + σ ñ)` with `Λ = M⁻¹ A Σ`.
#[derive(Debug, Clone)]
pub struct KrigingSampler {
    prior: GaussianSampler,
    a: DMatrix<f64>,
    lambda_t: DMatrix<f64>,
    sigma: f64,
    v: DVector<f64>,
}

impl KrigingSampler {
    pub fn new(prior: &GaussianLaw, prob: &LinearInverseProblem) -> Result<Self> {
        prob.check_against(prior.dim())?;
        let v = prob.observation()?.clone();
        let a = prob.a.clone();
        let sigma_at = &prior.cov * a.transpose();
        let m = &a * &sigma_at + DMatrix::identity(a.nrows(), a.nrows()).scale(prob.sigma * prob.sigma);
        let lambda = linalg::cholesky(&m, "AΣAᵀ + σ²I")?.solve(&sigma_at.transpose());
        Ok(Self {
            prior: GaussianSampler::new(prior)?,
            a,
            lambda_t: lambda.transpose(),
            sigma: prob.sigma,
            v,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let x = self.prior.sample(rng);
        let n = standard_normal_vector(self.a.nrows(), rng);
        let fake_obs = &self.a * &x + n * self.sigma;
        &x + &self.lambda_t * (&self.v - fake_obs)
    }
}

pub fn kriging_sample<R: Rng + ?Sized>(prior: &GaussianLaw, prob: &LinearInverseProblem, rng: &mut R) -> Result<DVector<f64>> {
    Ok(KrigingSampler::new(prior, prob)?.sample(rng))
}

/// Squared Bures distance `Tr(A + B - 2 (A^{1/2} B A^{1/2})^{1/2})`.
///
/// Evaluated as `min_R ‖A^{1/2} - R B^{1/2}‖_F²` over rotations, with the
/// optimum read off the polar factor of `B^{1/2} A^{1/2}`. This avoids the
/// cancellation of the trace form when `A ≈ B`.
pub fn bures_squared(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() || !a.is_square() {
        return Err(Error::dim("bures", format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    bures_squared_above(a, b, None, None)
}

/// [`bures_squared`] with explicit rounding floors for the two square roots.
pub fn bures_squared_above(a: &DMatrix<f64>, b: &DMatrix<f64>, floor_a: Option<f64>, floor_b: Option<f64>) -> Result<f64> {
    if a.shape() != b.shape() || !a.is_square() {
        return Err(Error::dim("bures", format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    let x = linalg::psd_sqrt_above(a, floor_a)?;
    let y = linalg::psd_sqrt_above(b, floor_b)?;
    let rot = linalg::polar_factor(&(&y * &x))?;
    Ok((x - rot.transpose() * y).norm_squared())
}

pub fn wasserstein2(a: &GaussianLaw, b: &GaussianLaw) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::dim("wasserstein2", a.dim(), b.dim()));
    }
    let mean_sq = (&a.mean - &b.mean).norm_squared();
    Ok((mean_sq + bures_squared(&a.cov, &b.cov)?).max(0.0).sqrt())
}

fn sqrt_clamped(l: f64) -> Result<f64> {
    if l < -linalg::PSD_CLAMP {
        return Err(Error::NotPsd { min_eigenvalue: l });
    }
    Ok(l.max(0.0).sqrt())
}

/// W2 for covariances diagonal in a shared orthonormal basis, eigenvalues paired by index.
pub fn wasserstein2_commuting(mean_a: &[f64], eig_a: &[f64], mean_b: &[f64], eig_b: &[f64]) -> Result<f64> {
    if mean_a.len() != mean_b.len() {
        return Err(Error::dim("wasserstein2_commuting means", mean_a.len(), mean_b.len()));
    }
    if eig_a.len() != eig_b.len() {
        return Err(Error::dim("wasserstein2_commuting eigenvalues", eig_a.len(), eig_b.len()));
    }
    let mean_sq: f64 = mean_a.iter().zip(mean_b).map(|(x, y)| (x - y).powi(2)).sum();
    let mut cov = 0.0;
    for (&la, &lb) in eig_a.iter().zip(eig_b) {
        cov += (sqrt_clamped(la)? - sqrt_clamped(lb)?).powi(2);
    }
    Ok((mean_sq + cov).sqrt())
}

/// Squared kernel / orthogonal parts, from per-direction squared mean gaps.
///
/// `a` is the reference law whose zero eigenvalues are flagged by `kernel_mask`.
pub fn split_squared_terms(
    mean_sq_gap: &[f64],
    eig_a: &[f64],
    eig_b: &[f64],
    kernel_mask: &[bool],
) -> Result<(f64, f64)> {
    let n = kernel_mask.len();
    if eig_a.len() != n || eig_b.len() != n || mean_sq_gap.len() != n {
        return Err(Error::dim(
            "wasserstein2_split",
            format!("{n} entries"),
            format!("{}/{}/{}", mean_sq_gap.len(), eig_a.len(), eig_b.len()),
        ));
    }
    let (mut ker, mut perp) = (0.0, 0.0);
    for i in 0..n {
        let term = mean_sq_gap[i] + (sqrt_clamped(eig_a[i])? - sqrt_clamped(eig_b[i])?).powi(2);
        if kernel_mask[i] {
            ker += term;
        } else {
            perp += term;
        }
    }
    Ok((ker, perp))
}

/// Split W2 into its component on `ker Σ_a` and on the orthogonal complement.
///
/// Means are coordinates in the shared eigenbasis; `w_ker² + w_perp²` equals
/// the full squared distance.
pub fn wasserstein2_split(
    mean_a: &[f64],
    eig_a: &[f64],
    mean_b: &[f64],
    eig_b: &[f64],
    kernel_mask: &[bool],
) -> Result<(f64, f64)> {
    if mean_a.len() != mean_b.len() {
        return Err(Error::dim("wasserstein2_split means", mean_a.len(), mean_b.len()));
    }
    let gaps: Vec<f64> = mean_a.iter().zip(mean_b).map(|(x, y)| (x - y).powi(2)).collect();
    let (ker, perp) = split_squared_terms(&gaps, eig_a, eig_b, kernel_mask)?;
    Ok((ker.sqrt(), perp.sqrt()))
}
