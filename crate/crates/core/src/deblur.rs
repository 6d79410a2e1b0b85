//! Deblurring of ADSN textures: channelwise circular convolution, and the
//! exact propagation of the samplers frequency by frequency.
//!
//! With `A = C` a channelwise convolution, every matrix in a guided step is
//! block diagonal in Fourier with `3×3` blocks of the form `p I + q t̂ t̂ᴴ`,
//! so the backward law of each sampler stays diagonal in the eigenbasis of
//! `Σ̂(ξ)` and costs `O(T·MN)` small operations.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::adsn::{self, BlockEigen, SpectralAdsn, C3, M3};
use crate::analysis::{CurvePoint, WassersteinCurve};
use crate::error::{Error, Result};
use crate::fft::{Fft2, RgbImage};
use crate::linalg::KERNEL_REL_TOL;
use crate::samplers::{GuidanceModel, DIVERGENCE_NORM};
use crate::schedule::Schedule;

/// Largest image (in pixels) for which full per-frequency trajectories are kept.
pub const MAX_TRAJECTORY_PIXELS: usize = 1024;
/// Largest image side for full curve computations.
pub const MAX_CURVE_SIDE: usize = 256;

const CHUNK: usize = 64;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Spatial blur kernel. Values are kept as given and normalised on use.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    unit_sum: bool,
}

impl BlurKernel {
    /// Kernel normalised to unit sum when applied.
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::dim("kernel", format!("{height}x{width} values"), values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("kernel has non-finite values".into()));
        }
        let sum: f64 = values.iter().sum();
        if sum.abs() < 1e-12 {
            return Err(Error::Parameter("kernel sums to zero and cannot be normalised".into()));
        }
        Ok(Self {
            height,
            width,
            values,
            unit_sum: true,
        })
    }

    pub fn identity() -> Self {
        Self {
            height: 1,
            width: 1,
            values: vec![1.0],
            unit_sum: true,
        }
    }

    /// `A = 0`.
    pub fn zero() -> Self {
        Self {
            height: 1,
            width: 1,
            values: vec![0.0],
            unit_sum: false,
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Values as applied (unit sum unless this is the zero kernel).
    pub fn effective_values(&self) -> Vec<f64> {
        if self.unit_sum {
            let s = self.sum();
            self.values.iter().map(|v| v / s).collect()
        } else {
            self.values.clone()
        }
    }

    /// Rounded centroid, used as the kernel origin.
    pub fn center(&self) -> (usize, usize) {
        let s = self.sum();
        if s.abs() < 1e-12 {
            return (self.height / 2, self.width / 2);
        }
        let (mut cy, mut cx) = (0.0, 0.0);
        for y in 0..self.height {
            for x in 0..self.width {
                let v = self.values[y * self.width + x];
                cy += v * y as f64;
                cx += v * x as f64;
            }
        }
        let clampi = |v: f64, n: usize| (v / s).round().clamp(0.0, (n - 1) as f64) as usize;
        (clampi(cy, self.height), clampi(cx, self.width))
    }

    /// Kernel wrapped onto an `h × w` torus with its centre at the origin.
    pub fn periodized(&self, h: usize, w: usize) -> Vec<f64> {
        let (cy, cx) = self.center();
        let vals = self.effective_values();
        let mut out = vec![0.0; h * w];
        for y in 0..self.height {
            for x in 0..self.width {
                let py = (y as isize - cy as isize).rem_euclid(h as isize) as usize;
                let px = (x as isize - cx as isize).rem_euclid(w as isize) as usize;
                out[py * w + px] += vals[y * self.width + x];
            }
        }
        out
    }

    /// Transfer function `ĉ(ξ)` on an `h × w` grid.
    pub fn spectrum(&self, h: usize, w: usize) -> Vec<Complex64> {
        Fft2::new(h, w).forward_real(&self.periodized(h, w))
    }
}

fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x.powi(3) - (A + 3.0) * x.powi(2) + 1.0
    } else if x < 2.0 {
        A * x.powi(3) - 5.0 * A * x.powi(2) + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

/// Separable bicubic (`a = -1/2`) anti-aliasing kernel for a zoom-out by `factor`.
pub fn bicubic_zoom_kernel(factor: usize) -> Result<BlurKernel> {
    if factor == 0 {
        return Err(Error::Parameter("zoom factor must be at least 1".into()));
    }
    let f = factor as f64;
    let half = 2 * factor - 1;
    let profile: Vec<f64> = (0..2 * half + 1).map(|i| cubic((i as f64 - half as f64) / f)).collect();
    let n = profile.len();
    let mut values = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            values.push(profile[y] * profile[x]);
        }
    }
    let s: f64 = values.iter().sum();
    BlurKernel::new(n, n, values.into_iter().map(|v| v / s).collect())
}

/// Text format: a first line `M N`, then `M` rows of `N` reals. Files ending in
/// `.png` are read as grayscale.
pub fn load_kernel(path: &Path) -> Result<BlurKernel> {
    if path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        let img = image::open(path)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
            .to_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let values = img.pixels().map(|p| p[0] as f64 / 255.0).collect();
        return BlurKernel::new(h, w, values);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::Config(vec![format!("{}: {msg}", path.display())]);
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| bad("empty kernel file".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| bad(format!("bad header: {e}")))?;
    let [h, w] = dims[..] else {
        return Err(bad(format!("header must be `M N`, got `{header}`")));
    };
    let mut values = Vec::with_capacity(h * w);
    for (i, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(format!("row {}: {e}", i + 1)))?;
        if row.len() != w {
            return Err(bad(format!("row {} has {} values, expected {w}", i + 1, row.len())));
        }
        values.extend(row);
    }
    if values.len() != h * w {
        return Err(bad(format!("expected {h} rows, got {}", values.len() / w.max(1))));
    }
    BlurKernel::new(h, w, values)
}

/// Writes the raw values in the text format; floats use shortest round-trip form.
pub fn save_kernel(path: &Path, kernel: &BlurKernel) -> Result<()> {
    let mut out = format!("{} {}\n", kernel.height, kernel.width);
    for row in kernel.values.chunks(kernel.width) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Channelwise circular convolution `c ⋆ u`.
pub fn blur_apply(kernel: &BlurKernel, image: &RgbImage) -> RgbImage {
    let (h, w) = (image.height, image.width);
    let fft = Fft2::new(h, w);
    let k = kernel.spectrum(h, w);
    let planes = [0, 1, 2].map(|ch| {
        let s: Vec<Complex64> = fft.forward_real(&image.planes[ch]).iter().zip(&k).map(|(a, b)| a * b).collect();
        fft.inverse_real(&s)
    });
    RgbImage { width: w, height: h, planes }
}

/// Dense matrix of the channelwise convolution in the ordering of [`RgbImage::to_vector`].
pub fn dense_blur_matrix(kernel: &BlurKernel, h: usize, w: usize) -> Result<DMatrix<f64>> {
    let n = h * w;
    crate::analysis::check_dense_dim(3 * n)?;
    let c = kernel.periodized(h, w);
    let mut a = DMatrix::zeros(3 * n, 3 * n);
    for ch in 0..3 {
        for p in 0..n {
            for q in 0..n {
                let dy = (p / w + h - q / w) % h;
                let dx = (p % w + w - q % w) % w;
                a[(ch * n + p, ch * n + q)] = c[dy * w + dx];
            }
        }
    }
    Ok(a)
}

/// Unit vector `v ⊗ e_ξ / √MN` of the dense space, with `e_ξ(p) = exp(2iπ⟨ξ, p⟩)`.
///
/// For a dense law with covariance `S`, `uᴴ S u` is the spectral variance
/// along `v` at frequency `ξ`, and `√MN · uᴴ μ` the projected spectral mean.
pub fn fourier_atom(h: usize, w: usize, k: usize, v: &C3) -> DVector<Complex64> {
    let n = h * w;
    let (ky, kx) = ((k / w) as f64, (k % w) as f64);
    let scale = 1.0 / (n as f64).sqrt();
    DVector::from_iterator(
        3 * n,
        (0..3).flat_map(|ch| {
            (0..n).map(move |p| {
                let phase = 2.0 * std::f64::consts::PI * (ky * (p / w) as f64 / h as f64 + kx * (p % w) as f64 / w as f64);
                v[ch] * Complex64::from_polar(scale, phase)
            })
        }),
    )
}

/// `x₀ ~ ADSN`, `v = c ⋆ x₀ + σ n`.
pub fn make_observation<R: Rng + ?Sized>(
    model: &SpectralAdsn,
    kernel: &BlurKernel,
    sigma: f64,
    rng: &mut R,
) -> Result<(RgbImage, RgbImage)> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Parameter(format!("noise level must be > 0, got {sigma}")));
    }
    let x0 = adsn::adsn_sample(model, rng);
    let mut v = blur_apply(kernel, &x0);
    for plane in v.planes.iter_mut() {
        for x in plane.iter_mut() {
            *x += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok((x0, v))
}

/// Everything a frequency needs: prior block, transfer value, observation.
#[derive(Debug, Clone)]
struct Freq {
    that: C3,
    lambda: f64,
    c_hat: Complex64,
    v_hat: C3,
    mu_hat: C3,
    eig: BlockEigen,
    kernel: [bool; 3],
}

/// ADSN prior, blur and observation, all in the Fourier domain.
#[derive(Debug, Clone)]
pub struct SpectralProblem {
    pub height: usize,
    pub width: usize,
    pub sigma: f64,
    freqs: Vec<Freq>,
}

impl SpectralProblem {
    pub fn new(model: &SpectralAdsn, kernel: &BlurKernel, sigma: f64, v: &RgbImage) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Parameter(format!("noise level must be > 0, got {sigma}")));
        }
        let (h, w) = (model.height, model.width);
        if (v.height, v.width) != (h, w) {
            return Err(Error::dim("observation", format!("{h}x{w}"), format!("{}x{}", v.height, v.width)));
        }
        let fft = Fft2::new(h, w);
        let c_hat = kernel.spectrum(h, w);
        let vs: Vec<Vec<Complex64>> = (0..3).map(|ch| fft.forward_real(&v.planes[ch])).collect();
        let mu = model.mean_spectrum();
        let lambdas = model.block_eigenvalues();
        let lmax = lambdas.iter().cloned().fold(0.0, f64::max);
        let freqs = (0..h * w)
            .map(|k| {
                let eig = adsn::block_eigen(&model.that[k]);
                Freq {
                    that: model.that[k],
                    lambda: lambdas[k],
                    c_hat: c_hat[k],
                    v_hat: C3::new(vs[0][k], vs[1][k], vs[2][k]),
                    mu_hat: mu[k],
                    eig,
                    kernel: [lambdas[k] <= KERNEL_REL_TOL * lmax, true, true],
                }
            })
            .collect();
        Ok(Self {
            height: h,
            width: w,
            sigma,
            freqs,
        })
    }

    /// Zero blur and zero observation: the guided samplers reduce to plain DDPM.
    pub fn unconditional(model: &SpectralAdsn) -> Result<Self> {
        let v = RgbImage::filled(model.width, model.height, [0.0; 3]);
        Self::new(model, &BlurKernel::zero(), 1.0, &v)
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn eigen(&self, k: usize) -> &BlockEigen {
        &self.freqs[k].eig
    }

    pub fn kernel_mask(&self, k: usize) -> [bool; 3] {
        self.freqs[k].kernel
    }
}

/// Per-frequency guided step `y ↦ L y + b + √β z` from `t` to `t-1`.
fn freq_step(f: &Freq, model: GuidanceModel, sched: &Schedule, t: usize, sigma: f64) -> Result<(M3, C3)> {
    let (ab, alpha, beta) = (sched.alpha_bar(t), sched.alpha(t), sched.beta(t));
    let s2 = sigma * sigma;
    let r = adsn::rank1_inverse(ab, 1.0 - ab, &f.that)?;
    let g = f.that * f.that.adjoint() * c(1.0 / (ab * f.lambda + 1.0 - ab));
    let c2 = f.c_hat.norm_sqr();
    let cinv = match model {
        GuidanceModel::Dps { alpha_dps } => M3::identity() * c(alpha_dps / s2),
        GuidanceModel::PiGdm => M3::identity() * c(1.0 / ((1.0 - ab) * c2 + s2)),
        GuidanceModel::Cgdm => adsn::rank1_inverse((1.0 - ab) * c2 / (ab * f.lambda + 1.0 - ab), s2, &f.that)?,
    };
    let gcg = g * cinv * g;
    let lin = (M3::identity() - r * c(beta) - gcg * c(beta * ab * c2)) / c(alpha.sqrt());
    let resid = f.v_hat - f.mu_hat * f.c_hat + g * f.mu_hat * (f.c_hat * ab);
    let shift = (r * f.mu_hat + g * cinv * resid * f.c_hat.conj()) * c(beta * sched.alpha_bar(t - 1).sqrt());
    Ok((lin, shift))
}

/// Eigenvalues and projected mean of the true noisy posterior at one frequency.
fn freq_truth(f: &Freq, ab: f64, sigma: f64) -> ([f64; 3], [Complex64; 3]) {
    let s2 = sigma * sigma;
    let c2 = f.c_hat.norm_sqr();
    let den = c2 * f.lambda + s2;
    let post1 = if den > 0.0 { f.lambda * s2 / den } else { f.lambda };
    let values = [ab * post1 + 1.0 - ab, 1.0 - ab, 1.0 - ab];
    let sab = ab.sqrt();
    let mut means = [c(0.0); 3];
    for (k, m) in means.iter_mut().enumerate() {
        let vk = f.eig.basis.column(k);
        let mu_k = vk.dotc(&f.mu_hat);
        *m = if k == 0 && den > 0.0 {
            let v_k = vk.dotc(&f.v_hat);
            (mu_k + (v_k - f.c_hat * mu_k) * f.c_hat.conj() * (f.lambda / den)) * sab
        } else {
            mu_k * sab
        };
    }
    (values, means)
}

fn project(basis: &M3, s: &M3, m: &C3) -> ([f64; 3], [Complex64; 3], f64) {
    let d = basis.adjoint() * s * basis;
    let mut leak: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            if i != j {
                leak = leak.max(d[(i, j)].norm());
            }
        }
    }
    let pm = basis.adjoint() * m;
    ([d[(0, 0)].re, d[(1, 1)].re, d[(2, 2)].re], [pm[0], pm[1], pm[2]], leak)
}

fn check_freq(model: GuidanceModel, t: usize, s: &M3, m: &C3) -> Result<()> {
    let (a, b) = (s.camax(), m.norm());
    if !a.is_finite() || !b.is_finite() || a > DIVERGENCE_NORM.powi(2) || b > DIVERGENCE_NORM {
        return Err(Error::Instability {
            model: model.name().to_string(),
            t,
            detail: format!("spectral covariance entry {a:e}, mean norm {b:e}"),
        });
    }
    Ok(())
}

/// Law of `y_t` at every frequency, in the eigenbasis of the prior blocks.
#[derive(Debug, Clone)]
pub struct SpectralCurveState {
    pub t: usize,
    /// `v_kᴴ Σ̂_t v_k` per frequency.
    pub eigenvalues: Vec<[f64; 3]>,
    /// `v_kᴴ m̂_t` per frequency, in unnormalised DFT units.
    pub means: Vec<[Complex64; 3]>,
    /// Largest off-diagonal entry of `Vᴴ Σ̂_t V` over all frequencies.
    pub leakage: f64,
}

/// Exact backward laws of one sampler for `t = T, ..., 0` (small images only).
pub fn spectral_backward_propagation(
    problem: &SpectralProblem,
    guidance: GuidanceModel,
    sched: &Schedule,
) -> Result<Vec<SpectralCurveState>> {
    guidance.validate()?;
    let n = problem.pixels();
    if n > MAX_TRAJECTORY_PIXELS {
        return Err(Error::Parameter(format!(
            "full spectral trajectories limited to {MAX_TRAJECTORY_PIXELS} pixels; use deblur_wasserstein_curves"
        )));
    }
    let big_t = sched.steps();
    let mut states: Vec<SpectralCurveState> = (0..=big_t)
        .rev()
        .map(|t| SpectralCurveState {
            t,
            eigenvalues: vec![[0.0; 3]; n],
            means: vec![[c(0.0); 3]; n],
            leakage: 0.0,
        })
        .collect();
    for (k, f) in problem.freqs.iter().enumerate() {
        let mut s = M3::identity();
        let mut m = C3::zeros();
        for (i, t) in (0..=big_t).rev().enumerate() {
            if t < big_t {
                let (lin, shift) = freq_step(f, guidance, sched, t + 1, problem.sigma)?;
                s = lin * s * lin.adjoint() + M3::identity() * c(sched.noise_var(t + 1));
                s = (s + s.adjoint()) * c(0.5);
                m = lin * m + shift;
                check_freq(guidance, t, &s, &m)?;
            }
            let (e, pm, leak) = project(&f.eig.basis, &s, &m);
            states[i].eigenvalues[k] = e;
            states[i].means[k] = pm;
            states[i].leakage = states[i].leakage.max(leak);
        }
    }
    Ok(states)
}

/// Per-frequency eigenvalues and projected means.
pub type SpectralLaw = (Vec<[f64; 3]>, Vec<[Complex64; 3]>);

/// Eigenvalues and projected means of the true noisy posterior at time `t`.
pub fn spectral_noisy_posterior(problem: &SpectralProblem, sched: &Schedule, t: usize) -> Result<SpectralLaw> {
    sched.check_t(t)?;
    let ab = sched.alpha_bar(t);
    Ok(problem.freqs.iter().map(|f| freq_truth(f, ab, problem.sigma)).unzip())
}

/// Curves and terminal means for a set of samplers.
#[derive(Debug, Clone)]
pub struct DeblurCurves {
    pub curves: Vec<WassersteinCurve>,
    /// Spectrum of the propagated mean `μ₀` per model (channel basis).
    pub terminal_means: Vec<Vec<C3>>,
    /// Largest off-eigenbasis entry met during propagation.
    pub leakage: f64,
}

impl DeblurCurves {
    /// Spatial image of a model's propagated terminal mean.
    pub fn mean_image(&self, problem: &SpectralProblem, index: usize) -> RgbImage {
        spectrum_to_image(problem.height, problem.width, &self.terminal_means[index])
    }
}

pub(crate) fn spectrum_to_image(h: usize, w: usize, spec: &[C3]) -> RgbImage {
    let fft = Fft2::new(h, w);
    let planes = [0, 1, 2].map(|ch| fft.inverse_real(&spec.iter().map(|z| z[ch]).collect::<Vec<_>>()));
    RgbImage { width: w, height: h, planes }
}

/// Per-`t` squared sums `(ker, perp, mean)` for one chunk of frequencies.
struct ChunkSums {
    sums: Vec<Vec<[f64; 3]>>,
    means: Vec<Vec<C3>>,
    leakage: f64,
}

fn chunk_sums(
    problem: &SpectralProblem,
    freqs: &[Freq],
    models: &[GuidanceModel],
    sched: &Schedule,
) -> Result<ChunkSums> {
    let big_t = sched.steps();
    let inv_n = 1.0 / problem.pixels() as f64;
    let mut sums = vec![vec![[0.0; 3]; big_t + 1]; models.len()];
    let mut means = vec![Vec::with_capacity(freqs.len()); models.len()];
    let mut leakage: f64 = 0.0;
    for f in freqs {
        for (mi, &model) in models.iter().enumerate() {
            let mut s = M3::identity();
            let mut m = C3::zeros();
            for (i, t) in (0..=big_t).rev().enumerate() {
                if t < big_t {
                    let (lin, shift) = freq_step(f, model, sched, t + 1, problem.sigma)?;
                    s = lin * s * lin.adjoint() + M3::identity() * c(sched.noise_var(t + 1));
                    s = (s + s.adjoint()) * c(0.5);
                    m = lin * m + shift;
                    check_freq(model, t, &s, &m)?;
                }
                let (e, pm, leak) = project(&f.eig.basis, &s, &m);
                leakage = leakage.max(leak);
                let (te, tm) = freq_truth(f, sched.alpha_bar(t), problem.sigma);
                let acc = &mut sums[mi][i];
                for k in 0..3 {
                    let gap = (pm[k] - tm[k]).norm_sqr() * inv_n;
                    let cov = (e[k].max(0.0).sqrt() - te[k].max(0.0).sqrt()).powi(2);
                    acc[if f.kernel[k] { 0 } else { 1 }] += gap + cov;
                    acc[2] += gap;
                }
            }
            means[mi].push(m);
        }
    }
    Ok(ChunkSums { sums, means, leakage })
}

fn deblur_curves_chunked(
    problem: &SpectralProblem,
    sched: &Schedule,
    models: &[GuidanceModel],
    chunk: usize,
) -> Result<DeblurCurves> {
    for m in models {
        m.validate()?;
    }
    if problem.height > MAX_CURVE_SIDE || problem.width > MAX_CURVE_SIDE {
        return Err(Error::Parameter(format!("curve computation limited to {MAX_CURVE_SIDE}x{MAX_CURVE_SIDE} images")));
    }
    let parts = problem
        .freqs
        .par_chunks(chunk)
        .map(|fs| chunk_sums(problem, fs, models, sched))
        .collect::<Result<Vec<_>>>()?;
    let big_t = sched.steps();
    let mut totals = vec![vec![[0.0; 3]; big_t + 1]; models.len()];
    let mut terminal = vec![Vec::with_capacity(problem.pixels()); models.len()];
    let mut leakage: f64 = 0.0;
    for p in parts {
        for (mi, rows) in p.sums.iter().enumerate() {
            for (acc, r) in totals[mi].iter_mut().zip(rows) {
                for k in 0..3 {
                    acc[k] += r[k];
                }
            }
        }
        for (mi, ms) in p.means.into_iter().enumerate() {
            terminal[mi].extend(ms);
        }
        leakage = leakage.max(p.leakage);
    }
    let curves = models
        .iter()
        .zip(&totals)
        .map(|(m, rows)| WassersteinCurve {
            model: m.name().to_string(),
            points: rows
                .iter()
                .enumerate()
                .map(|(i, r)| CurvePoint {
                    t: big_t - i,
                    w_total: (r[0] + r[1]).sqrt(),
                    w_ker: r[0].sqrt(),
                    w_perp: r[1].sqrt(),
                    mean_gap: r[2].sqrt(),
                })
                .collect(),
        })
        .collect();
    Ok(DeblurCurves {
        curves,
        terminal_means: terminal,
        leakage,
    })
}

/// Exact W2 between each sampler's backward law and the true noisy posterior, split on `ker Σ`.
///
/// Frequencies are processed in fixed chunks in parallel and reduced in
/// chunk order, so results do not depend on the thread count.
pub fn deblur_wasserstein_curves(
    problem: &SpectralProblem,
    sched: &Schedule,
    models: &[GuidanceModel],
) -> Result<DeblurCurves> {
    deblur_curves_chunked(problem, sched, models, CHUNK)
}

fn noise_spectrum<R: Rng + ?Sized>(fft: &Fft2, n: usize, rng: &mut R) -> Vec<C3> {
    let planes: Vec<Vec<Complex64>> = (0..3)
        .map(|_| {
            let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            fft.forward_real(&z)
        })
        .collect();
    (0..n).map(|k| C3::new(planes[0][k], planes[1][k], planes[2][k])).collect()
}

/// One run of the guided sampler at image scale, computed in Fourier.
///
/// The stream is consumed as `y_T` then `z_T, ..., z_1`, each three
/// spatial planes of white noise, so equal seeds share noise across models.
pub fn sample_conditional<R: Rng + ?Sized>(
    problem: &SpectralProblem,
    guidance: GuidanceModel,
    sched: &Schedule,
    rng: &mut R,
) -> Result<RgbImage> {
    guidance.validate()?;
    let n = problem.pixels();
    let fft = Fft2::new(problem.height, problem.width);
    let mut y = noise_spectrum(&fft, n, rng);
    for t in (1..=sched.steps()).rev() {
        let z = noise_spectrum(&fft, n, rng);
        let sd = sched.noise_var(t).sqrt();
        let next = problem
            .freqs
            .par_iter()
            .zip(y.par_iter().zip(z.par_iter()))
            .map(|(f, (yk, zk))| {
                let (lin, shift) = freq_step(f, guidance, sched, t, problem.sigma)?;
                Ok(lin * yk + shift + zk * c(sd))
            })
            .collect::<Result<Vec<C3>>>()?;
        y = next;
        let norm = (y.iter().map(|v| v.norm_squared()).sum::<f64>() / n as f64).sqrt();
        if !norm.is_finite() || norm > DIVERGENCE_NORM {
            return Err(Error::Instability {
                model: guidance.name().to_string(),
                t: t - 1,
                detail: format!("state norm {norm:e}"),
            });
        }
    }
    Ok(spectrum_to_image(problem.height, problem.width, &y))
}

/// Unconditional DDPM with the exact ADSN score.
pub fn sample_unconditional<R: Rng + ?Sized>(model: &SpectralAdsn, sched: &Schedule, rng: &mut R) -> Result<RgbImage> {
    sample_conditional(&SpectralProblem::unconditional(model)?, GuidanceModel::Cgdm, sched, rng)
}
