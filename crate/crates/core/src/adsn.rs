//! ADSN microtexture model: a stationary Gaussian field whose covariance is
//! block diagonal in Fourier with rank-one `3×3` blocks `t̂(ξ) t̂(ξ)ᴴ`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fft::{Fft2, RgbImage};
use crate::gaussian::GaussianLaw;
use crate::schedule::Schedule;

pub type C3 = Vector3<Complex64>;
pub type M3 = Matrix3<Complex64>;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// `N(m, Σ)` on RGB images with `Σ̂(ξ) = t̂(ξ) t̂(ξ)ᴴ`.
#[derive(Debug, Clone)]
pub struct SpectralAdsn {
    pub height: usize,
    pub width: usize,
    pub mean: [f64; 3],
    /// DFT of the texton per frequency, indexed `ky * width + kx`.
    pub that: Vec<C3>,
}

/// Texton `t_c = (u_c - m_c)/√(MN)` in the Fourier domain.
pub fn texton_from_image(u: &RgbImage) -> SpectralAdsn {
    let (h, w) = (u.height, u.width);
    let mean = u.channel_means();
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let fft = Fft2::new(h, w);
    let spectra: Vec<Vec<Complex64>> = (0..3)
        .map(|ch| {
            let plane: Vec<f64> = u.planes[ch].iter().map(|&x| (x - mean[ch]) * scale).collect();
            fft.forward_real(&plane)
        })
        .collect();
    let mut that: Vec<C3> = (0..h * w).map(|k| C3::new(spectra[0][k], spectra[1][k], spectra[2][k])).collect();
    // zero channel means make the DC coefficient vanish; remove rounding residue
    that[0] = C3::zeros();
    SpectralAdsn {
        height: h,
        width: w,
        mean,
        that,
    }
}

impl SpectralAdsn {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn fft(&self) -> Fft2 {
        Fft2::new(self.height, self.width)
    }

    /// `‖t̂(ξ)‖²`, the non-zero eigenvalue of each block.
    pub fn block_eigenvalues(&self) -> Vec<f64> {
        self.that.iter().map(|t| t.norm_squared()).collect()
    }

    /// Spatial texton planes.
    pub fn texton(&self) -> [Vec<f64>; 3] {
        let fft = self.fft();
        [0, 1, 2].map(|ch| fft.inverse_real(&self.that.iter().map(|t| t[ch]).collect::<Vec<_>>()))
    }

    /// DFT of the constant mean image: `MN·m` at DC, zero elsewhere.
    pub fn mean_spectrum(&self) -> Vec<C3> {
        let mut out = vec![C3::zeros(); self.pixels()];
        let n = self.pixels() as f64;
        out[0] = C3::new(c(self.mean[0] * n), c(self.mean[1] * n), c(self.mean[2] * n));
        out
    }

    /// Dense `3MN`-dimensional law in the channel-plane ordering of [`RgbImage::to_vector`].
    ///
    /// `Cov(x_c(p), x_d(q)) = Σ_r t_c(r) t_d(r + q - p)` with periodic indices.
    pub fn dense_law(&self) -> Result<GaussianLaw> {
        let n = self.pixels();
        if 3 * n > crate::analysis::MAX_DENSE_DIM {
            return Err(Error::Parameter(format!("dense ADSN law limited to {} pixels", crate::analysis::MAX_DENSE_DIM / 3)));
        }
        let t = self.texton();
        let (h, w) = (self.height, self.width);
        let mut cov = DMatrix::zeros(3 * n, 3 * n);
        for c1 in 0..3 {
            for c2 in 0..3 {
                for p in 0..n {
                    for q in 0..n {
                        let (dy, dx) = ((q / w + h - p / w) % h, (q % w + w - p % w) % w);
                        let mut acc = 0.0;
                        for r in 0..n {
                            let (ry, rx) = (r / w, r % w);
                            acc += t[c1][r] * t[c2][((ry + dy) % h) * w + (rx + dx) % w];
                        }
                        cov[(c1 * n + p, c2 * n + q)] = acc;
                    }
                }
            }
        }
        let mean = DVector::from_iterator(3 * n, (0..3).flat_map(|ch| std::iter::repeat_n(self.mean[ch], n)));
        GaussianLaw::new(mean, cov)
    }
}

/// Draw `m + t ⋆ w` with one white noise field `w` shared by the three channels.
pub fn adsn_sample<R: Rng + ?Sized>(model: &SpectralAdsn, rng: &mut R) -> RgbImage {
    let fft = model.fft();
    let noise: Vec<f64> = (0..model.pixels()).map(|_| rng.sample(StandardNormal)).collect();
    let w_hat = fft.forward_real(&noise);
    let planes = [0, 1, 2].map(|ch| {
        let spec: Vec<Complex64> = model.that.iter().zip(&w_hat).map(|(t, w)| t[ch] * w).collect();
        fft.inverse_real(&spec).into_iter().map(|x| x + model.mean[ch]).collect()
    });
    RgbImage {
        width: model.width,
        height: model.height,
        planes,
    }
}

/// `(a y yᴴ + b I)⁻¹ = I/b - a/(b(a‖y‖² + b)) y yᴴ` for `b > 0`, `a‖y‖² + b > 0`.
pub fn rank1_inverse(a: f64, b: f64, y: &C3) -> Result<M3> {
    let den = a * y.norm_squared() + b;
    if b <= 0.0 || den <= 0.0 {
        return Err(Error::Singular(format!("rank-one update with b={b}, a|y|²+b={den}")));
    }
    Ok(M3::identity() / c(b) - (y * y.adjoint()) * c(a / (b * den)))
}

/// `(a y yᴴ + b I)⁻¹ f` without forming the matrix.
pub(crate) fn rank1_solve(a: f64, b: f64, y: &C3, f: &C3) -> C3 {
    let den = a * y.norm_squared() + b;
    (f - y * (y.dotc(f) * (a / den))) / c(b)
}

fn check_field(model: &SpectralAdsn, len: usize) -> Result<()> {
    if len != model.pixels() {
        return Err(Error::dim("spectral field", model.pixels(), len));
    }
    Ok(())
}

/// Apply `Σ̂_t(ξ)⁻¹ = (ᾱ_t t̂ t̂ᴴ + (1-ᾱ_t) I)⁻¹` frequency by frequency.
pub fn apply_sigma_t_inverse(model: &SpectralAdsn, sched: &Schedule, t: usize, field: &[C3]) -> Result<Vec<C3>> {
    sched.check_step(t)?;
    check_field(model, field.len())?;
    let ab = sched.alpha_bar(t);
    Ok(model.that.iter().zip(field).map(|(y, f)| rank1_solve(ab, 1.0 - ab, y, f)).collect())
}

/// Exact score `-Σ_t⁻¹ (x - √ᾱ_t m)` of the diffused ADSN law.
pub fn adsn_score(model: &SpectralAdsn, sched: &Schedule, t: usize, x: &RgbImage) -> Result<RgbImage> {
    sched.check_step(t)?;
    if (x.height, x.width) != (model.height, model.width) {
        return Err(Error::dim(
            "score input",
            format!("{}x{}", model.height, model.width),
            format!("{}x{}", x.height, x.width),
        ));
    }
    let fft = model.fft();
    let sab = sched.alpha_bar(t).sqrt();
    let spectra: Vec<Vec<Complex64>> = (0..3)
        .map(|ch| {
            let centred: Vec<f64> = x.planes[ch].iter().map(|&v| v - sab * model.mean[ch]).collect();
            fft.forward_real(&centred)
        })
        .collect();
    let field: Vec<C3> = (0..model.pixels()).map(|k| C3::new(spectra[0][k], spectra[1][k], spectra[2][k])).collect();
    let solved = apply_sigma_t_inverse(model, sched, t, &field)?;
    let planes = [0, 1, 2].map(|ch| {
        fft.inverse_real(&solved.iter().map(|f| -f[ch]).collect::<Vec<_>>())
    });
    RgbImage::new(model.width, model.height, planes)
}

/// Orthonormal eigenbasis of one `3×3` block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockEigen {
    /// Columns `v₁, v₂, v₃`; `v₁ ∥ t̂(ξ)` when `t̂(ξ) ≠ 0`.
    pub basis: M3,
    /// `(‖t̂(ξ)‖², 0, 0)`.
    pub values: [f64; 3],
}

fn canonical(i: usize) -> C3 {
    let mut e = C3::zeros();
    e[i] = c(1.0);
    e
}

/// Unit vector orthogonal to `v1`, from `(-ȳ₃, 0, ȳ₁)` or, when that
/// degenerates, by Gram–Schmidt on the canonical vectors.
fn second_vector(v1: &C3) -> C3 {
    let cand = C3::new(-v1[2].conj(), c(0.0), v1[0].conj());
    let n = cand.norm();
    if n > 1e-8 {
        return cand / c(n);
    }
    let mut best = C3::zeros();
    let mut best_norm = 0.0;
    for i in 0..3 {
        let e = canonical(i);
        let r = e - v1 * v1.dotc(&e);
        let rn = r.norm();
        if rn > best_norm {
            best_norm = rn;
            best = r / c(rn);
        }
    }
    best
}

pub fn block_eigen(y: &C3) -> BlockEigen {
    let lam = y.norm_squared();
    if lam == 0.0 {
        return BlockEigen {
            basis: M3::identity(),
            values: [0.0; 3],
        };
    }
    let v1 = y / c(lam.sqrt());
    let v2 = second_vector(&v1);
    let v3 = v1.cross(&v2).map(|z| z.conj());
    let v3 = v3 / c(v3.norm());
    BlockEigen {
        basis: M3::from_columns(&[v1, v2, v3]),
        values: [lam, 0.0, 0.0],
    }
}

/// Per-frequency eigenbasis of the ADSN covariance.
pub fn eigenstructure(model: &SpectralAdsn) -> Vec<BlockEigen> {
    model.that.iter().map(block_eigen).collect()
}
