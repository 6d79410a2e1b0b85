//! Small dense helpers for symmetric positive semidefinite matrices.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues in `[-PSD_CLAMP, 0)` are treated as rounding and set to zero.
pub const PSD_CLAMP: f64 = 1e-10;

/// Eigenvalues at or below this fraction of the largest one span the kernel.
pub const KERNEL_REL_TOL: f64 = 1e-12;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric eigendecomposition with negative-eigenvalue clamping.
pub fn psd_eigen(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !m.is_square() {
        return Err(Error::dim("psd_eigen", "square matrix", format!("{}x{}", m.nrows(), m.ncols())));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -PSD_CLAMP {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    let values = eig.eigenvalues.map(|l| l.max(0.0));
    Ok((values, eig.eigenvectors))
}

/// Eigenvalues below this multiple of `ε·λ_max` are rounding noise.
const ROUNDING_FLOOR: f64 = 64.0 * f64::EPSILON;

/// Principal square root of a PSD matrix.
///
/// Eigenvalues at rounding level are set to zero first, since their square
/// roots would otherwise be of order `√ε`.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    psd_sqrt_above(m, None)
}

/// Rounding floor for eigenvalues of a PSD matrix whose largest eigenvalue is `scale`.
pub fn rounding_floor(scale: f64) -> f64 {
    ROUNDING_FLOOR * scale
}

/// Square root with eigenvalues at or below `floor` zeroed; the default floor
/// is relative to the matrix's own largest eigenvalue.
pub fn psd_sqrt_above(m: &DMatrix<f64>, floor: Option<f64>) -> Result<DMatrix<f64>> {
    let (values, q) = psd_eigen(m)?;
    let floor = floor.unwrap_or_else(|| rounding_floor(values.iter().cloned().fold(0.0, f64::max)));
    Ok(reassemble(&q, values.iter().map(|&l| if l <= floor { 0.0 } else { l.sqrt() })))
}

/// `Q diag(f) Qᵀ`, symmetric by construction.
pub fn reassemble(q: &DMatrix<f64>, diag: impl Iterator<Item = f64>) -> DMatrix<f64> {
    let mut scaled = q.clone();
    for (mut col, d) in scaled.column_iter_mut().zip(diag) {
        col *= d;
    }
    symmetrize(&(scaled * q.transpose()))
}

pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(symmetrize(m)).ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))
}

/// Orthogonal polar factor `U` of a square matrix `K = U P`.
///
/// One-sided Jacobi: the rotated columns of `K V` become mutually orthogonal,
/// giving `K = W S Vᵀ` with orthonormal factors to working precision even
/// when `K` is rank deficient. Null directions of `W` are completed by QR.
pub fn polar_factor(k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !k.is_square() {
        return Err(Error::dim("polar_factor", "square matrix", format!("{}x{}", k.nrows(), k.ncols())));
    }
    let n = k.nrows();
    let mut g = k.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let tol = f64::EPSILON * n as f64;
    let tiny = (1e-150 * k.norm()).powi(2);
    let mut converged = false;
    for _ in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = g.column(p).norm_squared();
                let beta = g.column(q).norm_squared();
                let gamma = g.column(p).dot(&g.column(q));
                if alpha <= tiny || beta <= tiny || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut g, &mut v] {
                    for r in 0..n {
                        let (a, b) = (m[(r, p)], m[(r, q)]);
                        m[(r, p)] = c * a - s * b;
                        m[(r, q)] = s * a + c * b;
                    }
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Singular("Jacobi SVD did not converge".into()));
    }
    let norms: Vec<f64> = g.column_iter().map(|c| c.norm()).collect();
    let floor = 1e-150 * norms.iter().cloned().fold(0.0, f64::max);
    let mut w = DMatrix::zeros(n, n);
    let mut missing = Vec::new();
    for (i, &s) in norms.iter().enumerate() {
        if s > floor && s > 0.0 {
            w.set_column(i, &(g.column(i) / s));
        } else {
            missing.push(i);
        }
    }
    if !missing.is_empty() {
        let kept: Vec<usize> = (0..n).filter(|i| !missing.contains(i)).collect();
        let mut stacked = DMatrix::zeros(n, kept.len() + n);
        for (j, &i) in kept.iter().enumerate() {
            stacked.set_column(j, &w.column(i));
        }
        stacked.view_mut((0, kept.len()), (n, n)).copy_from(&DMatrix::<f64>::identity(n, n));
        let q = stacked.qr().q();
        for (j, &i) in missing.iter().enumerate() {
            w.set_column(i, &q.column(kept.len() + j));
        }
    }
    Ok(w * v.transpose())
}

/// Cached eigendecomposition of a PSD matrix.
///
/// Every diffused covariance `ᾱΣ + (1-ᾱ)I` shares the eigenvectors of `Σ`, so
/// inverses and products along the whole schedule reduce to scalar maps on
/// the eigenvalues.
#[derive(Debug, Clone)]
pub struct PsdSpectrum {
    pub vectors: DMatrix<f64>,
    pub values: DVector<f64>,
}

impl PsdSpectrum {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        let (values, vectors) = psd_eigen(m)?;
        Ok(Self { vectors, values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Apply the spectral map `λ ↦ f(λ)` and return `Q f(Λ) Qᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        reassemble(&self.vectors, self.values.iter().map(|&l| f(l)))
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Number of eigenvalues at or below `rel_tol · λ_max`.
    pub fn kernel_dim(&self, rel_tol: f64) -> usize {
        self.kernel_mask(rel_tol).iter().filter(|&&k| k).count()
    }

    pub fn kernel_mask(&self, rel_tol: f64) -> Vec<bool> {
        let cut = rel_tol * self.max_value();
        self.values.iter().map(|&l| l <= cut).collect()
    }

    /// Columns of `Q` selected by `mask`.
    pub fn basis(&self, mask: &[bool]) -> DMatrix<f64> {
        let cols: Vec<_> = self
            .vectors
            .column_iter()
            .zip(mask)
            .filter(|(_, m)| **m)
            .map(|(c, _)| c.into_owned())
            .collect();
        if cols.is_empty() {
            DMatrix::zeros(self.dim(), 0)
        } else {
            DMatrix::from_columns(&cols)
        }
    }
}
