//! RGB images, PNG I/O and the 2D DFT.
//!
//! The forward transform is unnormalised and the inverse carries the
//! `1/(MN)` factor. Spectral arrays are indexed `ky * width + kx`.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Three real planes of `height × width` pixels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub planes: [Vec<f64>; 3],
}

impl RgbImage {
    pub fn new(width: usize, height: usize, planes: [Vec<f64>; 3]) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Parameter("image dimensions must be positive".into()));
        }
        for p in &planes {
            if p.len() != width * height {
                return Err(Error::dim("image plane", width * height, p.len()));
            }
        }
        Ok(Self { width, height, planes })
    }

    pub fn filled(width: usize, height: usize, value: [f64; 3]) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            planes: value.map(|v| vec![v; n]),
        }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.planes[c][y * self.width + x]
    }

    /// Planes concatenated channel by channel.
    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(3 * self.pixels(), self.planes.iter().flatten().copied())
    }

    pub fn from_vector(width: usize, height: usize, v: &DVector<f64>) -> Result<Self> {
        let n = width * height;
        if v.len() != 3 * n {
            return Err(Error::dim("image vector", 3 * n, v.len()));
        }
        let plane = |c: usize| v.as_slice()[c * n..(c + 1) * n].to_vec();
        Self::new(width, height, [plane(0), plane(1), plane(2)])
    }

    pub fn channel_means(&self) -> [f64; 3] {
        let n = self.pixels() as f64;
        [0, 1, 2].map(|c| self.planes[c].iter().sum::<f64>() / n)
    }

    /// 8-bit sRGB values mapped linearly to `[0, 1]`.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut planes = [vec![0.0; w * h], vec![0.0; w * h], vec![0.0; w * h]];
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                planes[c][y as usize * w + x as usize] = px[c] as f64 / 255.0;
            }
        }
        Self::new(w, h, planes)
    }

    /// Values are clamped to `[0, 1]` and rounded to 8 bits.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut img = image::RgbImage::new(self.width as u32, self.height as u32);
        for (x, y, px) in img.enumerate_pixels_mut() {
            for c in 0..3 {
                let v = self.get(c, y as usize, x as usize);
                px[c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        img.save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Planned 2D transforms for a fixed image size.
#[derive(Clone)]
pub struct Fft2 {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.height, self.width)
    }
}

impl Fft2 {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn run(&self, data: &mut [Complex64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.len(), self.len());
        let (h, w) = (self.height, self.width);
        rows.process(data);
        let mut t = vec![Complex64::new(0.0, 0.0); h * w];
        for y in 0..h {
            for x in 0..w {
                t[x * h + y] = data[y * w + x];
            }
        }
        cols.process(&mut t);
        for y in 0..h {
            for x in 0..w {
                data[y * w + x] = t[x * h + y];
            }
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_fwd, &self.col_fwd);
    }

    /// Inverse transform including the `1/(MN)` factor.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_inv, &self.col_inv);
        let s = 1.0 / self.len() as f64;
        for z in data.iter_mut() {
            *z *= s;
        }
    }

    pub fn forward_real(&self, plane: &[f64]) -> Vec<Complex64> {
        let mut d: Vec<Complex64> = plane.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward(&mut d);
        d
    }

    /// Inverse transform of a Hermitian-symmetric spectrum.
    ///
    /// Panics if the imaginary residue exceeds `1e-10` relative to the real part,
    /// which would mean the symmetry was broken upstream.
    pub fn inverse_real(&self, spectrum: &[Complex64]) -> Vec<f64> {
        let mut d = spectrum.to_vec();
        self.inverse(&mut d);
        let scale = d.iter().map(|z| z.re.abs()).fold(1.0, f64::max);
        let residue = d.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        assert!(residue <= 1e-10 * scale, "imaginary residue {residue:e} after inverse DFT");
        d.into_iter().map(|z| z.re).collect()
    }
}

/// Index of the frequency `-ξ`.
pub fn conjugate_index(height: usize, width: usize, k: usize) -> usize {
    let (ky, kx) = (k / width, k % width);
    ((height - ky) % height) * width + (width - kx) % width
}
