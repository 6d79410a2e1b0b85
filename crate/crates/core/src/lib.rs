//! Exact evaluation of diffusion posterior samplers under Gaussian priors.
//!
//! With a Gaussian prior and a linear-Gaussian degradation, every quantity a
//! diffusion sampler touches (scores, denoisers, guidance terms, backward
//! transitions) is affine-Gaussian, so the law of each sampler trajectory can
//! be propagated in closed form and compared to the true posterior.

pub mod adsn;
pub mod analysis;
pub mod deblur;
pub mod error;
pub mod experiments;
pub mod fft;
pub mod gaussian;
pub mod linalg;
pub mod samplers;
pub mod schedule;

pub use error::{Error, Result};
