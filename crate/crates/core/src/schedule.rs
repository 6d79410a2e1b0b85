//! Discrete DDPM noise schedule.
//!
//! Timesteps are 1-based for `β_t` (`t = 1..=T`) while cumulative products
//! are indexed `0..=T` with `ᾱ_0 = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

/// Noise schedule with its cumulative products. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Schedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    step_noise_var: Vec<f64>,
}

impl Schedule {
    /// Linear schedule from `beta_start` (at `t = 1`) to `beta_end` (at `t = T`),
    /// both endpoints hit exactly.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Parameter("schedule needs at least one step".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Parameter(format!(
                "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        if steps == 1 && beta_start != beta_end {
            return Err(Error::Parameter(
                "a single-step schedule needs beta_start == beta_end".into(),
            ));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if i == 0 {
                    beta_start
                } else if i == steps - 1 {
                    beta_end
                } else {
                    let w = i as f64 / (steps - 1) as f64;
                    beta_start + (beta_end - beta_start) * w
                }
            })
            .collect();
        Ok(Self::from_betas(betas))
    }

    pub fn from_params(p: &ScheduleParams) -> Result<Self> {
        Self::linear(p.steps, p.beta_start, p.beta_end)
    }

    fn from_betas(betas: Vec<f64>) -> Self {
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0f64;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let step_noise_var = betas.clone();
        Self {
            betas,
            alphas,
            alpha_bars,
            step_noise_var,
        }
    }

    /// Number of steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// Variance of the noise injected by the backward step at `t`.
    pub fn noise_var(&self, t: usize) -> f64 {
        self.step_noise_var[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub(crate) fn check_t(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(Error::TimeOutOfRange {
                t,
                max: self.steps(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::TimeOutOfRange {
                t,
                max: self.steps(),
            });
        }
        Ok(())
    }
}
