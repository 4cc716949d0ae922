//! Variance-preserving diffusion schedule and the closed-form steps built on it.
//!
//! Timesteps are 1-indexed (`1..=T`); `abar(0)` is defined as 1 so the final
//! ancestral step is deterministic and returns the Tweedie estimate.

use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    abar: Vec<f64>,
    sigma_tilde: Vec<f64>,
}

/// A point on a reverse trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub x: Vec<f64>,
    pub t: usize,
}

impl NoiseSchedule {
    /// Linear forward-time schedule `beta_1 = beta_start .. beta_T = beta_end`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Parameter(alloc::format!(
                "schedule needs at least 2 steps, got {steps}"
            )));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Parameter(alloc::format!(
                "beta range must satisfy 0 < start <= end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let span = beta_end - beta_start;
        let beta: Vec<f64> = (0..steps)
            .map(|i| beta_start + (i as f64) / ((steps - 1) as f64) * span)
            .collect();
        Ok(Self::from_betas(beta))
    }

    /// The default 1000-step schedule with endpoints 1e-4 and 0.02.
    pub fn default_linear() -> Self {
        Self::linear(1000, 1e-4, 0.02).expect("default schedule is valid")
    }

    fn from_betas(beta: Vec<f64>) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut abar = Vec::with_capacity(beta.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            abar.push(acc);
        }
        let sigma_tilde = (0..beta.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { abar[i - 1] };
                libm::sqrt(beta[i] * (1.0 - prev) / (1.0 - abar[i]))
            })
            .collect();
        Self {
            beta,
            alpha,
            abar,
            sigma_tilde,
        }
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// Cumulative product up to `t`; `abar(0) == 1`.
    pub fn abar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.abar[t - 1]
        }
    }

    pub fn sigma_tilde(&self, t: usize) -> f64 {
        self.sigma_tilde[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn abars(&self) -> &[f64] {
        &self.abar
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            Err(Error::Parameter(alloc::format!(
                "timestep {t} outside [1, {}]",
                self.steps()
            )))
        } else {
            Ok(())
        }
    }

    /// Samples `x_t ~ q(x_t | x_0)` with caller-supplied standard noise.
    pub fn q_sample(&self, x0: &[f64], t: usize, noise: &[f64]) -> Result<Vec<f64>> {
        self.check_t(t)?;
        check_len(x0.len(), noise.len(), "q_sample noise")?;
        let ab = self.abar(t);
        Ok(q_sample_with(ab, x0, noise))
    }

    /// Tweedie estimate of `E[x_0 | x_t]` from a score evaluated at `x_t`.
    pub fn tweedie_mean(&self, x_t: &[f64], t: usize, score: &[f64]) -> Result<Vec<f64>> {
        self.check_t(t)?;
        check_len(x_t.len(), score.len(), "tweedie score")?;
        let ab = self.abar(t);
        if ab <= 0.0 {
            return Err(Error::Singular("abar_t is zero in Tweedie estimate"));
        }
        let (c_x, c_s) = self.tweedie_coefficients(t);
        Ok(x_t
            .iter()
            .zip(score)
            .map(|(x, s)| c_x * x + c_s * s)
            .collect())
    }

    /// `(1/sqrt(abar_t), (1-abar_t)/sqrt(abar_t))`.
    pub fn tweedie_coefficients(&self, t: usize) -> (f64, f64) {
        let ab = self.abar(t);
        let r = 1.0 / libm::sqrt(ab);
        (r, (1.0 - ab) * r)
    }

    /// Coefficients of `x_t` and `x0_hat` in the DDPM posterior mean.
    pub fn ancestral_coefficients(&self, t: usize) -> (f64, f64) {
        if t == 1 {
            // abar_0 = 1 makes these exactly (0, 1)
            return (0.0, 1.0);
        }
        let ab = self.abar(t);
        let ab_prev = self.abar(t - 1);
        let c_x = libm::sqrt(self.alpha(t)) * (1.0 - ab_prev) / (1.0 - ab);
        let c_0 = libm::sqrt(ab_prev) * self.beta(t) / (1.0 - ab);
        (c_x, c_0)
    }

    /// One ancestral reverse step `x_t -> x_{t-1}`.
    ///
    /// At `t == 1` the noise term carries a zero coefficient, so the step
    /// returns `x0_hat` exactly.
    pub fn ancestral_step(
        &self,
        x_t: &[f64],
        t: usize,
        x0_hat: &[f64],
        noise: &[f64],
    ) -> Result<Vec<f64>> {
        self.check_t(t)?;
        check_len(x_t.len(), x0_hat.len(), "ancestral x0_hat")?;
        check_len(x_t.len(), noise.len(), "ancestral noise")?;
        let (c_x, c_0) = self.ancestral_coefficients(t);
        let sigma = if t == 1 { 0.0 } else { self.sigma_tilde(t) };
        Ok(x_t
            .iter()
            .zip(x0_hat)
            .zip(noise)
            .map(|((x, x0), e)| c_x * x + c_0 * x0 + sigma * e)
            .collect())
    }

    /// Diffusion signal-to-noise ratio `abar_t / (1 - abar_t)`.
    pub fn dsnr(&self, t: usize) -> f64 {
        let ab = self.abar(t);
        ab / (1.0 - ab)
    }
}

pub(crate) fn q_sample_with(abar: f64, x0: &[f64], noise: &[f64]) -> Vec<f64> {
    let a = libm::sqrt(abar);
    let s = libm::sqrt(1.0 - abar);
    x0.iter().zip(noise).map(|(x, e)| a * x + s * e).collect()
}
