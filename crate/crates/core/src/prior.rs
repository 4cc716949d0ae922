//! Closed-form score functions of diffused priors.
//!
//! Under the VP forward process a diagonal Gaussian mixture stays a mixture:
//! component `i` diffuses to `N(sqrt(abar) mu_i, abar var_i + (1 - abar))`.
//! Scores are exact; the Jacobian-vector product of the mixture score is
//! hand-derived so the gradient engine can backpropagate through it.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::autodiff::{DiagScale, Tape, Var, VectorFunction};
use crate::error::{check_len, Error, Result};
use crate::learned::ScoreMlp;
use crate::rng::normal_vec;
use crate::schedule::NoiseSchedule;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Gmm {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub vars: Vec<Vec<f64>>,
}

impl Gmm {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, vars: Vec<Vec<f64>>) -> Result<Self> {
        let g = Self {
            weights,
            means,
            vars,
        };
        g.validate()?;
        Ok(g)
    }

    /// Single diagonal Gaussian.
    pub fn gaussian(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![var])
    }

    pub fn standard(dim: usize) -> Self {
        Self::gaussian(vec![0.0; dim], vec![1.0; dim]).expect("unit gaussian")
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.vars.len() != k {
            return Err(Error::Parameter(
                "mixture needs matching weights/means/vars".into(),
            ));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Parameter(
                "mixture weights must be non-negative".into(),
            ));
        }
        let total: f64 = self.weights.iter().sum();
        if libm::fabs(total - 1.0) > 1e-9 {
            return Err(Error::Parameter(alloc::format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        let d = self.means[0].len();
        if d == 0 {
            return Err(Error::Parameter(
                "mixture dimension must be positive".into(),
            ));
        }
        for (m, v) in self.means.iter().zip(&self.vars) {
            check_len(d, m.len(), "mixture mean")?;
            check_len(d, v.len(), "mixture variance")?;
            if v.iter().any(|x| !(*x > 0.0)) {
                return Err(Error::Parameter(
                    "mixture variances must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    /// The mixture of `x_t` at noise level `abar`.
    pub fn diffused(&self, abar: f64) -> GmmDiffused {
        let a = libm::sqrt(abar);
        GmmDiffused {
            log_weights: self
                .weights
                .iter()
                .map(|w| {
                    if *w > 0.0 {
                        libm::log(*w)
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect(),
            means: self
                .means
                .iter()
                .map(|m| m.iter().map(|v| a * v).collect())
                .collect(),
            vars: self
                .vars
                .iter()
                .map(|v| v.iter().map(|s| abar * s + (1.0 - abar)).collect())
                .collect(),
        }
    }

    /// Overall mean and per-coordinate variance of the mixture.
    pub fn moments(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        let d = self.dim();
        let mut mean = vec![0.0; d];
        for (w, m) in self.weights.iter().zip(&self.means) {
            for (acc, v) in mean.iter_mut().zip(m) {
                *acc += w * v;
            }
        }
        let mut cov = vec![vec![0.0; d]; d];
        for ((w, m), v) in self.weights.iter().zip(&self.means).zip(&self.vars) {
            for a in 0..d {
                cov[a][a] += w * v[a];
                for b in 0..d {
                    cov[a][b] += w * (m[a] - mean[a]) * (m[b] - mean[b]);
                }
            }
        }
        (mean, cov)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut idx = self.components() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                idx = i;
                break;
            }
        }
        while self.weights[idx] == 0.0 && idx > 0 {
            idx -= 1;
        }
        let z = normal_vec(rng, self.dim());
        self.means[idx]
            .iter()
            .zip(&self.vars[idx])
            .zip(z)
            .map(|((m, v), e)| m + libm::sqrt(*v) * e)
            .collect()
    }
}

/// A mixture after forward diffusion to a fixed noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmDiffused {
    pub log_weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub vars: Vec<Vec<f64>>,
}

impl GmmDiffused {
    fn component_log_densities(&self, x: &[f64]) -> Vec<f64> {
        self.log_weights
            .iter()
            .zip(&self.means)
            .zip(&self.vars)
            .map(|((lw, m), v)| {
                let mut acc = *lw;
                for ((xi, mi), vi) in x.iter().zip(m).zip(v) {
                    acc -= 0.5 * ((xi - mi) * (xi - mi) / vi + libm::log(*vi) + LN_2PI);
                }
                acc
            })
            .collect()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        log_sum_exp(&self.component_log_densities(x))
    }

    /// Posterior component probabilities given `x`.
    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let lp = self.component_log_densities(x);
        let z = log_sum_exp(&lp);
        lp.iter().map(|l| libm::exp(l - z)).collect()
    }

    pub fn score(&self, x: &[f64]) -> Vec<f64> {
        let r = self.responsibilities(x);
        let mut s = vec![0.0; x.len()];
        for ((ri, m), v) in r.iter().zip(&self.means).zip(&self.vars) {
            if *ri == 0.0 {
                continue;
            }
            for (((acc, xi), mi), vi) in s.iter_mut().zip(x).zip(m).zip(v) {
                *acc -= ri * (xi - mi) / vi;
            }
        }
        s
    }

    /// `J(x)^T u` for the score Jacobian `J` (the Hessian of the log density).
    pub fn score_vjp(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let r = self.responsibilities(x);
        let s = self.score(x);
        let mut out = vec![0.0; x.len()];
        for ((ri, m), v) in r.iter().zip(&self.means).zip(&self.vars) {
            if *ri == 0.0 {
                continue;
            }
            let g: Vec<f64> = x
                .iter()
                .zip(m)
                .zip(v)
                .map(|((xi, mi), vi)| -(xi - mi) / vi)
                .collect();
            let gu: f64 = g.iter().zip(u).map(|(a, b)| a * b).sum();
            for b in 0..x.len() {
                out[b] += ri * (-u[b] / v[b] + (g[b] - s[b]) * gu);
            }
        }
        out
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + libm::log(v.iter().map(|x| libm::exp(x - m)).sum::<f64>())
}

struct GmmScoreFn(GmmDiffused);

impl VectorFunction for GmmScoreFn {
    fn name(&self) -> &'static str {
        "gmm_score"
    }
    fn in_len(&self) -> usize {
        self.0.means[0].len()
    }
    fn out_len(&self) -> usize {
        self.in_len()
    }
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.0.score(x)
    }
    fn vjp(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        self.0.score_vjp(x, g)
    }
}

/// Which channel score to use for diffused taps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ChannelScoreForm {
    /// Exact score of the diffused marginal `CN(0, abar var + 1 - abar)`.
    #[default]
    Exact,
    /// Time-independent `-h / var`.
    PriorVariance,
}

/// Per-tap score coefficients `c_l` such that `score_l = c_l h_l`.
///
/// Complex quantities use the complex-Gaussian convention: the returned value
/// is `-h / v`, i.e. half the gradient of the log density with respect to the
/// interleaved real parts.
pub fn channel_score_coefficients(tap_var: &[f64], abar: f64, form: ChannelScoreForm) -> Vec<f64> {
    tap_var
        .iter()
        .map(|v| match form {
            ChannelScoreForm::Exact => -1.0 / (abar * v + (1.0 - abar)),
            ChannelScoreForm::PriorVariance => -1.0 / v,
        })
        .collect()
}

/// Score of the diffused complex Gaussian channel prior at timestep `t`.
pub fn channel_score(
    tap_var: &[f64],
    schedule: &NoiseSchedule,
    h_t: &[f64],
    t: usize,
    form: ChannelScoreForm,
) -> Result<Vec<f64>> {
    check_len(2 * tap_var.len(), h_t.len(), "channel taps")?;
    if tap_var.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Parameter(
            "channel tap variances must be positive".into(),
        ));
    }
    let c = channel_score_coefficients(tap_var, schedule.abar(t), form);
    Ok(h_t
        .chunks(2)
        .zip(&c)
        .flat_map(|(h, c)| [c * h[0], c * h[1]])
        .collect())
}

/// A pluggable prior score `s(x_t, t)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum ScorePrior {
    Gaussian {
        mean: Vec<f64>,
        var: Vec<f64>,
    },
    Gmm(Gmm),
    ChannelGaussian {
        tap_var: Vec<f64>,
        #[cfg_attr(feature = "serde", serde(default))]
        form: ChannelScoreForm,
    },
    Learned(ScoreMlp),
}

impl ScorePrior {
    pub fn standard_gaussian(dim: usize) -> Self {
        ScorePrior::Gaussian {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ScorePrior::Gaussian { mean, var } => {
                Gmm::gaussian(mean.clone(), var.clone()).map(|_| ())
            }
            ScorePrior::Gmm(g) => g.validate(),
            ScorePrior::ChannelGaussian { tap_var, .. } => {
                if tap_var.is_empty() || tap_var.iter().any(|v| !(*v > 0.0)) {
                    Err(Error::Parameter(
                        "channel tap variances must be positive".into(),
                    ))
                } else {
                    Ok(())
                }
            }
            ScorePrior::Learned(n) => n.validate(),
        }
    }

    /// Real dimension of the state the score acts on.
    pub fn dim(&self) -> usize {
        match self {
            ScorePrior::Gaussian { mean, .. } => mean.len(),
            ScorePrior::Gmm(g) => g.dim(),
            ScorePrior::ChannelGaussian { tap_var, .. } => 2 * tap_var.len(),
            ScorePrior::Learned(n) => n.dim(),
        }
    }

    /// The mixture view of Gaussian-family priors.
    pub fn as_gmm(&self) -> Option<Gmm> {
        match self {
            ScorePrior::Gaussian { mean, var } => Gmm::gaussian(mean.clone(), var.clone()).ok(),
            ScorePrior::Gmm(g) => Some(g.clone()),
            _ => None,
        }
    }

    pub fn score(&self, schedule: &NoiseSchedule, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
        check_len(self.dim(), x_t.len(), "prior score input")?;
        let abar = schedule.abar(t);
        match self {
            ScorePrior::Gaussian { .. } | ScorePrior::Gmm(_) => Ok(self
                .as_gmm()
                .expect("gaussian family")
                .diffused(abar)
                .score(x_t)),
            ScorePrior::ChannelGaussian { tap_var, form } => {
                channel_score(tap_var, schedule, x_t, t, *form)
            }
            ScorePrior::Learned(n) => n.score(x_t, abar),
        }
    }

    /// Records the score on a tape so gradients flow through it.
    pub fn score_on_tape(&self, tape: &mut Tape, x_t: Var, abar: f64) -> Var {
        match self {
            ScorePrior::Gaussian { .. } | ScorePrior::Gmm(_) => {
                let d = self.as_gmm().expect("gaussian family").diffused(abar);
                tape.map(x_t, Rc::new(GmmScoreFn(d)))
            }
            ScorePrior::ChannelGaussian { tap_var, form } => {
                let c = channel_score_coefficients(tap_var, abar, *form);
                let diag = c.iter().flat_map(|v| [*v, *v]).collect();
                tape.linear(x_t, Rc::new(DiagScale(diag)))
            }
            ScorePrior::Learned(n) => n.score_on_tape(tape, x_t, abar),
        }
    }

    /// Exact draws from the undiffused prior.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        match self {
            ScorePrior::Gaussian { .. } | ScorePrior::Gmm(_) => {
                let g = self.as_gmm().expect("gaussian family");
                Ok((0..count).map(|_| g.sample(rng)).collect())
            }
            ScorePrior::ChannelGaussian { tap_var, .. } => Ok((0..count)
                .map(|_| {
                    tap_var
                        .iter()
                        .flat_map(|v| {
                            let s = libm::sqrt(v / 2.0);
                            let z = normal_vec(rng, 2);
                            [s * z[0], s * z[1]]
                        })
                        .collect()
                })
                .collect()),
            ScorePrior::Learned(_) => Err(Error::Unsupported("sampling from a learned prior")),
        }
    }
}

/// Explicit log density of the diffused channel prior (real-pair view).
pub fn channel_log_density(tap_var: &[f64], abar: f64, h: &[f64]) -> f64 {
    tap_var
        .iter()
        .zip(h.chunks(2))
        .map(|(v, p)| {
            let s = abar * v + (1.0 - abar);
            -(p[0] * p[0] + p[1] * p[1]) / s - libm::log(core::f64::consts::PI * s)
        })
        .sum()
}
