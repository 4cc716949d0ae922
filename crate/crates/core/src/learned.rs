//! Denoising-score-matching training of a small score network.
//!
//! The network sees `[x_t, abar_t]` and outputs the score directly. Training
//! minimizes `E |sqrt(1 - abar) s(x_t, t) + eps|^2`, the denoising objective
//! with target `-(x_t - sqrt(abar) x_0) / (1 - abar)` weighted by `1 - abar`.

use alloc::vec::Vec;
use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{check_len, Error, Result};
use crate::nn::{collect_grads, Adam, Mlp};
use crate::rng::normal_vec;
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScoreMlp {
    pub net: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainingConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 64,
            learning_rate: 2e-3,
            hidden: 64,
        }
    }
}

impl ScoreMlp {
    /// Two hidden layers of width `hidden`.
    pub fn new<R: Rng + ?Sized>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            net: Mlp::new(&[dim + 1, hidden, hidden, dim], rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.net.out_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.net.is_consistent() || self.net.in_dim() != self.net.out_dim() + 1 {
            return Err(Error::Parameter(
                "score network layer shapes are inconsistent".into(),
            ));
        }
        Ok(())
    }

    pub fn score(&self, x: &[f64], abar: f64) -> Result<Vec<f64>> {
        check_len(self.dim(), x.len(), "score network input")?;
        let mut input = x.to_vec();
        input.push(abar);
        Ok(self.net.forward(&input))
    }

    pub fn score_on_tape(&self, tape: &mut Tape, x: Var, abar: f64) -> Var {
        let params = self.net.constants(tape);
        let time = tape.constant(&[abar]);
        let input = tape.concat(&[x, time]);
        self.net.forward_on_tape(tape, &params, input, 1)
    }
}

/// Per-step training losses.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub losses: Vec<f64>,
}

impl TrainingLog {
    /// Mean loss over the first and last `window` steps.
    pub fn head_tail(&self, window: usize) -> (f64, f64) {
        let w = window.min(self.losses.len()).max(1);
        let head = self.losses[..w].iter().sum::<f64>() / w as f64;
        let tail = self.losses[self.losses.len() - w..].iter().sum::<f64>() / w as f64;
        (head, tail)
    }
}

pub fn train_score_mlp<R: Rng + ?Sized>(
    samples: &[Vec<f64>],
    schedule: &NoiseSchedule,
    config: &TrainingConfig,
    rng: &mut R,
) -> Result<(ScoreMlp, TrainingLog)> {
    let Some(first) = samples.first() else {
        return Err(Error::Parameter(
            "score training needs a non-empty dataset".into(),
        ));
    };
    let dim = first.len();
    for s in samples {
        check_len(dim, s.len(), "training sample")?;
    }
    if config.batch_size == 0 {
        return Err(Error::Parameter("batch size must be positive".into()));
    }
    let mut model = ScoreMlp::new(dim, config.hidden, rng);
    let mut opt = Adam::new(config.learning_rate);
    let mut log = TrainingLog::default();
    let b = config.batch_size;
    for step in 0..config.steps {
        let mut inputs = Vec::with_capacity(b * (dim + 1));
        let mut weights = Vec::with_capacity(b * dim);
        let mut eps_all = Vec::with_capacity(b * dim);
        for _ in 0..b {
            let x0 = &samples[rng.random_range(0..samples.len())];
            let t = rng.random_range(1..=schedule.steps());
            let ab = schedule.abar(t);
            let eps = normal_vec(rng, dim);
            let xt = crate::schedule::q_sample_with(ab, x0, &eps);
            inputs.extend_from_slice(&xt);
            inputs.push(ab);
            weights.extend(core::iter::repeat_n(libm::sqrt(1.0 - ab), dim));
            eps_all.extend_from_slice(&eps);
        }
        let mut tape = Tape::new();
        let params = model.net.leaves(&mut tape);
        let x = tape.constant_vec(inputs);
        let out = model.net.forward_on_tape(&mut tape, &params, x, b);
        let w = tape.constant_vec(weights);
        let scaled = tape.mul(out, w);
        let e = tape.constant_vec(eps_all);
        let resid = tape.add(scaled, e);
        let sq = tape.sum_sq(resid);
        let loss = tape.scale(sq, 1.0 / b as f64);
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::TrainingDivergence { step });
        }
        let grads = tape
            .backward(loss)
            .map_err(|_| Error::TrainingDivergence { step })?;
        opt.update_mlp(&mut model.net, &collect_grads(&grads, &params));
        log.losses.push(value);
    }
    Ok((model, log))
}
