//! Guided reverse-diffusion decoders.
//!
//! All three decoders share one reverse chain. Each step records the prior
//! score, the Tweedie estimate `x0_hat`, and the measurement distance
//! `L_m = ||y - W_h(E(x0_hat))||^2` on a tape; the ancestral step is then
//! corrected by the gradient of the guidance loss with respect to `x_t`.

use alloc::rc::Rc;
use alloc::vec::Vec;
use rand::Rng;

use crate::autodiff::{LinearMap, Tape, Var};
use crate::channel::OfdmLink;
use crate::codec::Codec;
use crate::error::{check_len, Error, Result};
use crate::prior::{ChannelScoreForm, ScorePrior};
use crate::rng::{complex_normal_vec, normal_vec};
use crate::schedule::NoiseSchedule;

/// How the guidance strength scales with the loss and timestep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ZetaMode {
    /// `zeta_t = zeta`.
    #[default]
    Constant,
    /// `zeta_t = zeta / sqrt(L_m)`.
    StepNormalized,
    /// `zeta_t = zeta beta_t / (sqrt(alpha_t) (noise + 2 (1 - abar_t) gain))`.
    ///
    /// With `zeta = 1`, a linear codec and a unit Gaussian source this turns
    /// the guidance term into the exact likelihood score of `y` given `x_t`.
    Likelihood,
}

/// Which Jacobian of `x0_hat` the guidance gradient flows through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GradMode {
    #[default]
    FullBackprop,
    /// Treats `d x0_hat / d x_t` as `I / sqrt(abar_t)`.
    FrozenDenoiser,
}

/// Starting point of the high-fidelity decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum HifiInit {
    /// Noised deterministic reconstruction at `T_s`.
    #[default]
    Decoded,
    /// `x_{T_s} ~ N(0, I)`.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct GuidanceConfig {
    pub zeta: f64,
    pub gamma: f64,
    /// Channel-branch strength for blind decoding.
    pub zeta_h: f64,
    pub tau: f64,
    pub eta: f64,
    pub zeta_mode: ZetaMode,
    pub grad_mode: GradMode,
    /// Per-real-coordinate latent variance per unit source variance, used by
    /// the likelihood strength.
    pub signal_gain: f64,
    /// Per-step overrides of `zeta`, indexed by `t - 1`.
    pub zeta_schedule: Option<Vec<f64>>,
    /// Per-step overrides of `gamma`, indexed by `t - 1`.
    pub gamma_schedule: Option<Vec<f64>>,
    /// Overrides the computed start step of the high-fidelity decoder.
    pub start_timestep: Option<usize>,
    pub hifi_init: HifiInit,
    pub channel_score: ChannelScoreForm,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            zeta: 0.6,
            gamma: 0.3,
            zeta_h: 0.1,
            tau: 20.0,
            eta: 1.0,
            zeta_mode: ZetaMode::Constant,
            grad_mode: GradMode::FullBackprop,
            signal_gain: 0.5,
            zeta_schedule: None,
            gamma_schedule: None,
            start_timestep: None,
            hifi_init: HifiInit::Decoded,
            channel_score: ChannelScoreForm::Exact,
        }
    }
}

impl GuidanceConfig {
    /// Defaults of the high-fidelity decoder: `zeta = gamma = 0.3`.
    pub fn hifi() -> Self {
        Self {
            zeta: 0.3,
            gamma: 0.3,
            ..Self::default()
        }
    }

    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        let nonneg = |v: f64| v >= 0.0 && v.is_finite();
        if !nonneg(self.zeta) || !nonneg(self.gamma) || !nonneg(self.zeta_h) {
            return Err(Error::Parameter(
                "guidance strengths must be finite and non-negative".into(),
            ));
        }
        if !(self.tau > 0.0) || !(self.eta > 0.0) {
            return Err(Error::Parameter("tau and eta must be positive".into()));
        }
        if !(self.signal_gain >= 0.0) {
            return Err(Error::Parameter("signal gain must be non-negative".into()));
        }
        for s in [&self.zeta_schedule, &self.gamma_schedule]
            .into_iter()
            .flatten()
        {
            if s.len() != schedule.steps() {
                return Err(Error::Parameter(alloc::format!(
                    "per-step schedule has {} entries, expected {}",
                    s.len(),
                    schedule.steps()
                )));
            }
            if !s.iter().all(|v| nonneg(*v)) {
                return Err(Error::Parameter(
                    "per-step strengths must be non-negative".into(),
                ));
            }
        }
        if let Some(ts) = self.start_timestep {
            if ts == 0 || ts > schedule.steps() {
                return Err(Error::Parameter("start timestep out of range".into()));
            }
        }
        Ok(())
    }

    fn base_zeta(&self, t: usize) -> f64 {
        self.zeta_schedule.as_ref().map_or(self.zeta, |s| s[t - 1])
    }

    fn base_gamma(&self, t: usize) -> f64 {
        self.gamma_schedule
            .as_ref()
            .map_or(self.gamma, |s| s[t - 1])
    }

    fn strength(
        &self,
        base: f64,
        t: usize,
        loss: f64,
        schedule: &NoiseSchedule,
        noise: f64,
    ) -> f64 {
        match self.zeta_mode {
            ZetaMode::Constant => base,
            ZetaMode::StepNormalized => {
                if loss > 0.0 {
                    base / libm::sqrt(loss)
                } else {
                    0.0
                }
            }
            ZetaMode::Likelihood => {
                let denom = libm::sqrt(schedule.alpha(t))
                    * (noise + 2.0 * (1.0 - schedule.abar(t)) * self.signal_gain);
                if denom > 0.0 {
                    base * schedule.beta(t) / denom
                } else {
                    0.0
                }
            }
        }
    }
}

/// One reverse step of a decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub step: usize,
    pub t: usize,
    pub l_m: f64,
    pub l_c: f64,
    /// Channel Tweedie estimate (blind decoding only).
    pub h_hat: Option<Vec<f64>>,
    /// `||h_hat - h*||^2`, filled in by [`SamplerTrace::fill_channel_error`].
    pub d_h: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SamplerTrace {
    pub steps: Vec<TraceStep>,
    /// `L_m` evaluated at the returned `x0`.
    pub final_l_m: f64,
    pub x0: Vec<f64>,
    pub h0: Option<Vec<f64>>,
}

impl SamplerTrace {
    pub fn executed_steps(&self) -> usize {
        self.steps.len()
    }

    /// Computes `d_h` for every step that carries a channel estimate.
    pub fn fill_channel_error(&mut self, truth: &[f64]) {
        for s in &mut self.steps {
            s.d_h = s.h_hat.as_ref().map(|h| sq_dist(h, truth));
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `T_s` from matching the target signal-to-distortion ratio
/// `(1 + 1/noise)^{rho tau / 2}` against the diffusion SNR.
pub fn compute_start_timestep(
    schedule: &NoiseSchedule,
    noise_power: f64,
    rho: f64,
    tau: f64,
    eta: f64,
) -> usize {
    let target = if noise_power > 0.0 {
        libm::pow(1.0 + 1.0 / noise_power, rho / 2.0 * tau)
    } else {
        f64::INFINITY
    };
    let mut best = 1;
    let mut best_gap = f64::INFINITY;
    for t in 1..=schedule.steps() {
        let gap = libm::fabs(target - schedule.dsnr(t));
        if gap < best_gap {
            best_gap = gap;
            best = t;
        }
    }
    let scaled = libm::round(eta * best as f64);
    if scaled.is_nan() || scaled < 1.0 {
        1
    } else if scaled >= schedule.steps() as f64 {
        schedule.steps()
    } else {
        scaled as usize
    }
}

/// Everything a decoder needs besides the received signal.
#[derive(Clone, Copy)]
pub struct DecodeContext<'a> {
    pub codec: &'a Codec,
    pub link: &'a OfdmLink,
    pub prior: &'a ScorePrior,
    pub schedule: &'a NoiseSchedule,
}

impl DecodeContext<'_> {
    fn check(&self, y: &[f64], guidance: &GuidanceConfig) -> Result<()> {
        self.codec.validate()?;
        self.link.validate()?;
        self.prior.validate()?;
        guidance.validate(self.schedule)?;
        check_len(self.codec.m, self.prior.dim(), "prior dimension")?;
        check_len(
            2 * self.link.received_len(self.codec.k),
            y.len(),
            "received signal",
        )
    }

    /// Records the source Tweedie estimate `x0_hat(x_t)`.
    pub fn tweedie_on_tape(&self, tape: &mut Tape, x_t: Var, t: usize) -> Var {
        let (c_t, c_s) = self.schedule.tweedie_coefficients(t);
        let score = self.prior.score_on_tape(tape, x_t, self.schedule.abar(t));
        tape.lincomb(c_t, x_t, c_s, score)
    }

    /// Records the guidance loss `L_m(x_t) = ||y - W_h(E(x0_hat(x_t)))||^2`.
    pub fn guidance_loss_on_tape(
        &self,
        tape: &mut Tape,
        y: Var,
        x_t: Var,
        t: usize,
        h: Var,
    ) -> Var {
        let x0 = self.tweedie_on_tape(tape, x_t, t);
        self.measurement(tape, y, x0, h).0
    }

    /// Records `||y - W_h(E(x0))||^2`.
    fn measurement(&self, tape: &mut Tape, y: Var, x0: Var, h: Var) -> (Var, Var) {
        let z = self.codec.encode_on_tape(tape, x0);
        let w = self.link.transmit_on_tape(tape, z, h);
        (tape.dist_sq(y, w), w)
    }

    /// Records the confirming loss `L_c(x_t) = ||x_d - D(W_h^-1(W_h(E(x0_hat(x_t)))))||^2`.
    pub fn confirming_loss_on_tape(
        &self,
        tape: &mut Tape,
        x_t: Var,
        t: usize,
        h: &[f64],
        x_d: &[f64],
    ) -> Result<Var> {
        let confirm = Confirm {
            x_d: x_d.to_vec(),
            inverse: self.link.receiver_map(h, self.codec.k)?,
        };
        let x0 = self.tweedie_on_tape(tape, x_t, t);
        let hv = tape.constant(h);
        let z = self.codec.encode_on_tape(tape, x0);
        let w = self.link.transmit_on_tape(tape, z, hv);
        Ok(self.confirming(tape, w, &confirm))
    }

    fn confirming(&self, tape: &mut Tape, w: Var, c: &Confirm) -> Var {
        let z = tape.linear(w, c.inverse.clone());
        let xr = self.codec.decode_on_tape(tape, z);
        let xd = tape.constant(&c.x_d);
        tape.dist_sq(xd, xr)
    }

    /// `||y - W_h(E(x0))||^2` without recording gradients.
    pub fn measurement_distance(&self, y: &[f64], x0: &[f64], h: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let yv = tape.constant(y);
        let xv = tape.constant(x0);
        let hv = tape.constant(h);
        let (l, _) = self.measurement(&mut tape, yv, xv, hv);
        tape.check()?;
        Ok(tape.scalar(l))
    }
}

enum ChannelBranch {
    Known(Vec<f64>),
    Sampled { pdp: Vec<f64>, h: Vec<f64> },
}

struct Confirm {
    x_d: Vec<f64>,
    inverse: Rc<dyn LinearMap>,
}

fn reverse_chain<R: Rng + ?Sized>(
    ctx: &DecodeContext,
    y: &[f64],
    guidance: &GuidanceConfig,
    start: usize,
    mut x: Vec<f64>,
    mut channel: ChannelBranch,
    confirm: Option<Confirm>,
    rng: &mut R,
) -> Result<SamplerTrace> {
    let schedule = ctx.schedule;
    let noise = ctx.link.noise_power;
    let mut trace = SamplerTrace::default();
    let channel_prior = match &channel {
        ChannelBranch::Sampled { pdp, .. } => Some(ScorePrior::ChannelGaussian {
            tap_var: pdp.clone(),
            form: guidance.channel_score,
        }),
        ChannelBranch::Known(_) => None,
    };
    for (step, t) in (1..=start).rev().enumerate() {
        let abar = schedule.abar(t);
        let (c_t, c_s) = schedule.tweedie_coefficients(t);
        let mut tape = Tape::new();
        let yv = tape.constant(y);
        let xt = tape.input(&x);
        let x0_full = ctx.tweedie_on_tape(&mut tape, xt, t);
        let x0_hat = tape.value(x0_full).to_vec();
        let x0 = match guidance.grad_mode {
            GradMode::FullBackprop => x0_full,
            GradMode::FrozenDenoiser => tape.input(&x0_hat),
        };
        let (ht, h0) = match (&channel, &channel_prior) {
            (ChannelBranch::Known(h), _) => (None, tape.constant(h)),
            (ChannelBranch::Sampled { h, .. }, Some(prior)) => {
                let ht = tape.input(h);
                let s = prior.score_on_tape(&mut tape, ht, abar);
                (Some(ht), tape.lincomb(c_t, ht, c_s, s))
            }
            (ChannelBranch::Sampled { .. }, None) => unreachable!("channel prior built above"),
        };
        let (l_m, w) = ctx.measurement(&mut tape, yv, x0, h0);
        let l_c = confirm.as_ref().map(|c| ctx.confirming(&mut tape, w, c));
        tape.check().map_err(|_| Error::SamplerDivergence { t })?;
        let l_m_value = tape.scalar(l_m);
        let l_c_value = l_c.map_or(0.0, |v| tape.scalar(v));
        let zeta = guidance.strength(guidance.base_zeta(t), t, l_m_value, schedule, noise);
        let gamma = if confirm.is_some() {
            guidance.strength(guidance.base_gamma(t), t, l_c_value, schedule, noise)
        } else {
            0.0
        };
        let grads = tape
            .backward(l_m)
            .map_err(|_| Error::SamplerDivergence { t })?;
        let wrt_x = |g: &crate::autodiff::Gradients| match guidance.grad_mode {
            GradMode::FullBackprop => g.wrt(xt),
            GradMode::FrozenDenoiser => g.wrt(x0),
        };
        let mut grad_x: Vec<f64> = wrt_x(&grads).into_iter().map(|g| zeta * g).collect();
        if let Some(lc) = l_c {
            let gc = tape
                .backward(lc)
                .map_err(|_| Error::SamplerDivergence { t })?;
            for (acc, g) in grad_x.iter_mut().zip(wrt_x(&gc)) {
                *acc += gamma * g;
            }
        }
        if guidance.grad_mode == GradMode::FrozenDenoiser {
            let r = 1.0 / libm::sqrt(abar);
            grad_x.iter_mut().for_each(|g| *g *= r);
        }

        let eps = normal_vec(rng, x.len());
        let mut next = schedule.ancestral_step(&x, t, &x0_hat, &eps)?;
        for (n, g) in next.iter_mut().zip(&grad_x) {
            *n -= g;
        }

        let mut h_hat = None;
        if let (ChannelBranch::Sampled { h, .. }, Some(ht)) = (&mut channel, ht) {
            let h0_val = tape.value(h0).to_vec();
            let zeta_h = guidance.strength(guidance.zeta_h, t, l_m_value, schedule, noise);
            let gh = grads.wrt(ht);
            let eps_h = complex_normal_vec(rng, h.len() / 2, 1.0);
            let mut h_next = schedule.ancestral_step(h, t, &h0_val, &eps_h)?;
            for (n, g) in h_next.iter_mut().zip(&gh) {
                *n -= zeta_h * g;
            }
            if h_next.iter().any(|v| !v.is_finite()) {
                return Err(Error::SamplerDivergence { t });
            }
            *h = h_next;
            h_hat = Some(h0_val);
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::SamplerDivergence { t });
        }
        x = next;
        trace.steps.push(TraceStep {
            step,
            t,
            l_m: l_m_value,
            l_c: l_c_value,
            h_hat,
            d_h: None,
        });
    }
    let h_final = match channel {
        ChannelBranch::Known(h) => {
            trace.final_l_m = ctx.measurement_distance(y, &x, &h)?;
            None
        }
        ChannelBranch::Sampled { h, .. } => {
            trace.final_l_m = ctx.measurement_distance(y, &x, &h)?;
            Some(h)
        }
    };
    trace.x0 = x;
    trace.h0 = h_final;
    Ok(trace)
}

/// Posterior sampling from pure noise with a known channel estimate.
pub fn standard_decode<R: Rng + ?Sized>(
    y: &[f64],
    ctx: &DecodeContext,
    h_hat: &[f64],
    guidance: &GuidanceConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, SamplerTrace)> {
    ctx.check(y, guidance)?;
    check_len(2 * ctx.link.taps(), h_hat.len(), "channel estimate")?;
    let x = normal_vec(rng, ctx.codec.m);
    let trace = reverse_chain(
        ctx,
        y,
        guidance,
        ctx.schedule.steps(),
        x,
        ChannelBranch::Known(h_hat.to_vec()),
        None,
        rng,
    )?;
    Ok((trace.x0.clone(), trace))
}

/// Posterior sampling started from the noised deterministic reconstruction
/// with a source-space confirming term.
pub fn hifi_decode<R: Rng + ?Sized>(
    y: &[f64],
    ctx: &DecodeContext,
    h_hat: &[f64],
    guidance: &GuidanceConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, SamplerTrace)> {
    ctx.check(y, guidance)?;
    check_len(2 * ctx.link.taps(), h_hat.len(), "channel estimate")?;
    let x_d = ctx.codec.decode_received(ctx.link, y, h_hat)?;
    let start = guidance.start_timestep.unwrap_or_else(|| {
        compute_start_timestep(
            ctx.schedule,
            ctx.link.noise_power,
            ctx.codec.ratio(),
            guidance.tau,
            guidance.eta,
        )
    });
    let x = match guidance.hifi_init {
        HifiInit::Gaussian => normal_vec(rng, ctx.codec.m),
        HifiInit::Decoded => {
            let eps = normal_vec(rng, ctx.codec.m);
            ctx.schedule.q_sample(&x_d, start, &eps)?
        }
    };
    let inverse = ctx.link.receiver_map(h_hat, ctx.codec.k)?;
    let trace = reverse_chain(
        ctx,
        y,
        guidance,
        start,
        x,
        ChannelBranch::Known(h_hat.to_vec()),
        Some(Confirm { x_d, inverse }),
        rng,
    )?;
    Ok((trace.x0.clone(), trace))
}

/// Joint source and channel sampling without pilots; `pdp` is the channel
/// prior.
pub fn blind_decode<R: Rng + ?Sized>(
    y: &[f64],
    ctx: &DecodeContext,
    pdp: &[f64],
    guidance: &GuidanceConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>, SamplerTrace)> {
    ctx.check(y, guidance)?;
    check_len(ctx.link.taps(), pdp.len(), "power-delay profile")?;
    if pdp.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::Parameter(
            "blind decoding needs positive tap variances".into(),
        ));
    }
    let x = normal_vec(rng, ctx.codec.m);
    let h = complex_normal_vec(rng, pdp.len(), 1.0);
    let trace = reverse_chain(
        ctx,
        y,
        guidance,
        ctx.schedule.steps(),
        x,
        ChannelBranch::Sampled {
            pdp: pdp.to_vec(),
            h,
        },
        None,
        rng,
    )?;
    let h0 = trace.h0.clone().expect("blind chain returns taps");
    Ok((trace.x0.clone(), h0, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{noise_power_from_csnr, sample_channel, sample_pdp};
    use crate::codec::Normalization;
    use crate::prior::Gmm;
    use crate::rng::seeded;
    use alloc::vec;
    use proptest::prelude::*;

    fn brute_force_start(noise: f64, rho: f64, tau: f64, eta: f64) -> usize {
        // independent recomputation of abar from the raw betas
        let steps = 1000;
        let mut abar = 1.0;
        let mut gaps = Vec::with_capacity(steps);
        for t in 1..=steps {
            let beta = 1e-4 + (0.02 - 1e-4) * (t - 1) as f64 / (steps - 1) as f64;
            abar *= 1.0 - beta;
            let target = (1.0 + 1.0 / noise).powf(rho * tau / 2.0);
            gaps.push(((target - abar / (1.0 - abar)).abs(), t));
        }
        let best = gaps
            .iter()
            .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)))
            .unwrap()
            .1;
        ((eta * best as f64).round() as usize).clamp(1, steps)
    }

    #[test]
    fn start_timestep_limits() {
        let s = NoiseSchedule::default_linear();
        assert_eq!(compute_start_timestep(&s, 0.0, 0.5, 20.0, 1.0), 1);
        assert_eq!(compute_start_timestep(&s, 1e-300, 0.5, 20.0, 3.4), 3);
        assert_eq!(compute_start_timestep(&s, 1e-300, 0.5, 20.0, 0.2), 1);
        assert_eq!(compute_start_timestep(&s, 100.0, 0.5, 20.0, 50.0), 1000);
        let ts = compute_start_timestep(&s, 0.1, 1.0 / 48.0, 20.0, 1.0);
        assert_eq!(ts, brute_force_start(0.1, 1.0 / 48.0, 20.0, 1.0));
    }

    proptest! {
        #[test]
        fn start_timestep_matches_scan(
            log_noise in -3.0f64..2.0,
            rho in 0.01f64..1.0,
            tau in 0.5f64..40.0,
            eta in 0.05f64..2.0,
        ) {
            let s = NoiseSchedule::default_linear();
            let noise = 10f64.powf(log_noise);
            prop_assert_eq!(
                compute_start_timestep(&s, noise, rho, tau, eta),
                brute_force_start(noise, rho, tau, eta)
            );
        }
    }

    struct Scene {
        codec: Codec,
        link: OfdmLink,
        prior: ScorePrior,
        schedule: NoiseSchedule,
    }

    impl Scene {
        fn ctx(&self) -> DecodeContext<'_> {
            DecodeContext {
                codec: &self.codec,
                link: &self.link,
                prior: &self.prior,
                schedule: &self.schedule,
            }
        }
    }

    fn fading_scene() -> (Scene, Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = seeded(40);
        let pdp = sample_pdp(3, 2.0).unwrap();
        let mut link = OfdmLink::ofdm(4, 2, pdp.clone(), noise_power_from_csnr(10.0));
        link.interleaver_seed = 1;
        let prior = ScorePrior::Gmm(
            Gmm::new(
                vec![0.4, 0.6],
                vec![vec![1.0; 6], vec![-1.0; 6]],
                vec![vec![0.3; 6], vec![0.2; 6]],
            )
            .unwrap(),
        );
        let codec = Codec::linear_orthonormal(6, 4, Normalization::PerFrame, &mut rng).unwrap();
        let x = prior.sample(1, &mut rng).unwrap().remove(0);
        let h = sample_channel(&pdp, &mut rng);
        let z = codec.encode(&x).unwrap().z;
        let n = link.draw_noise(codec.k, &mut rng);
        let y = link.transmit(&z, &h, Some(&n)).unwrap();
        let scene = Scene {
            codec,
            link,
            prior,
            schedule: NoiseSchedule::linear(60, 1e-3, 0.2).unwrap(),
        };
        (scene, x, h, y)
    }

    #[test]
    fn decoders_are_deterministic() {
        let (scene, _, h, y) = fading_scene();
        let g = GuidanceConfig::default();
        let a = standard_decode(&y, &scene.ctx(), &h, &g, &mut seeded(3)).unwrap();
        let b = standard_decode(&y, &scene.ctx(), &h, &g, &mut seeded(3)).unwrap();
        assert_eq!(a, b);
        let g = GuidanceConfig::hifi();
        let a = hifi_decode(&y, &scene.ctx(), &h, &g, &mut seeded(3)).unwrap();
        let b = hifi_decode(&y, &scene.ctx(), &h, &g, &mut seeded(3)).unwrap();
        assert_eq!(a, b);
        let pdp = scene.link.pdp.clone();
        let a = blind_decode(&y, &scene.ctx(), &pdp, &g, &mut seeded(3)).unwrap();
        let b = blind_decode(&y, &scene.ctx(), &pdp, &g, &mut seeded(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.2.executed_steps(), 60);
        assert!(a.2.steps.iter().all(|s| s.l_m >= 0.0 && s.l_c >= 0.0));
    }

    #[test]
    fn hifi_reduces_to_standard() {
        let (scene, _, h, y) = fading_scene();
        let std_cfg = GuidanceConfig {
            zeta: 0.4,
            ..GuidanceConfig::default()
        };
        let hifi_cfg = GuidanceConfig {
            gamma: 0.0,
            start_timestep: Some(scene.schedule.steps()),
            hifi_init: HifiInit::Gaussian,
            ..std_cfg.clone()
        };
        let (xa, ta) = standard_decode(&y, &scene.ctx(), &h, &std_cfg, &mut seeded(9)).unwrap();
        let (xb, tb) = hifi_decode(&y, &scene.ctx(), &h, &hifi_cfg, &mut seeded(9)).unwrap();
        assert_eq!(xa, xb);
        let lm_a: Vec<f64> = ta.steps.iter().map(|s| s.l_m).collect();
        let lm_b: Vec<f64> = tb.steps.iter().map(|s| s.l_m).collect();
        assert_eq!(lm_a, lm_b);
    }

    #[test]
    fn frozen_channel_branch_reduces_to_standard() {
        let (scene, _, h, y) = fading_scene();
        let g = GuidanceConfig::default();
        let ctx = scene.ctx();
        let (xa, _) = standard_decode(&y, &ctx, &h, &g, &mut seeded(4)).unwrap();
        let mut rng = seeded(4);
        let x = normal_vec(&mut rng, ctx.codec.m);
        let tb = reverse_chain(
            &ctx,
            &y,
            &g,
            ctx.schedule.steps(),
            x,
            ChannelBranch::Known(h.clone()),
            None,
            &mut rng,
        )
        .unwrap();
        assert_eq!(xa, tb.x0);
    }

    #[test]
    fn frozen_denoiser_runs() {
        let (scene, _, h, y) = fading_scene();
        let g = GuidanceConfig {
            grad_mode: GradMode::FrozenDenoiser,
            zeta_mode: ZetaMode::StepNormalized,
            ..GuidanceConfig::default()
        };
        let (x, t) = standard_decode(&y, &scene.ctx(), &h, &g, &mut seeded(5)).unwrap();
        assert!(x.iter().all(|v| v.is_finite()));
        assert!(t.final_l_m.is_finite());
    }

    #[test]
    fn divergence_carries_step() {
        let (scene, _, h, y) = fading_scene();
        let g = GuidanceConfig {
            zeta: 1e200,
            ..GuidanceConfig::default()
        };
        let r = standard_decode(&y, &scene.ctx(), &h, &g, &mut seeded(5));
        assert!(matches!(r, Err(Error::SamplerDivergence { .. })), "{r:?}");
    }

    #[test]
    fn invalid_guidance_rejected() {
        let (scene, _, h, y) = fading_scene();
        for g in [
            GuidanceConfig {
                zeta: -1.0,
                ..GuidanceConfig::default()
            },
            GuidanceConfig {
                tau: 0.0,
                ..GuidanceConfig::default()
            },
            GuidanceConfig {
                eta: 0.0,
                ..GuidanceConfig::default()
            },
            GuidanceConfig {
                zeta_schedule: Some(vec![0.1; 3]),
                ..GuidanceConfig::default()
            },
        ] {
            assert!(standard_decode(&y, &scene.ctx(), &h, &g, &mut seeded(1)).is_err());
        }
    }

    #[test]
    fn guidance_off_matches_prior_moments() {
        let prior = ScorePrior::Gmm(
            Gmm::new(
                vec![0.3, 0.7],
                vec![vec![2.0, -1.0], vec![-1.0, 0.5]],
                vec![vec![0.3, 0.2], vec![0.4, 0.5]],
            )
            .unwrap(),
        );
        let scene = Scene {
            codec: Codec::linear_orthonormal(2, 1, Normalization::PerFrame, &mut seeded(1))
                .unwrap(),
            link: OfdmLink::awgn(0.1),
            prior,
            schedule: NoiseSchedule::default_linear(),
        };
        let g = GuidanceConfig {
            zeta: 0.0,
            ..GuidanceConfig::default()
        };
        let y = [0.3, -0.2];
        let mut rng = seeded(77);
        let n = 1000;
        let mut mean = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let (x, _) = standard_decode(&y, &scene.ctx(), &[1.0, 0.0], &g, &mut rng).unwrap();
            for i in 0..2 {
                mean[i] += x[i] / n as f64;
                sq[i] += x[i] * x[i] / n as f64;
            }
        }
        let (pm, pc) = scene.prior.as_gmm().unwrap().moments();
        for i in 0..2 {
            let var = sq[i] - mean[i] * mean[i];
            let se = (pc[i][i] / n as f64).sqrt();
            assert!(
                (mean[i] - pm[i]).abs() < 4.0 * se,
                "mean {i}: {} vs {}",
                mean[i],
                pm[i]
            );
            assert!(
                (var / pc[i][i] - 1.0).abs() < 0.15,
                "var {i}: {var} vs {}",
                pc[i][i]
            );
        }
    }

    #[test]
    fn hifi_preserves_exact_reconstruction() {
        let mut rng = seeded(12);
        let prior = ScorePrior::standard_gaussian(4);
        let scene = Scene {
            codec: Codec::linear_orthonormal(4, 2, Normalization::PerFrame, &mut rng).unwrap(),
            link: OfdmLink::awgn(1e-12),
            prior,
            schedule: NoiseSchedule::default_linear(),
        };
        let x = vec![0.8, -1.1, 0.4, 1.5];
        let z = scene.codec.encode(&x).unwrap().z;
        let y = scene.link.transmit(&z, &[1.0, 0.0], None).unwrap();
        let g = GuidanceConfig::hifi();
        let (x0, trace) = hifi_decode(&y, &scene.ctx(), &[1.0, 0.0], &g, &mut rng).unwrap();
        assert_eq!(trace.executed_steps(), 1);
        // per-frame normalization loses the scale; compare directions
        let dot: f64 = x0.iter().zip(&x).map(|(a, b)| a * b).sum();
        let na: f64 = x0.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(1.0 - dot / (na * nb) < 1e-4);
    }

    #[test]
    fn blind_channel_branch_unguided_matches_prior() {
        let pdp = vec![0.7, 0.3];
        let scene = Scene {
            codec: Codec::linear_orthonormal(2, 2, Normalization::PerFrame, &mut seeded(2))
                .unwrap(),
            link: OfdmLink {
                n_pilot: 0,
                ..OfdmLink::ofdm(2, 1, pdp.clone(), 0.1)
            },
            prior: ScorePrior::standard_gaussian(2),
            schedule: NoiseSchedule::linear(200, 1e-4, 0.08).unwrap(),
        };
        let g = GuidanceConfig {
            zeta: 0.0,
            zeta_h: 0.0,
            ..GuidanceConfig::default()
        };
        let y = vec![0.1; 2 * scene.link.received_len(2)];
        let mut rng = seeded(31);
        let n = 1000;
        let mut p = [0.0; 2];
        for _ in 0..n {
            let (_, h, _) = blind_decode(&y, &scene.ctx(), &pdp, &g, &mut rng).unwrap();
            for l in 0..2 {
                p[l] += (h[2 * l] * h[2 * l] + h[2 * l + 1] * h[2 * l + 1]) / n as f64;
            }
        }
        for l in 0..2 {
            assert!(
                (p[l] / pdp[l] - 1.0).abs() < 0.1,
                "tap {l}: {} vs {}",
                p[l],
                pdp[l]
            );
        }
    }

    #[test]
    fn channel_error_filled() {
        let (scene, _, h, y) = fading_scene();
        let g = GuidanceConfig::default();
        let pdp = scene.link.pdp.clone();
        let (_, h0, mut trace) = blind_decode(&y, &scene.ctx(), &pdp, &g, &mut seeded(8)).unwrap();
        trace.fill_channel_error(&h);
        let last = trace.steps.last().unwrap();
        assert!(last.d_h.unwrap() >= 0.0);
        // at t = 1 the Tweedie estimate is what the final step returns
        assert_eq!(last.h_hat.as_ref().unwrap().len(), h0.len());
    }
}
