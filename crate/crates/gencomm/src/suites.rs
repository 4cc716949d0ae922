//! Verification suites behind the `check-grad` and `oracle` subcommands.

use gencomm_core::autodiff::finite_diff_check;
use gencomm_core::channel::{noise_power_from_csnr, sample_channel, sample_pdp, OfdmLink};
use gencomm_core::codec::{Codec, Normalization};
use gencomm_core::learned::ScoreMlp;
use gencomm_core::metrics::{analytic_posterior, coordinate_variance};
use gencomm_core::prior::{Gmm, ScorePrior};
use gencomm_core::rng::{normal_vec, seeded, stream, Substream};
use gencomm_core::sampler::{standard_decode, DecodeContext, GuidanceConfig, ZetaMode};
use gencomm_core::schedule::NoiseSchedule;
use rand::Rng;
use rayon::prelude::*;

use crate::error::Result;

pub const GRAD_TOLERANCE: f64 = 1e-3;
pub const FD_STEP: f64 = 1e-5;
pub const FD_COORDS: usize = 20;

/// Which loss a gradient case differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// `L_m` with respect to `(x_t, h)`.
    Measurement,
    /// `L_c` with respect to `x_t`.
    Confirming,
}

/// One row of the gradient table.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCase {
    pub name: &'static str,
    pub states: usize,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because their perturbation crossed a clip edge.
    pub boundary: usize,
}

impl GradCase {
    pub fn pass(&self) -> bool {
        self.max_rel_error < GRAD_TOLERANCE && self.checked > 0
    }
}

/// A fixed guidance-loss setup whose gradient is checked at random states.
pub struct GradSetup {
    pub name: &'static str,
    pub prior: ScorePrior,
    pub codec: Codec,
    pub link: OfdmLink,
    pub loss: LossKind,
}

fn two_component(m: usize) -> ScorePrior {
    let mu: Vec<f64> = (0..m)
        .map(|i| if i % 2 == 0 { 1.0 } else { -0.5 })
        .collect();
    let neg = mu.iter().map(|v| -v).collect();
    ScorePrior::Gmm(
        Gmm::new(
            vec![0.4, 0.6],
            vec![mu, neg],
            vec![vec![0.2; m], vec![0.5; m]],
        )
        .expect("valid mixture"),
    )
}

/// The setups covered by `check-grad`.
pub fn grad_setups() -> Result<Vec<GradSetup>> {
    let m = 8;
    let k = 4;
    let mut rng = seeded(41);
    let linear = Codec::linear_orthonormal(m, k, Normalization::PerFrame, &mut rng)?;
    let mlp = Codec::mlp(m, k, 16, Normalization::PerFrame, &mut rng)?;
    let noise = noise_power_from_csnr(10.0);
    let fading = OfdmLink::ofdm(8, 7, sample_pdp(8, 4.0)?, noise);
    let clipped = OfdmLink {
        clip_ratio: Some(1.1),
        ..fading.clone()
    };
    Ok(vec![
        GradSetup {
            name: "l_m gaussian linear awgn",
            prior: ScorePrior::standard_gaussian(m),
            codec: linear.clone(),
            link: OfdmLink::awgn(noise),
            loss: LossKind::Measurement,
        },
        GradSetup {
            name: "l_m gmm linear fading8",
            prior: two_component(m),
            codec: linear.clone(),
            link: fading.clone(),
            loss: LossKind::Measurement,
        },
        GradSetup {
            name: "l_m gmm mlp fading8 clip",
            prior: two_component(m),
            codec: mlp.clone(),
            link: clipped,
            loss: LossKind::Measurement,
        },
        GradSetup {
            name: "l_m learned-score linear fading8",
            prior: ScorePrior::Learned(ScoreMlp::new(m, 16, &mut rng)),
            codec: linear.clone(),
            link: fading.clone(),
            loss: LossKind::Measurement,
        },
        GradSetup {
            name: "l_c gmm mlp fading8",
            prior: two_component(m),
            codec: mlp,
            link: fading,
            loss: LossKind::Confirming,
        },
    ])
}

/// Finite-difference check of one setup over `states` random
/// `(x_t, t, h, y)` draws.
pub fn check_setup(setup: &GradSetup, states: usize, seed: u64) -> Result<GradCase> {
    let schedule = NoiseSchedule::default_linear();
    let ctx = DecodeContext {
        codec: &setup.codec,
        link: &setup.link,
        prior: &setup.prior,
        schedule: &schedule,
    };
    let (m, k) = (setup.codec.m, setup.codec.k);
    let pdp = setup.link.pdp.clone();
    let rows = (0..states as u64)
        .into_par_iter()
        .map(|i| -> Result<(f64, usize, usize)> {
            let mut rng = stream(seed, i, Substream::Reference);
            let t = rng.random_range(1..=schedule.steps());
            let x_t = normal_vec(&mut rng, m);
            let h = sample_channel(&pdp, &mut rng);
            let x = normal_vec(&mut rng, m);
            let z = setup.codec.encode(&x)?.z;
            let n = setup.link.draw_noise(k, &mut rng);
            let y = setup.link.transmit(&z, &h, Some(&n))?;
            let report = match setup.loss {
                LossKind::Measurement => finite_diff_check(
                    |tape, v| {
                        let yv = tape.constant(&y);
                        ctx.guidance_loss_on_tape(tape, yv, v[0], t, v[1])
                    },
                    &[&x_t, &h],
                    FD_STEP,
                    FD_COORDS,
                    &mut rng,
                )?,
                LossKind::Confirming => {
                    let x_d = setup.codec.decode_received(&setup.link, &y, &h)?;
                    finite_diff_check(
                        |tape, v| {
                            ctx.confirming_loss_on_tape(tape, v[0], t, &h, &x_d)
                                .expect("receiver map builds for a validated link")
                        },
                        &[&x_t],
                        FD_STEP,
                        FD_COORDS,
                        &mut rng,
                    )?
                }
            };
            Ok((report.max_rel_error, report.checked, report.boundary.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GradCase {
        name: setup.name,
        states,
        max_rel_error: rows.iter().map(|r| r.0).fold(0.0, f64::max),
        checked: rows.iter().map(|r| r.1).sum(),
        boundary: rows.iter().map(|r| r.2).sum(),
    })
}

pub fn check_grad(states: usize, seed: u64) -> Result<Vec<GradCase>> {
    grad_setups()?
        .iter()
        .map(|s| check_setup(s, states, seed))
        .collect()
}

/// Agreement of decoded samples with the closed-form posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub samples: usize,
    pub posterior_mean: Vec<f64>,
    pub sample_mean: Vec<f64>,
    pub posterior_var: Vec<f64>,
    pub sample_var: Vec<f64>,
    /// max over coordinates of `|mean - posterior mean| / prior std`.
    pub mean_error: f64,
    /// max over coordinates of `|var / posterior var - 1|`.
    pub var_error: f64,
}

impl OracleReport {
    pub const MEAN_TOLERANCE: f64 = 0.05;
    pub const VAR_TOLERANCE: f64 = 0.2;

    pub fn pass(&self) -> bool {
        self.mean_error < Self::MEAN_TOLERANCE && self.var_error < Self::VAR_TOLERANCE
    }
}

/// Decodes one received signal `samples` times with the standard sampler
/// and compares the sample moments with the exact posterior.
///
/// Setup: unit Gaussian source in 4 dimensions, linear orthonormal codec
/// with 2 complex latents at fixed gain `sqrt(1/2)`, identity channel at
/// 10 dB, likelihood-scaled guidance.
pub fn posterior_oracle(samples: usize, seed: u64) -> Result<OracleReport> {
    let (m, k) = (4, 2);
    let scale = 0.5f64.sqrt();
    let codec = Codec::linear_orthonormal(
        m,
        k,
        Normalization::Fixed { scale },
        &mut stream(seed, 0, Substream::Codec),
    )?;
    let noise = noise_power_from_csnr(10.0);
    let link = OfdmLink::awgn(noise);
    let prior = ScorePrior::standard_gaussian(m);
    let schedule = NoiseSchedule::default_linear();
    let ctx = DecodeContext {
        codec: &codec,
        link: &link,
        prior: &prior,
        schedule: &schedule,
    };
    let x = prior
        .sample(1, &mut stream(seed, 0, Substream::Source))?
        .remove(0);
    let z = codec.encode(&x)?.z;
    let n = link.draw_noise(k, &mut stream(seed, 0, Substream::Noise));
    let h = [1.0, 0.0];
    let y = link.transmit(&z, &h, Some(&n))?;
    let post = analytic_posterior(&codec, &prior, noise, &y)?;
    let g = GuidanceConfig {
        zeta: 1.0,
        zeta_mode: ZetaMode::Likelihood,
        signal_gain: scale * scale,
        ..GuidanceConfig::default()
    };
    let outs = (0..samples as u64)
        .into_par_iter()
        .map(|i| Ok(standard_decode(&y, &ctx, &h, &g, &mut stream(seed, i, Substream::Sampler))?.0))
        .collect::<Result<Vec<_>>>()?;
    let sample_mean: Vec<f64> = (0..m)
        .map(|j| outs.iter().map(|o| o[j]).sum::<f64>() / samples as f64)
        .collect();
    let sample_var = coordinate_variance(&outs);
    let pm = post.mean();
    let pc = post.covariance();
    let posterior_mean: Vec<f64> = pm.iter().copied().collect();
    let posterior_var: Vec<f64> = (0..m).map(|j| pc[(j, j)]).collect();
    let mean_error = sample_mean
        .iter()
        .zip(&posterior_mean)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let var_error = sample_var
        .iter()
        .zip(&posterior_var)
        .map(|(a, b)| (a / b - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(OracleReport {
        samples,
        posterior_mean,
        sample_mean,
        posterior_var,
        sample_var,
        mean_error,
        var_error,
    })
}
