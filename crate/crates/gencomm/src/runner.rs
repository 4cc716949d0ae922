//! Seeded scenario execution and parameter sweeps.
//!
//! Trial `i` draws its source, channel, noise and sampler randomness from
//! the substreams `(seed, i, label)`; trials run on the rayon pool and are
//! gathered in trial order, so results do not depend on scheduling.
//! Scenario-wide draws (score training, reference samples) use trial ids
//! at and above `1 << 48`.

use gencomm_core::channel::{sample_channel, LinkKind, OfdmLink};
use gencomm_core::codec::{train_codec, Codec, CodecTrainingReport, Normalization};
use gencomm_core::learned::train_score_mlp;
use gencomm_core::metrics::{self, channel_error, default_peak, frechet_gaussian, TrialReport};
use gencomm_core::prior::ScorePrior;
use gencomm_core::rng::{seeded, stream, Substream};
use gencomm_core::sampler::{
    blind_decode, hifi_decode, standard_decode, DecodeContext, SamplerTrace,
};
use gencomm_core::schedule::NoiseSchedule;
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::codec_file;
use crate::config::{
    CodecSpec, Estimator, LinearDecoder, NormSpec, ScenarioConfig, ScoreSpec, Variant,
};
use crate::error::{HarnessError, Result};

const SCENARIO_TRIAL: u64 = 1 << 48;
const SCORE_TRIAL: u64 = SCENARIO_TRIAL;
const REFERENCE_TRIAL: u64 = SCENARIO_TRIAL + 1;
/// Prior draws used to estimate the default PSNR peak.
pub const PEAK_SAMPLES: usize = 20_000;

pub const SWEEP_AXES: [&str; 9] = [
    "zeta",
    "gamma",
    "zeta_h",
    "tau",
    "eta",
    "signal_gain",
    "csnr_db",
    "clip_ratio",
    "decay",
];

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Keep per-step sampler traces in the result.
    pub keep_traces: bool,
}

/// A scenario with its priors, schedule and codec template built.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ScenarioConfig,
    /// Analytic source distribution trials are drawn from.
    pub source: ScorePrior,
    /// Score the samplers use.
    pub score: ScorePrior,
    pub schedule: NoiseSchedule,
    pub pdp: Vec<f64>,
    pub peak: f64,
    /// Trained or loaded codec, shared by all CSNR points.
    fixed_codec: Option<Codec>,
    pub codec_training: Option<CodecTrainingReport>,
}

impl Prepared {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let source = config.source.prior.build()?;
        let schedule = config.sampler.schedule.build()?;
        let score = match &config.source.score {
            ScoreSpec::Analytic => source.clone(),
            ScoreSpec::Learned { training, samples } => {
                let mut rng = stream(config.seed, SCORE_TRIAL, Substream::Training);
                let data = source.sample(*samples, &mut rng)?;
                let (net, _) = train_score_mlp(&data, &schedule, training, &mut rng)?;
                ScorePrior::Learned(net)
            }
        };
        let peak = match config.source.peak {
            Some(p) => p,
            None => default_peak(&source, PEAK_SAMPLES, &mut seeded(0))?,
        };
        let (fixed_codec, codec_training) = match &config.codec {
            CodecSpec::Linear { .. } => (None, None),
            CodecSpec::File { path } => (Some(codec_file::read(path)?), None),
            CodecSpec::Mlp { .. } => {
                let (c, r) = train_mlp_codec(config, &source)?;
                (Some(c), Some(r))
            }
        };
        if let Some(c) = &fixed_codec {
            if c.m != source.dim() {
                return Err(HarnessError::Invalid(format!(
                    "codec source dimension {} does not match the prior's {}",
                    c.m,
                    source.dim()
                )));
            }
        }
        Ok(Self {
            pdp: config.link.pdp()?,
            config: config.clone(),
            source,
            score,
            schedule,
            peak,
            fixed_codec,
            codec_training,
        })
    }

    /// The codec used at a given link; linear decoders depend on its noise.
    pub fn codec_for(&self, link: &OfdmLink) -> Result<Codec> {
        if let Some(c) = &self.fixed_codec {
            return Ok(c.clone());
        }
        let CodecSpec::Linear {
            k,
            normalization,
            decoder,
            seed,
        } = &self.config.codec
        else {
            unreachable!("non-linear codecs are built up front");
        };
        let m = self.source.dim();
        let mut rng = stream(*seed, 0, Substream::Codec);
        let mut codec = Codec::linear_orthonormal(m, *k, Normalization::PerFrame, &mut rng)?;
        let (mean, cov) = source_moments(&self.source)?;
        codec.normalization = match normalization {
            NormSpec::PerFrame => Normalization::PerFrame,
            NormSpec::Nominal => Normalization::Fixed {
                scale: codec.nominal_scale(&mean, &cov)?,
            },
            NormSpec::Fixed { scale } => Normalization::Fixed { scale: *scale },
        };
        match decoder {
            LinearDecoder::Pseudoinverse => codec.set_pseudoinverse_decoder()?,
            LinearDecoder::Lmmse => codec.set_lmmse_decoder(&mean, &cov, link.noise_power)?,
        }
        Ok(codec)
    }
}

fn source_moments(source: &ScorePrior) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let g = source
        .as_gmm()
        .ok_or_else(|| HarnessError::Invalid("source prior has no closed-form moments".into()))?;
    let (mean, cov) = g.moments();
    let d = mean.len();
    Ok((mean, DMatrix::from_fn(d, d, |r, c| cov[r][c])))
}

/// Trains the configured MLP codec. Its initialization and batches come
/// from the codec seed, independent of the scenario seed.
pub fn train_mlp_codec(
    config: &ScenarioConfig,
    source: &ScorePrior,
) -> Result<(Codec, CodecTrainingReport)> {
    let CodecSpec::Mlp {
        k,
        hidden,
        normalization,
        seed,
        training,
        train_link,
    } = &config.codec
    else {
        return Err(HarnessError::Invalid(
            "codec.kind must be `mlp` for training".into(),
        ));
    };
    let normalization = match normalization {
        NormSpec::PerFrame => Normalization::PerFrame,
        NormSpec::Fixed { scale } => Normalization::Fixed { scale: *scale },
        NormSpec::Nominal => {
            return Err(HarnessError::Invalid(
                "nominal normalization needs a linear codec".into(),
            ))
        }
    };
    let init = Codec::mlp(
        source.dim(),
        *k,
        *hidden,
        normalization,
        &mut stream(*seed, 0, Substream::Codec),
    )?;
    let link = if train_link.fading {
        config.link.build(train_link.csnr_db)?
    } else {
        OfdmLink::awgn(gencomm_core::channel::noise_power_from_csnr(
            train_link.csnr_db,
        ))
    };
    Ok(train_codec(
        &init,
        source,
        &link,
        training,
        &mut stream(*seed, 0, Substream::Training),
    )?)
}

/// Outcome of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub trial: u64,
    pub csnr_db: f64,
    pub x: Vec<f64>,
    pub x_hat: Vec<f64>,
    /// Ground-truth taps.
    pub h: Vec<f64>,
    pub report: TrialReport,
    pub steps: usize,
    pub trace: Option<SamplerTrace>,
}

/// Population statistics of one CSNR point.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub csnr_db: f64,
    pub variant: Variant,
    pub steps: f64,
    pub mse: f64,
    pub psnr_db: f64,
    pub l_m_final: f64,
    /// Mean `d_h` over successful trials (blind decoding only).
    pub d_h: Option<f64>,
    pub success_ratio: f64,
    /// Frechet distance between the decoded set and fresh prior draws;
    /// `None` when either set is too small for a covariance fit.
    pub frechet: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub csnr_db: f64,
    pub trials: Vec<TrialOutcome>,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub config: ScenarioConfig,
    pub peak: f64,
    pub points: Vec<PointResult>,
}

pub fn run_scenario(config: &ScenarioConfig, opts: RunOptions) -> Result<ScenarioResult> {
    let prepared = Prepared::new(config)?;
    run_prepared(&prepared, opts)
}

pub fn run_prepared(p: &Prepared, opts: RunOptions) -> Result<ScenarioResult> {
    let cfg = &p.config;
    let reference = if cfg.reference_samples > p.source.dim() {
        Some(p.source.sample(
            cfg.reference_samples,
            &mut stream(cfg.seed, REFERENCE_TRIAL, Substream::Reference),
        )?)
    } else {
        None
    };
    let mut points = Vec::with_capacity(cfg.link.csnr_db.len());
    for &csnr_db in &cfg.link.csnr_db {
        let link = cfg.link.build(csnr_db)?;
        let codec = p.codec_for(&link)?;
        let ctx = DecodeContext {
            codec: &codec,
            link: &link,
            prior: &p.score,
            schedule: &p.schedule,
        };
        let trials = (0..cfg.trials as u64)
            .into_par_iter()
            .map(|i| {
                run_trial(p, &ctx, csnr_db, i, opts).map_err(|source| HarnessError::Trial {
                    trial: i,
                    csnr_db,
                    source,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let aggregate = aggregate(cfg.sampler.variant, csnr_db, &trials, reference.as_deref())?;
        points.push(PointResult {
            csnr_db,
            trials,
            aggregate,
        });
    }
    Ok(ScenarioResult {
        config: cfg.clone(),
        peak: p.peak,
        points,
    })
}

fn run_trial(
    p: &Prepared,
    ctx: &DecodeContext,
    csnr_db: f64,
    i: u64,
    opts: RunOptions,
) -> gencomm_core::Result<TrialOutcome> {
    let cfg = &p.config;
    let seed = cfg.seed;
    let (codec, link) = (ctx.codec, ctx.link);
    let x = p
        .source
        .sample(1, &mut stream(seed, i, Substream::Source))?
        .remove(0);
    let h = match link.kind {
        LinkKind::Awgn => vec![1.0, 0.0],
        LinkKind::Ofdm => sample_channel(&p.pdp, &mut stream(seed, i, Substream::Channel)),
    };
    let noise = link.draw_noise(codec.k, &mut stream(seed, i, Substream::Noise));
    let z = codec.encode(&x)?.z;
    let y = link.transmit(&z, &h, Some(&noise))?;
    let h_hat = || -> gencomm_core::Result<Vec<f64>> {
        match cfg.link.estimator {
            Estimator::Perfect => Ok(h.clone()),
            Estimator::Lmmse => Ok(link.estimate_lmmse(&y, codec.k)?.taps),
        }
    };
    let g = &cfg.sampler.guidance;
    let mut rng = stream(seed, i, Substream::Sampler);
    let (x_hat, trace, d_h) = match cfg.sampler.variant {
        Variant::Standard => {
            let (x0, t) = standard_decode(&y, ctx, &h_hat()?, g, &mut rng)?;
            (x0, Some(t), None)
        }
        Variant::Hifi => {
            let (x0, t) = hifi_decode(&y, ctx, &h_hat()?, g, &mut rng)?;
            (x0, Some(t), None)
        }
        Variant::Blind => {
            let (x0, h0, mut t) = blind_decode(&y, ctx, &p.pdp, g, &mut rng)?;
            t.fill_channel_error(&h);
            let d = channel_error(&h0, &h)?;
            (x0, Some(t), Some(d))
        }
        Variant::Deterministic => (codec.decode_received(link, &y, &h_hat()?)?, None, None),
    };
    let l_m = match &trace {
        Some(t) => t.final_l_m,
        None => ctx.measurement_distance(&y, &x_hat, &h_hat()?)?,
    };
    let report = TrialReport::new(&x, &x_hat, p.peak, l_m, d_h)?;
    let steps = trace.as_ref().map_or(0, SamplerTrace::executed_steps);
    Ok(TrialOutcome {
        trial: i,
        csnr_db,
        x,
        x_hat,
        h,
        report,
        steps,
        trace: if opts.keep_traces { trace } else { None },
    })
}

fn aggregate(
    variant: Variant,
    csnr_db: f64,
    trials: &[TrialOutcome],
    reference: Option<&[Vec<f64>]>,
) -> Result<Aggregate> {
    let reports: Vec<TrialReport> = trials.iter().map(|t| t.report.clone()).collect();
    let d_h = (variant == Variant::Blind)
        .then(|| metrics::mean(reports.iter().filter(|r| r.success).filter_map(|r| r.d_h)));
    let decoded: Vec<Vec<f64>> = trials.iter().map(|t| t.x_hat.clone()).collect();
    let dim = decoded.first().map_or(0, Vec::len);
    let frechet = match reference {
        Some(r) if decoded.len() > dim => Some(frechet_gaussian(&decoded, r)?),
        _ => None,
    };
    Ok(Aggregate {
        csnr_db,
        variant,
        steps: metrics::mean(trials.iter().map(|t| t.steps as f64)),
        mse: metrics::mean(reports.iter().map(|r| r.mse)),
        psnr_db: metrics::mean(reports.iter().map(|r| r.psnr_db)),
        l_m_final: metrics::mean(reports.iter().map(|r| r.l_m_final)),
        d_h,
        success_ratio: metrics::success_ratio(&reports),
        frechet,
    })
}

/// Sets the sweep axis `axis` of `config` to `value`.
pub fn apply_axis(config: &mut ScenarioConfig, axis: &str, value: f64) -> Result<()> {
    let g = &mut config.sampler.guidance;
    match axis {
        "zeta" => g.zeta = value,
        "gamma" => g.gamma = value,
        "zeta_h" => g.zeta_h = value,
        "tau" => g.tau = value,
        "eta" => g.eta = value,
        "signal_gain" => g.signal_gain = value,
        "csnr_db" => config.link.csnr_db = vec![value],
        "clip_ratio" => config.link.clip_ratio = value.is_finite().then_some(value),
        "decay" => config.link.decay = value,
        other => return Err(HarnessError::UnknownAxis(other.to_string())),
    }
    Ok(())
}

/// Runs the scenario once per value of `axis`, sharing the base seed.
pub fn sweep(
    config: &ScenarioConfig,
    axis: &str,
    values: &[f64],
    opts: RunOptions,
) -> Result<Vec<(f64, ScenarioResult)>> {
    if !SWEEP_AXES.contains(&axis) {
        return Err(HarnessError::UnknownAxis(axis.to_string()));
    }
    if values.is_empty() {
        return Err(HarnessError::Invalid(
            "a sweep needs at least one value".into(),
        ));
    }
    let configs = values
        .iter()
        .map(|v| {
            let mut c = config.clone();
            apply_axis(&mut c, axis, *v)?;
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    values
        .iter()
        .zip(&configs)
        .map(|(v, c)| Ok((*v, run_scenario(c, opts)?)))
        .collect()
}
