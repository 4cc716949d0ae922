//! JSON scenario configuration.
//!
//! Every field has a default, so `{}` is a valid (if unremarkable) scenario.
//! Parsing reports the JSON path, line and column of the first offending
//! field.

use std::path::{Path, PathBuf};

use gencomm_core::channel::{noise_power_from_csnr, sample_pdp, LinkKind, OfdmLink};
use gencomm_core::codec::CodecTrainingConfig;
use gencomm_core::learned::TrainingConfig;
use gencomm_core::prior::{Gmm, ScorePrior};
use gencomm_core::rng::normal_vec;
use gencomm_core::sampler::{GuidanceConfig, ZetaMode};
use gencomm_core::schedule::NoiseSchedule;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub const PRESETS: [&str; 5] = ["awgn", "fading", "fading_clip", "fading_isi", "blind"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    pub source: SourceSpec,
    pub codec: CodecSpec,
    pub link: LinkSpec,
    pub sampler: SamplerSpec,
    /// Trials per CSNR point.
    pub trials: usize,
    pub seed: u64,
    /// CSV destination; `None` writes to stdout.
    pub output: Option<PathBuf>,
    /// Fresh prior draws the decoded set is compared against.
    pub reference_samples: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: "scenario".into(),
            source: SourceSpec::default(),
            codec: CodecSpec::default(),
            link: LinkSpec::default(),
            sampler: SamplerSpec::default(),
            trials: 100,
            seed: 0,
            output: None,
            reference_samples: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSpec {
    pub prior: PriorSpec,
    pub score: ScoreSpec,
    /// PSNR peak; `None` uses the prior's 99.9th-percentile amplitude.
    pub peak: Option<f64>,
}

impl Default for SourceSpec {
    fn default() -> Self {
        Self {
            prior: PriorSpec::SymmetricGmm {
                dim: 16,
                scale: 1.0,
                var: 0.1,
            },
            score: ScoreSpec::Analytic,
            peak: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    StandardGaussian {
        dim: usize,
    },
    Gaussian {
        mean: Vec<f64>,
        var: Vec<f64>,
    },
    Gmm {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        vars: Vec<Vec<f64>>,
    },
    /// Two equally weighted components at `+-scale (1.5, -1.0, 1.5, ...)`.
    SymmetricGmm {
        dim: usize,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default = "default_var")]
        var: f64,
    },
    /// Equally weighted components with standard normal means drawn from
    /// `seed`.
    RandomGmm {
        dim: usize,
        components: usize,
        var: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn one() -> f64 {
    1.0
}

fn default_var() -> f64 {
    0.1
}

impl PriorSpec {
    pub fn build(&self) -> Result<ScorePrior> {
        let prior = match self {
            PriorSpec::StandardGaussian { dim } => ScorePrior::standard_gaussian(*dim),
            PriorSpec::Gaussian { mean, var } => ScorePrior::Gaussian {
                mean: mean.clone(),
                var: var.clone(),
            },
            PriorSpec::Gmm {
                weights,
                means,
                vars,
            } => ScorePrior::Gmm(Gmm::new(weights.clone(), means.clone(), vars.clone())?),
            PriorSpec::SymmetricGmm { dim, scale, var } => {
                let mu: Vec<f64> = (0..*dim)
                    .map(|i| scale * if i % 2 == 0 { 1.5 } else { -1.0 })
                    .collect();
                let neg = mu.iter().map(|v| -v).collect();
                ScorePrior::Gmm(Gmm::new(
                    vec![0.5, 0.5],
                    vec![mu, neg],
                    vec![vec![*var; *dim]; 2],
                )?)
            }
            PriorSpec::RandomGmm {
                dim,
                components,
                var,
                seed,
            } => {
                let mut rng = gencomm_core::rng::seeded(*seed);
                let n = (*components).max(1);
                let means = (0..n).map(|_| normal_vec(&mut rng, *dim)).collect();
                ScorePrior::Gmm(Gmm::new(
                    vec![1.0 / n as f64; n],
                    means,
                    vec![vec![*var; *dim]; n],
                )?)
            }
        };
        if prior.dim() == 0 {
            return Err(HarnessError::Invalid(
                "source dimension must be positive".into(),
            ));
        }
        prior.validate()?;
        Ok(prior)
    }
}

/// Which score the samplers use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScoreSpec {
    /// Closed-form score of the source prior.
    #[default]
    Analytic,
    /// Score network trained by denoising score matching on prior draws.
    Learned {
        #[serde(default)]
        training: TrainingConfig,
        #[serde(default = "default_score_samples")]
        samples: usize,
    },
}

fn default_score_samples() -> usize {
    4000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CodecSpec {
    /// Orthonormal rows drawn from `seed`.
    Linear {
        k: usize,
        #[serde(default)]
        normalization: NormSpec,
        #[serde(default)]
        decoder: LinearDecoder,
        #[serde(default)]
        seed: u64,
    },
    /// Two tanh hidden layers per side, trained end to end.
    Mlp {
        k: usize,
        #[serde(default = "default_hidden")]
        hidden: usize,
        #[serde(default)]
        normalization: NormSpec,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        training: CodecTrainingConfig,
        #[serde(default)]
        train_link: TrainLink,
    },
    /// A codec written by `train-codec`.
    File { path: PathBuf },
}

fn default_hidden() -> usize {
    64
}

impl Default for CodecSpec {
    fn default() -> Self {
        CodecSpec::Linear {
            k: 4,
            normalization: NormSpec::PerFrame,
            decoder: LinearDecoder::Lmmse,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum NormSpec {
    #[default]
    PerFrame,
    /// Fixed gain giving unit average power under the source prior.
    Nominal,
    Fixed {
        scale: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LinearDecoder {
    Pseudoinverse,
    /// Linear MMSE under the prior's first two moments and the link noise.
    #[default]
    Lmmse,
}

/// Link the MLP codec is trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainLink {
    pub csnr_db: f64,
    /// Train through the scenario's fading link instead of AWGN.
    pub fading: bool,
}

impl Default for TrainLink {
    fn default() -> Self {
        Self {
            csnr_db: 10.0,
            fading: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[default]
    Lmmse,
    /// Ground-truth taps.
    Perfect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkSpec {
    pub kind: LinkKind,
    pub csnr_db: Vec<f64>,
    /// Tap count `L` of the exponential power-delay profile.
    pub taps: usize,
    /// Decay constant `r` of the power-delay profile.
    pub decay: f64,
    pub n_fft: usize,
    pub n_cp: usize,
    pub n_pilot: usize,
    pub clip_ratio: Option<f64>,
    pub interleaver_seed: u64,
    pub allow_isi: bool,
    /// Pilot-free transmission decoded by joint source/channel sampling.
    pub blind: bool,
    pub estimator: Estimator,
}

impl Default for LinkSpec {
    fn default() -> Self {
        Self {
            kind: LinkKind::Ofdm,
            csnr_db: vec![10.0],
            taps: 8,
            decay: 4.0,
            n_fft: 16,
            n_cp: 8,
            n_pilot: 1,
            clip_ratio: None,
            interleaver_seed: 0,
            allow_isi: false,
            blind: false,
            estimator: Estimator::Lmmse,
        }
    }
}

impl LinkSpec {
    pub fn pdp(&self) -> Result<Vec<f64>> {
        match self.kind {
            LinkKind::Awgn => Ok(vec![1.0]),
            LinkKind::Ofdm => Ok(sample_pdp(self.taps, self.decay)?),
        }
    }

    pub fn build(&self, csnr_db: f64) -> Result<OfdmLink> {
        let noise = noise_power_from_csnr(csnr_db);
        let link = match self.kind {
            LinkKind::Awgn => OfdmLink::awgn(noise),
            LinkKind::Ofdm => OfdmLink {
                n_pilot: self.n_pilot,
                clip_ratio: self.clip_ratio,
                interleaver_seed: self.interleaver_seed,
                allow_isi: self.allow_isi,
                ..OfdmLink::ofdm(self.n_fft, self.n_cp, self.pdp()?, noise)
            },
        };
        link.validate()?;
        Ok(link)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Standard,
    Hifi,
    Blind,
    /// `x_d = D(W^-1(y))` without sampling.
    Deterministic,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::Hifi => "hifi",
            Variant::Blind => "blind",
            Variant::Deterministic => "deterministic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        Ok(NoiseSchedule::linear(
            self.steps,
            self.beta_start,
            self.beta_end,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSpec {
    pub variant: Variant,
    pub guidance: GuidanceConfig,
    pub schedule: ScheduleSpec,
}

impl ScenarioConfig {
    /// Parses JSON, reporting the path of the first offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            HarnessError::Config {
                path,
                line: inner.line(),
                column: inner.column(),
                message: inner.to_string(),
            }
        })
    }

    /// Reads a config file; a relative codec path is resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let CodecSpec::File { path: codec } = &mut cfg.codec {
            if codec.is_relative() {
                if let Some(dir) = path.parent() {
                    *codec = dir.join(&*codec);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn preset(name: &str) -> Result<Self> {
        let hifi = GuidanceConfig {
            zeta: 1.0,
            gamma: 0.0,
            zeta_mode: ZetaMode::Likelihood,
            ..GuidanceConfig::hifi()
        };
        let fading = LinkSpec {
            csnr_db: vec![0.0, 5.0, 10.0, 15.0],
            ..LinkSpec::default()
        };
        let base = ScenarioConfig {
            name: name.into(),
            sampler: SamplerSpec {
                variant: Variant::Hifi,
                guidance: hifi,
                schedule: ScheduleSpec::default(),
            },
            ..ScenarioConfig::default()
        };
        let cfg = match name {
            "awgn" => ScenarioConfig {
                link: LinkSpec {
                    kind: LinkKind::Awgn,
                    csnr_db: vec![0.0, 5.0, 10.0],
                    ..LinkSpec::default()
                },
                ..base
            },
            "fading" => ScenarioConfig {
                link: fading,
                ..base
            },
            "fading_clip" => ScenarioConfig {
                link: LinkSpec {
                    clip_ratio: Some(1.2),
                    ..fading
                },
                ..base
            },
            "fading_isi" => ScenarioConfig {
                link: LinkSpec {
                    n_cp: 2,
                    allow_isi: true,
                    ..fading
                },
                ..base
            },
            "blind" => ScenarioConfig {
                source: SourceSpec {
                    prior: PriorSpec::RandomGmm {
                        dim: 16,
                        components: 1,
                        var: 0.2,
                        seed: 5,
                    },
                    ..SourceSpec::default()
                },
                codec: CodecSpec::Linear {
                    k: 16,
                    normalization: NormSpec::PerFrame,
                    decoder: LinearDecoder::Pseudoinverse,
                    seed: 1,
                },
                link: LinkSpec {
                    csnr_db: vec![10.0],
                    taps: 4,
                    decay: 4.0,
                    n_fft: 8,
                    n_cp: 3,
                    n_pilot: 0,
                    blind: true,
                    ..LinkSpec::default()
                },
                sampler: SamplerSpec {
                    variant: Variant::Blind,
                    guidance: GuidanceConfig {
                        zeta: 0.3,
                        zeta_h: 1.0,
                        zeta_mode: ZetaMode::Likelihood,
                        ..GuidanceConfig::default()
                    },
                    schedule: ScheduleSpec::default(),
                },
                ..base
            },
            other => {
                return Err(HarnessError::Invalid(format!(
                    "unknown preset `{other}` (known: {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(cfg)
    }

    /// Checks cross-field consistency without running anything expensive.
    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(HarnessError::Invalid(m));
        if self.schema_version != SCHEMA_VERSION {
            return invalid(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.trials == 0 {
            return invalid("trials must be at least 1".into());
        }
        if self.link.csnr_db.is_empty() || self.link.csnr_db.iter().any(|c| !c.is_finite()) {
            return invalid("link.csnr_db must be a non-empty list of finite values".into());
        }
        if let Some(p) = self.source.peak {
            if !(p > 0.0 && p.is_finite()) {
                return invalid("source.peak must be positive".into());
            }
        }
        self.source.prior.build()?;
        let blind_variant = self.sampler.variant == Variant::Blind;
        if self.link.blind && !blind_variant {
            return invalid(format!(
                "link.blind is set but sampler.variant is `{}`; pilot-free links need the blind sampler",
                self.sampler.variant.name()
            ));
        }
        if blind_variant && !self.link.blind {
            return invalid("sampler.variant `blind` requires link.blind = true".into());
        }
        if self.link.blind {
            if self.link.kind == LinkKind::Awgn {
                return invalid("blind decoding needs an OFDM link".into());
            }
            if self.link.n_pilot != 0 {
                return invalid("blind links transmit no pilots; set link.n_pilot = 0".into());
            }
        } else if self.link.kind == LinkKind::Ofdm
            && self.link.n_pilot == 0
            && self.link.estimator == Estimator::Lmmse
        {
            return invalid(
                "LMMSE estimation needs link.n_pilot >= 1 (or estimator = perfect)".into(),
            );
        }
        for c in &self.link.csnr_db {
            self.link.build(*c)?;
        }
        let schedule = self.sampler.schedule.build()?;
        self.sampler.guidance.validate(&schedule)?;
        match &self.codec {
            CodecSpec::Linear {
                k, normalization, ..
            }
            | CodecSpec::Mlp {
                k, normalization, ..
            } => {
                if *k == 0 {
                    return invalid("codec.k must be positive".into());
                }
                if let NormSpec::Fixed { scale } = normalization {
                    if !(*scale > 0.0 && scale.is_finite()) {
                        return invalid("codec normalization scale must be positive".into());
                    }
                }
            }
            CodecSpec::File { path } => {
                if !path.is_file() {
                    return invalid(format!("codec file {} does not exist", path.display()));
                }
            }
        }
        Ok(())
    }
}
