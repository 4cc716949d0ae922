//! Encoder/decoder pairs mapping real sources to complex channel latents.
//!
//! Latents are `k` complex values stored as `2k` interleaved reals: even
//! index real part, odd index imaginary part.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::autodiff::{DenseMatrix, Tape, Var, VectorFunction};
use crate::channel::{sample_channel, LinkKind, OfdmLink};
use crate::error::{check_len, Error, Result};
use crate::nn::{collect_grads, Adam, Mlp};
use crate::prior::ScorePrior;
use crate::rng::{complex_normal_vec, normal_vec};

/// How the encoder output is scaled to the transmit power budget.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "mode", rename_all = "snake_case"))]
pub enum Normalization {
    /// Every frame scaled to mean `|z_i|^2 = 1`.
    #[default]
    PerFrame,
    /// A fixed gain; unit power holds only on average over the source.
    Fixed { scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum CodecParams {
    Linear {
        /// `2k x m`, row-major.
        encoder: Vec<f64>,
        encoder_bias: Vec<f64>,
        /// `m x 2k`, row-major.
        decoder: Vec<f64>,
        decoder_bias: Vec<f64>,
    },
    Mlp {
        encoder: Mlp,
        decoder: Mlp,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodecKind {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Codec {
    pub m: usize,
    pub k: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub normalization: Normalization,
    pub params: CodecParams,
}

/// Encoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSignal {
    pub z: Vec<f64>,
    /// Set when a zero pre-normalization vector could not be scaled.
    pub degenerate_power: bool,
}

impl Codec {
    /// Linear codec from explicit matrices.
    pub fn linear(
        m: usize,
        k: usize,
        encoder: Vec<f64>,
        encoder_bias: Vec<f64>,
        normalization: Normalization,
    ) -> Result<Self> {
        check_len(2 * k * m, encoder.len(), "linear encoder matrix")?;
        check_len(2 * k, encoder_bias.len(), "linear encoder bias")?;
        let mut codec = Self {
            m,
            k,
            normalization,
            params: CodecParams::Linear {
                encoder,
                encoder_bias,
                decoder: vec![0.0; 2 * k * m],
                decoder_bias: vec![0.0; m],
            },
        };
        codec.set_pseudoinverse_decoder()?;
        Ok(codec)
    }

    /// Linear codec with orthonormal rows (or columns when `2k > m`), zero
    /// bias and a pseudoinverse decoder.
    pub fn linear_orthonormal<R: Rng + ?Sized>(
        m: usize,
        k: usize,
        normalization: Normalization,
        rng: &mut R,
    ) -> Result<Self> {
        if m == 0 || k == 0 {
            return Err(Error::Parameter("codec dimensions must be positive".into()));
        }
        let n = 2 * k;
        let g = DMatrix::from_vec(n, m, normal_vec(rng, n * m));
        let a = if n <= m {
            let q = g.transpose().qr().q();
            q.transpose()
        } else {
            g.qr().q()
        };
        let data = (0..n)
            .flat_map(|r| (0..m).map(move |c| (r, c)))
            .map(|(r, c)| a[(r, c)])
            .collect();
        Self::linear(m, k, data, vec![0.0; n], normalization)
    }

    /// Two-hidden-layer tanh networks on both sides.
    pub fn mlp<R: Rng + ?Sized>(
        m: usize,
        k: usize,
        hidden: usize,
        normalization: Normalization,
        rng: &mut R,
    ) -> Result<Self> {
        if m == 0 || k == 0 || hidden == 0 {
            return Err(Error::Parameter("codec dimensions must be positive".into()));
        }
        Ok(Self {
            m,
            k,
            normalization,
            params: CodecParams::Mlp {
                encoder: Mlp::new(&[m, hidden, hidden, 2 * k], rng),
                decoder: Mlp::new(&[2 * k, hidden, hidden, m], rng),
            },
        })
    }

    pub fn kind(&self) -> CodecKind {
        match self.params {
            CodecParams::Linear { .. } => CodecKind::Linear,
            CodecParams::Mlp { .. } => CodecKind::Mlp,
        }
    }

    /// Bandwidth ratio `k / m`.
    pub fn ratio(&self) -> f64 {
        self.k as f64 / self.m as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.k == 0 {
            return Err(Error::Parameter("codec dimensions must be positive".into()));
        }
        if let Normalization::Fixed { scale } = self.normalization {
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(Error::Parameter(
                    "fixed normalization scale must be positive".into(),
                ));
            }
        }
        let (m, n) = (self.m, 2 * self.k);
        match &self.params {
            CodecParams::Linear {
                encoder,
                encoder_bias,
                decoder,
                decoder_bias,
            } => {
                check_len(n * m, encoder.len(), "linear encoder matrix")?;
                check_len(n, encoder_bias.len(), "linear encoder bias")?;
                check_len(m * n, decoder.len(), "linear decoder matrix")?;
                check_len(m, decoder_bias.len(), "linear decoder bias")
            }
            CodecParams::Mlp { encoder, decoder } => {
                if !encoder.is_consistent() || !decoder.is_consistent() {
                    return Err(Error::Parameter("inconsistent network layer shapes".into()));
                }
                check_len(m, encoder.in_dim(), "encoder input")?;
                check_len(n, encoder.out_dim(), "encoder output")?;
                check_len(n, decoder.in_dim(), "decoder input")?;
                check_len(m, decoder.out_dim(), "decoder output")
            }
        }
    }

    /// Effective gain from `A x + b` to `z` used by linear decoders and
    /// oracles. Per-frame normalization uses the source's mean power.
    pub fn nominal_scale(&self, mean: &[f64], cov: &DMatrix<f64>) -> Result<f64> {
        match self.normalization {
            Normalization::Fixed { scale } => Ok(scale),
            Normalization::PerFrame => {
                let (a, b) = self.linear_parts()?;
                let mu = DVector::from_column_slice(mean);
                let mean_out = &a * mu + &b;
                let power = (&a * cov * a.transpose()).trace() + mean_out.norm_squared();
                if power > 0.0 {
                    Ok(libm::sqrt(self.k as f64 / power))
                } else {
                    Err(Error::Singular("encoder output has zero power"))
                }
            }
        }
    }

    /// `(A, b)` of a linear codec as dense matrices.
    pub fn linear_parts(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        match &self.params {
            CodecParams::Linear {
                encoder,
                encoder_bias,
                ..
            } => Ok((
                DMatrix::from_row_slice(2 * self.k, self.m, encoder),
                DVector::from_column_slice(encoder_bias),
            )),
            CodecParams::Mlp { .. } => Err(Error::Unsupported("linear view of a nonlinear codec")),
        }
    }

    /// `B = pinv(s A)`, `c = -B s b`, with `s` the fixed scale (1 for
    /// per-frame normalization, which recovers `x` only up to scale).
    pub fn set_pseudoinverse_decoder(&mut self) -> Result<()> {
        let (a, b) = self.linear_parts()?;
        let s = match self.normalization {
            Normalization::Fixed { scale } => scale,
            Normalization::PerFrame => 1.0,
        };
        let g = a * s;
        let pinv = g
            .pseudo_inverse(1e-12)
            .map_err(|_| Error::Singular("encoder pseudoinverse"))?;
        let c = -(&pinv * b * s);
        self.store_linear_decoder(&pinv, &c);
        Ok(())
    }

    /// Linear MMSE decoder for a Gaussian-moment source observed through
    /// `z + n` with `n ~ CN(0, noise_power)`.
    pub fn set_lmmse_decoder(
        &mut self,
        mean: &[f64],
        cov: &DMatrix<f64>,
        noise_power: f64,
    ) -> Result<()> {
        check_len(self.m, mean.len(), "source mean")?;
        let (a, b) = self.linear_parts()?;
        let s = self.nominal_scale(mean, cov)?;
        let g = a * s;
        let mu = DVector::from_column_slice(mean);
        let n = 2 * self.k;
        let cyy = &g * cov * g.transpose() + DMatrix::identity(n, n) * (noise_power / 2.0);
        let inv = cyy
            .cholesky()
            .ok_or(Error::Singular("observation covariance"))?
            .inverse();
        let gain = cov * g.transpose() * inv;
        let offset = &mu - &gain * (&g * &mu + b * s);
        self.store_linear_decoder(&gain, &offset);
        Ok(())
    }

    fn store_linear_decoder(&mut self, mat: &DMatrix<f64>, offset: &DVector<f64>) {
        if let CodecParams::Linear {
            decoder,
            decoder_bias,
            ..
        } = &mut self.params
        {
            *decoder = (0..mat.nrows())
                .flat_map(|r| (0..mat.ncols()).map(move |c| (r, c)))
                .map(|(r, c)| mat[(r, c)])
                .collect();
            *decoder_bias = offset.iter().copied().collect();
        }
    }

    /// Records `E(x)` on a tape, normalization included.
    pub fn encode_on_tape(&self, tape: &mut Tape, x: Var) -> Var {
        let raw = match &self.params {
            CodecParams::Linear {
                encoder,
                encoder_bias,
                ..
            } => {
                let a = Rc::new(DenseMatrix::new(2 * self.k, self.m, encoder.clone()));
                let ax = tape.linear(x, a);
                let b = tape.constant(encoder_bias);
                tape.add(ax, b)
            }
            CodecParams::Mlp { encoder, .. } => {
                let p = encoder.constants(tape);
                encoder.forward_on_tape(tape, &p, x, 1)
            }
        };
        self.normalize_on_tape(tape, raw)
    }

    fn normalize_on_tape(&self, tape: &mut Tape, raw: Var) -> Var {
        match self.normalization {
            Normalization::PerFrame => tape.power_normalize(raw, self.k as f64),
            Normalization::Fixed { scale } => tape.scale(raw, scale),
        }
    }

    /// Records `D(z)` on a tape.
    pub fn decode_on_tape(&self, tape: &mut Tape, z: Var) -> Var {
        match &self.params {
            CodecParams::Linear {
                decoder,
                decoder_bias,
                ..
            } => {
                let b = Rc::new(DenseMatrix::new(self.m, 2 * self.k, decoder.clone()));
                let bz = tape.linear(z, b);
                let c = tape.constant(decoder_bias);
                tape.add(bz, c)
            }
            CodecParams::Mlp { decoder, .. } => {
                let p = decoder.constants(tape);
                decoder.forward_on_tape(tape, &p, z, 1)
            }
        }
    }

    pub fn encode(&self, x: &[f64]) -> Result<LatentSignal> {
        check_len(self.m, x.len(), "source vector")?;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let z = self.encode_on_tape(&mut tape, xv);
        tape.check()?;
        Ok(LatentSignal {
            z: tape.value(z).to_vec(),
            degenerate_power: tape.degenerate_power(),
        })
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len(2 * self.k, z.len(), "latent vector")?;
        let mut tape = Tape::new();
        let zv = tape.constant(z);
        let out = self.decode_on_tape(&mut tape, zv);
        tape.check()?;
        Ok(tape.value(out).to_vec())
    }

    /// Deterministic reconstruction `x_d = D(W_h^{-1}(y))`.
    pub fn decode_received(&self, link: &OfdmLink, y: &[f64], h: &[f64]) -> Result<Vec<f64>> {
        let z = link.receiver_inverse(y, h, self.k)?;
        self.decode(&z)
    }
}

/// Scales each row of a `rows x cols` block to squared norm `target`.
struct RowNormalize {
    rows: usize,
    cols: usize,
    target: f64,
}

impl VectorFunction for RowNormalize {
    fn name(&self) -> &'static str {
        "row_normalize"
    }
    fn in_len(&self) -> usize {
        self.rows * self.cols
    }
    fn out_len(&self) -> usize {
        self.rows * self.cols
    }
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let c = libm::sqrt(self.target);
        x.chunks(self.cols)
            .flat_map(|r| {
                let n = libm::sqrt(r.iter().map(|v| v * v).sum::<f64>());
                r.iter().map(move |v| if n > 0.0 { c * v / n } else { 0.0 })
            })
            .collect()
    }
    fn vjp(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        let c = libm::sqrt(self.target);
        x.chunks(self.cols)
            .zip(g.chunks(self.cols))
            .flat_map(|(r, gr)| {
                let n2: f64 = r.iter().map(|v| v * v).sum();
                let n = libm::sqrt(n2);
                let dot: f64 = r.iter().zip(gr).map(|(a, b)| a * b).sum();
                r.iter().zip(gr).map(move |(xi, gi)| {
                    if n > 0.0 {
                        c / n * (gi - xi * dot / n2)
                    } else {
                        0.0
                    }
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct CodecTrainingConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub validation_samples: usize,
}

impl Default for CodecTrainingConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 32,
            learning_rate: 2e-3,
            validation_samples: 1000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CodecTrainingReport {
    pub losses: Vec<f64>,
    pub validation_mse: f64,
    /// MSE of always predicting the source mean.
    pub baseline_mse: f64,
}

/// Trains an MLP codec end to end through the link, minimizing the mean
/// squared reconstruction error after perfect-CSI equalization. One fading
/// draw is shared by each batch.
pub fn train_codec<R: Rng + ?Sized>(
    codec: &Codec,
    source: &ScorePrior,
    link: &OfdmLink,
    config: &CodecTrainingConfig,
    rng: &mut R,
) -> Result<(Codec, CodecTrainingReport)> {
    codec.validate()?;
    link.validate()?;
    check_len(codec.m, source.dim(), "source prior dimension")?;
    if codec.kind() != CodecKind::Mlp {
        return Err(Error::Unsupported("training a linear codec"));
    }
    if config.batch_size == 0 {
        return Err(Error::Parameter("batch size must be positive".into()));
    }
    let mut trained = codec.clone();
    let mut opt = Adam::new(config.learning_rate);
    let mut report = CodecTrainingReport::default();
    let b = config.batch_size;
    for step in 0..config.steps {
        let xs = source.sample(b, rng)?;
        let h = draw_taps(link, rng);
        let mut tape = Tape::new();
        let CodecParams::Mlp { encoder, decoder } = &trained.params else {
            unreachable!("kind checked above")
        };
        let enc_p = encoder.leaves(&mut tape);
        let dec_p = decoder.leaves(&mut tape);
        let flat: Vec<f64> = xs.concat();
        let x = tape.constant(&flat);
        let loss = batch_loss(&trained, &mut tape, (&enc_p, &dec_p), x, b, link, &h, rng);
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::TrainingDivergence { step });
        }
        let grads = tape
            .backward(loss)
            .map_err(|_| Error::TrainingDivergence { step })?;
        let g_enc = collect_grads(&grads, &enc_p);
        let g_dec = collect_grads(&grads, &dec_p);
        let CodecParams::Mlp { encoder, decoder } = &mut trained.params else {
            unreachable!("kind checked above")
        };
        let all: Vec<Vec<f64>> = g_enc.into_iter().chain(g_dec).collect();
        let params = encoder
            .weights
            .iter_mut()
            .zip(encoder.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .chain(
                decoder
                    .weights
                    .iter_mut()
                    .zip(decoder.biases.iter_mut())
                    .flat_map(|(w, b)| [w, b]),
            );
        opt.update(params, &all);
        report.losses.push(value);
    }
    let (mse, base) = validation_mse(&trained, source, link, config.validation_samples, rng)?;
    report.validation_mse = mse;
    report.baseline_mse = base;
    Ok((trained, report))
}

fn draw_taps<R: Rng + ?Sized>(link: &OfdmLink, rng: &mut R) -> Vec<f64> {
    match link.kind {
        LinkKind::Awgn => vec![1.0, 0.0],
        LinkKind::Ofdm => sample_channel(&link.pdp, rng),
    }
}

#[allow(clippy::too_many_arguments)]
fn batch_loss<R: Rng + ?Sized>(
    codec: &Codec,
    tape: &mut Tape,
    (enc_p, dec_p): (&[Var], &[Var]),
    x: Var,
    b: usize,
    link: &OfdmLink,
    h: &[f64],
    rng: &mut R,
) -> Var {
    let CodecParams::Mlp { encoder, decoder } = &codec.params else {
        unreachable!("mlp codec")
    };
    let n = 2 * codec.k;
    let raw = encoder.forward_on_tape(tape, enc_p, x, b);
    let z = match codec.normalization {
        Normalization::PerFrame => tape.map(
            raw,
            Rc::new(RowNormalize {
                rows: b,
                cols: n,
                target: codec.k as f64,
            }),
        ),
        Normalization::Fixed { scale } => tape.scale(raw, scale),
    };
    let received = match link.kind {
        LinkKind::Awgn => {
            let noise = tape.constant_vec(complex_normal_vec(rng, b * codec.k, link.noise_power));
            tape.add(z, noise)
        }
        LinkKind::Ofdm => {
            let hv = tape.constant(h);
            let inverse = link
                .receiver_map(h, codec.k)
                .expect("tap count validated with the link");
            let rows: Vec<Var> = (0..b)
                .map(|r| {
                    let zr = tape.slice(z, r * n, n);
                    let y = link.transmit_on_tape(tape, zr, hv);
                    let noise = tape.constant_vec(link.draw_noise(codec.k, rng));
                    let y = tape.add(y, noise);
                    tape.linear(y, inverse.clone())
                })
                .collect();
            tape.concat(&rows)
        }
    };
    let out = decoder.forward_on_tape(tape, dec_p, received, b);
    let sq = tape.dist_sq(out, x);
    tape.scale(sq, 1.0 / b as f64)
}

/// Monte Carlo reconstruction MSE per sample (squared norm) of a codec
/// under perfect CSI, and of the source-mean predictor.
pub fn validation_mse<R: Rng + ?Sized>(
    codec: &Codec,
    source: &ScorePrior,
    link: &OfdmLink,
    samples: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if samples == 0 {
        return Err(Error::Parameter(
            "validation needs at least one sample".into(),
        ));
    }
    let mean = source
        .as_gmm()
        .ok_or(Error::Unsupported("validation against a learned prior"))?
        .moments()
        .0;
    let (mut mse, mut base) = (0.0, 0.0);
    for x in source.sample(samples, rng)? {
        let h = draw_taps(link, rng);
        let z = codec.encode(&x)?.z;
        let noise = link.draw_noise(codec.k, rng);
        let y = link.transmit(&z, &h, Some(&noise))?;
        let xd = codec.decode_received(link, &y, &h)?;
        mse += xd
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        base += mean
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok((mse / samples as f64, base / samples as f64))
}
