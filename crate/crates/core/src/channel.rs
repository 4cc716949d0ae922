//! The wireless operator `W_h` and its receiver-side inverse.
//!
//! Complex vectors are interleaved `(re, im)` pairs. A frame carries
//! `n_pilot` all-ones pilot OFDM symbols followed by `ceil(k / n_fft)` data
//! symbols; each time-domain symbol is the unitary IDFT of its grid with the
//! last `n_cp` samples prepended. The whole frame is clipped, passed through
//! the causal multipath taps (output truncated to the frame length) and
//! corrupted by `CN(0, noise_power)` samples.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{Chain, LinearMap, Tape, Var};
use crate::error::{check_len, Error, Result};
use crate::fft::{block_dft, frequency_response};
use crate::rng::{complex_normal_vec, seeded};

/// Exponential power-delay profile `e^{-l/r}`, normalized to unit sum.
/// `r = inf` gives the flat profile.
pub fn sample_pdp(taps: usize, decay: f64) -> Result<Vec<f64>> {
    if taps == 0 || !(decay > 0.0) {
        return Err(Error::Parameter(alloc::format!(
            "power-delay profile needs L >= 1 and r > 0, got L={taps}, r={decay}"
        )));
    }
    let raw: Vec<f64> = (0..taps).map(|l| libm::exp(-(l as f64) / decay)).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / total).collect())
}

/// Independent Rayleigh taps `h_l ~ CN(0, pdp_l)`.
pub fn sample_channel<R: Rng + ?Sized>(pdp: &[f64], rng: &mut R) -> Vec<f64> {
    pdp.iter()
        .flat_map(|v| {
            let z = complex_normal_vec(rng, 1, *v);
            [z[0], z[1]]
        })
        .collect()
}

/// Noise power for a channel SNR in dB with unit symbol power.
pub fn noise_power_from_csnr(csnr_db: f64) -> f64 {
    libm::pow(10.0, -csnr_db / 10.0)
}

/// Role of a set of channel taps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelRole {
    GroundTruth,
    Estimate,
    DiffusionState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// Interleaved complex taps, length `2L`.
    pub taps: Vec<f64>,
    pub role: ChannelRole,
}

fn permutation(len: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..len).collect();
    p.shuffle(&mut seeded(seed));
    p
}

/// Seeded pseudorandom permutation of complex symbols.
pub fn interleave(z: &[f64], seed: u64) -> Vec<f64> {
    let perm = permutation(z.len() / 2, seed);
    perm.iter()
        .flat_map(|&j| [z[2 * j], z[2 * j + 1]])
        .collect()
}

pub fn deinterleave(z: &[f64], seed: u64) -> Vec<f64> {
    let perm = permutation(z.len() / 2, seed);
    let mut out = vec![0.0; z.len()];
    for (i, &j) in perm.iter().enumerate() {
        out[2 * j] = z[2 * i];
        out[2 * j + 1] = z[2 * i + 1];
    }
    out
}

/// Limits each complex sample to magnitude `ratio * sqrt(power)`;
/// `ratio = inf` is the identity.
pub fn clip_papr(signal: &[f64], ratio: f64, power: f64) -> Vec<f64> {
    let radius = ratio * libm::sqrt(power);
    let mut out = signal.to_vec();
    if radius.is_finite() {
        for p in out.chunks_mut(2) {
            let mag = libm::hypot(p[0], p[1]);
            if mag > radius {
                p[0] *= radius / mag;
                p[1] *= radius / mag;
            }
        }
    }
    out
}

/// Per-subcarrier MMSE equalizer `conj(H) Y / (|H|^2 + noise)`, applied
/// cyclically over consecutive OFDM symbols of `H.len()/2` subcarriers.
pub fn equalize_mmse(data: &[f64], response: &[f64], noise_power: f64) -> Vec<f64> {
    let gains = mmse_gains(response, noise_power);
    apply_gains(data, &gains)
}

fn mmse_gains(response: &[f64], noise_power: f64) -> Vec<f64> {
    response
        .chunks(2)
        .flat_map(|h| {
            let d = h[0] * h[0] + h[1] * h[1] + noise_power;
            if d > 0.0 {
                [h[0] / d, -h[1] / d]
            } else {
                [0.0, 0.0]
            }
        })
        .collect()
}

fn apply_gains(data: &[f64], gains: &[f64]) -> Vec<f64> {
    data.chunks(2)
        .zip(gains.chunks(2).cycle())
        .flat_map(|(y, g)| [g[0] * y[0] - g[1] * y[1], g[0] * y[1] + g[1] * y[0]])
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LinkKind {
    /// `y = z + n`; no OFDM machinery.
    Awgn,
    #[default]
    Ofdm,
}

/// Full description of the wireless operator.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OfdmLink {
    pub kind: LinkKind,
    pub n_fft: usize,
    pub n_cp: usize,
    pub n_pilot: usize,
    /// Clipping ratio `c`; `None` means no clipping.
    pub clip_ratio: Option<f64>,
    pub interleaver_seed: u64,
    pub noise_power: f64,
    pub pdp: Vec<f64>,
    /// Permit `n_cp < L - 1` (inter-symbol interference scenario).
    pub allow_isi: bool,
}

impl OfdmLink {
    pub fn awgn(noise_power: f64) -> Self {
        Self {
            kind: LinkKind::Awgn,
            n_fft: 1,
            n_cp: 0,
            n_pilot: 0,
            clip_ratio: None,
            interleaver_seed: 0,
            noise_power,
            pdp: vec![1.0],
            allow_isi: false,
        }
    }

    pub fn ofdm(n_fft: usize, n_cp: usize, pdp: Vec<f64>, noise_power: f64) -> Self {
        Self {
            kind: LinkKind::Ofdm,
            n_fft,
            n_cp,
            n_pilot: 1,
            clip_ratio: None,
            interleaver_seed: 0,
            noise_power,
            pdp,
            allow_isi: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_power >= 0.0) {
            return Err(Error::Parameter("noise power must be non-negative".into()));
        }
        if self.kind == LinkKind::Awgn {
            return Ok(());
        }
        if self.n_fft == 0 {
            return Err(Error::Parameter("n_fft must be positive".into()));
        }
        if self.pdp.is_empty() || self.pdp.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Parameter(
                "power-delay profile must be non-empty and non-negative".into(),
            ));
        }
        let total: f64 = self.pdp.iter().sum();
        if libm::fabs(total - 1.0) > 1e-10 {
            return Err(Error::Parameter(alloc::format!(
                "power-delay profile sums to {total}, expected 1"
            )));
        }
        if self.n_cp + 1 < self.pdp.len() && !self.allow_isi {
            return Err(Error::Parameter(alloc::format!(
                "cyclic prefix {} shorter than delay spread L-1 = {}",
                self.n_cp,
                self.pdp.len() - 1
            )));
        }
        if let Some(c) = self.clip_ratio {
            if !(c > 0.0) {
                return Err(Error::Parameter("clipping ratio must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn taps(&self) -> usize {
        self.pdp.len()
    }

    /// Data OFDM symbols needed for `k` complex latents.
    pub fn data_symbols(&self, k: usize) -> usize {
        k.div_ceil(self.n_fft)
    }

    /// Complex length of the received signal for `k` latents.
    pub fn received_len(&self, k: usize) -> usize {
        match self.kind {
            LinkKind::Awgn => k,
            LinkKind::Ofdm => (self.n_pilot + self.data_symbols(k)) * (self.n_fft + self.n_cp),
        }
    }

    fn clip_radius(&self) -> f64 {
        self.clip_ratio.unwrap_or(f64::INFINITY)
    }

    /// Records the noiseless `W_h(z)` on a tape. `z` holds `k` interleaved
    /// complex latents, `h` the `L` channel taps.
    pub fn transmit_on_tape(&self, tape: &mut Tape, z: Var, h: Var) -> Var {
        match self.kind {
            LinkKind::Awgn => z,
            LinkKind::Ofdm => {
                let k = tape.value(z).len() / 2;
                let n_sym = self.data_symbols(k);
                let front: Rc<dyn LinearMap> = Rc::new(Chain(vec![
                    Rc::new(Permutation::new(k, self.interleaver_seed)),
                    Rc::new(GridMap {
                        k,
                        len: n_sym * self.n_fft,
                    }),
                ]));
                let grid = tape.linear(z, front);
                let full = if self.n_pilot > 0 {
                    let pilot = tape.constant_vec(pilot_grid(self.n_fft, self.n_pilot));
                    tape.concat(&[pilot, grid])
                } else {
                    grid
                };
                let blocks = self.n_pilot + n_sym;
                let modulate: Rc<dyn LinearMap> = Rc::new(Chain(vec![
                    Rc::new(BlockDft {
                        n: self.n_fft,
                        blocks,
                        inverse: true,
                    }),
                    Rc::new(CpInsert {
                        n: self.n_fft,
                        cp: self.n_cp,
                        blocks,
                    }),
                ]));
                let time = tape.linear(full, modulate);
                let clipped = tape.clip_magnitude(time, self.clip_radius());
                tape.causal_conv(clipped, h)
            }
        }
    }

    /// `y = W_h(z) (+ noise)`.
    pub fn transmit(&self, z: &[f64], h: &[f64], noise: Option<&[f64]>) -> Result<Vec<f64>> {
        if z.len() % 2 != 0 {
            return Err(Error::Shape {
                expected: z.len() + 1,
                got: z.len(),
                context: "latent must hold interleaved complex pairs",
            });
        }
        if self.kind == LinkKind::Ofdm {
            check_len(2 * self.taps(), h.len(), "channel taps")?;
        }
        let mut tape = Tape::new();
        let zv = tape.constant(z);
        let hv = tape.constant(h);
        let y = self.transmit_on_tape(&mut tape, zv, hv);
        tape.check()?;
        let mut out = tape.value(y).to_vec();
        if let Some(n) = noise {
            check_len(out.len(), n.len(), "noise")?;
            for (o, e) in out.iter_mut().zip(n) {
                *o += e;
            }
        }
        Ok(out)
    }

    /// Draws `CN(0, noise_power)` noise matching the received length.
    pub fn draw_noise<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<f64> {
        complex_normal_vec(rng, self.received_len(k), self.noise_power)
    }

    /// CP removal and per-symbol DFT: returns `(pilot grid, data grid)`.
    pub fn demodulate(&self, y: &[f64], k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len(2 * self.received_len(k), y.len(), "received signal")?;
        let blocks = self.n_pilot + self.data_symbols(k);
        let mut stripped = Vec::new();
        CpInsert {
            n: self.n_fft,
            cp: self.n_cp,
            blocks,
        }
        .adjoint_remove(y, &mut stripped);
        let grid = block_dft(&stripped, self.n_fft, false);
        let split = 2 * self.n_pilot * self.n_fft;
        Ok((grid[..split].to_vec(), grid[split..].to_vec()))
    }

    /// Least-squares frequency response from the pilot symbols (averaged over
    /// pilot symbols).
    pub fn estimate_ls(&self, pilot_grid: &[f64]) -> Result<Vec<f64>> {
        if self.n_pilot == 0 || pilot_grid.is_empty() {
            return Err(Error::Estimation("no pilot symbols received"));
        }
        let n = self.n_fft;
        let mut h = vec![0.0; 2 * n];
        for block in pilot_grid.chunks(2 * n) {
            for (acc, v) in h.iter_mut().zip(block) {
                // pilot value is 1 + 0j
                *acc += v / self.n_pilot as f64;
            }
        }
        Ok(h)
    }

    /// LMMSE channel estimate from the received frame.
    pub fn estimate_lmmse(&self, y: &[f64], k: usize) -> Result<ChannelEstimate> {
        match self.kind {
            LinkKind::Awgn => Ok(ChannelEstimate {
                taps: vec![1.0, 0.0],
                response: vec![1.0, 0.0],
                ls_response: vec![1.0, 0.0],
            }),
            LinkKind::Ofdm => {
                let (pilots, _) = self.demodulate(y, k)?;
                let ls = self.estimate_ls(&pilots)?;
                let noise = self.noise_power / self.n_pilot as f64;
                let taps = lmmse_taps(&ls, &self.pdp, noise);
                let response = frequency_response(&taps, self.n_fft);
                Ok(ChannelEstimate {
                    taps,
                    response,
                    ls_response: ls,
                })
            }
        }
    }

    /// `W_h^{-1}`: demodulate, equalize with `h`, deinterleave.
    pub fn receiver_inverse(&self, y: &[f64], h: &[f64], k: usize) -> Result<Vec<f64>> {
        check_len(2 * self.received_len(k), y.len(), "received signal")?;
        let map = self.receiver_map(h, k)?;
        let mut out = Vec::new();
        map.apply(y, &mut out);
        Ok(out)
    }

    /// The receiver inverse as a linear map of the received signal, for a
    /// fixed equalizer channel `h`.
    pub fn receiver_map(&self, h: &[f64], k: usize) -> Result<Rc<dyn LinearMap>> {
        match self.kind {
            LinkKind::Awgn => Ok(Rc::new(Identity(2 * k))),
            LinkKind::Ofdm => {
                check_len(2 * self.taps(), h.len(), "equalizer taps")?;
                let n_sym = self.data_symbols(k);
                let blocks = self.n_pilot + n_sym;
                let response = frequency_response(h, self.n_fft);
                Ok(Rc::new(Chain(vec![
                    Rc::new(CpRemove(CpInsert {
                        n: self.n_fft,
                        cp: self.n_cp,
                        blocks,
                    })),
                    Rc::new(BlockDft {
                        n: self.n_fft,
                        blocks,
                        inverse: false,
                    }),
                    Rc::new(DropFront {
                        drop: self.n_pilot * self.n_fft,
                        keep: n_sym * self.n_fft,
                    }),
                    Rc::new(SubcarrierGains {
                        gains: mmse_gains(&response, self.noise_power),
                        len: n_sym * self.n_fft,
                    }),
                    Rc::new(GridUnmap {
                        k,
                        len: n_sym * self.n_fft,
                    }),
                    Rc::new(InversePermutation(Permutation::new(
                        k,
                        self.interleaver_seed,
                    ))),
                ])))
            }
        }
    }
}

/// LMMSE smoothing of an LS response, carried out in the tap domain.
///
/// With `R = F_L diag(pdp) F_L^H` and `F_L^H F_L = n I`, the smoother
/// `R (R + s I)^{-1}` reduces to per-tap shrinkage
/// `h_l = pdp_l / (s + n pdp_l) (F_L^H H_ls)_l`.
pub fn lmmse_taps(ls: &[f64], pdp: &[f64], noise_power: f64) -> Vec<f64> {
    let n = ls.len() / 2;
    let mut taps = vec![0.0; 2 * pdp.len()];
    for (l, p) in pdp.iter().enumerate() {
        let denom = noise_power + n as f64 * p;
        if *p == 0.0 || denom == 0.0 {
            continue;
        }
        let (mut re, mut im) = (0.0, 0.0);
        for f in 0..n {
            let ang = 2.0 * core::f64::consts::PI * ((f * l) % n) as f64 / n as f64;
            let (s, c) = libm::sincos(ang);
            re += ls[2 * f] * c - ls[2 * f + 1] * s;
            im += ls[2 * f] * s + ls[2 * f + 1] * c;
        }
        taps[2 * l] = p / denom * re;
        taps[2 * l + 1] = p / denom * im;
    }
    taps
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    /// LMMSE taps.
    pub taps: Vec<f64>,
    /// Frequency response of the LMMSE taps.
    pub response: Vec<f64>,
    /// Raw least-squares response.
    pub ls_response: Vec<f64>,
}

impl ChannelEstimate {
    pub fn realization(&self) -> ChannelRealization {
        ChannelRealization {
            taps: self.taps.clone(),
            role: ChannelRole::Estimate,
        }
    }
}

fn pilot_grid(n_fft: usize, n_pilot: usize) -> Vec<f64> {
    (0..n_fft * n_pilot).flat_map(|_| [1.0, 0.0]).collect()
}

struct Identity(usize);

impl LinearMap for Identity {
    fn in_len(&self) -> usize {
        self.0
    }
    fn out_len(&self) -> usize {
        self.0
    }
    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        *out = x.to_vec();
    }
    fn adjoint(&self, g: &[f64], out: &mut Vec<f64>) {
        *out = g.to_vec();
    }
}

/// `out[i] = in[perm[i]]` over complex entries.
pub struct Permutation {
    perm: Vec<usize>,
}

impl Permutation {
    pub fn new(len: usize, seed: u64) -> Self {
        Self {
            perm: permutation(len, seed),
        }
    }

    fn gather(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.perm.iter().flat_map(|&j| [x[2 * j], x[2 * j + 1]]));
    }

    fn scatter(&self, g: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.resize(g.len(), 0.0);
        for (i, &j) in self.perm.iter().enumerate() {
            out[2 * j] = g[2 * i];
            out[2 * j + 1] = g[2 * i + 1];
        }
    }
}

impl LinearMap for Permutation {
    fn in_len(&self) -> usize {
        2 * self.perm.len()
    }
    fn out_len(&self) -> usize {
        2 * self.perm.len()
    }
    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        self.gather(x, out)
    }
    fn adjoint(&self, g: &[f64], out: &mut Vec<f64>) {
        self.scatter(g, out)
    }
}

struct InversePermutation(Permutation);

impl LinearMap for InversePermutation {
    fn in_len(&self) -> usize {
        self.0.in_len()
    }
    fn out_len(&self) -> usize {
        self.0.out_len()
    }
    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        self.0.scatter(x, out)
    }
    fn adjoint(&self, g: &[f64], out: &mut Vec<f64>) {
        self.0.gather(g, out)
    }
}

/// Places `k` latents on a zero-padded grid of `len` subcarriers.
struct GridMap {
    k: usize,
    len: usize,
}

impl LinearMap for GridMap {
    fn in_len(&self) -> usize {
        2 * self.k
    }
    fn out_len(&self) -> usize {
        2 * self.len
    }
    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(x);
        out.resize(2 * self.len, 0.0);
    }
    fn adjoint(&self, g: &[f64], out: &mut Vec<f64>) {
        *out = g[..2 * self.k].to_vec();
    }
}

struct GridUnmap {
    k: usize,
    len: usize,
}

impl LinearMap for GridUnmap {
    fn in_len(&self) -> usize {
        2 * self.len
    }
    fn out_len(&self) -> usize {
        2 * self.k
    }
    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        *out = x[..2 * self.k].to_vec();
    }
    fn adjoint(&self, g: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(g);
        out.resize(2 * self.len, 0.0);
    }
}

struct DropFront {
    drop: usize,
    keep: usize,
}

impl LinearMap for DropFront {
    fn in_len(&self) -> usize {
        2 * (self.drop + self.keep)
    }
    fn out_len(&self) -> usize {
        2 * self.keep
    }
    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        *out = x[2 * self.drop..].to_vec();
    }
    fn adjoint(&self, g: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.resize(2 * self.drop, 0.0);
        out.extend_from_slice(g);
    }
}

struct BlockDft {
    n: usize,
    blocks: usize,
    inverse: bool,
}

impl LinearMap for BlockDft {
    fn in_len(&self) -> usize {
        2 * self.n * self.blocks
    }
    fn out_len(&self) -> usize {
        self.in_len()
    }
    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        *out = block_dft(x, self.n, self.inverse);
    }
    fn adjoint(&self, g: &[f64], out: &mut Vec<f64>) {
        // unitary: adjoint is the opposite-direction transform
        *out = block_dft(g, self.n, !self.inverse);
    }
}

struct CpInsert {
    n: usize,
    cp: usize,
    blocks: usize,
}

impl CpInsert {
    /// Drops the prefix of every symbol.
    fn adjoint_remove(&self, y: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let sym = self.n + self.cp;
        for b in 0..self.blocks {
            let start = 2 * (b * sym + self.cp);
            out.extend_from_slice(&y[start..start + 2 * self.n]);
        }
    }
}

impl LinearMap for CpInsert {
    fn in_len(&self) -> usize {
        2 * self.n * self.blocks
    }
    fn out_len(&self) -> usize {
        2 * (self.n + self.cp) * self.blocks
    }
    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for block in x.chunks(2 * self.n) {
            out.extend_from_slice(&block[2 * (self.n - self.cp)..]);
            out.extend_from_slice(block);
        }
    }
    fn adjoint(&self, g: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let sym = 2 * (self.n + self.cp);
        for block in g.chunks(sym) {
            let mut b = block[2 * self.cp..].to_vec();
            for (i, v) in block[..2 * self.cp].iter().enumerate() {
                b[2 * (self.n - self.cp) + i] += v;
            }
            out.extend_from_slice(&b);
        }
    }
}

struct CpRemove(CpInsert);

impl LinearMap for CpRemove {
    fn in_len(&self) -> usize {
        self.0.out_len()
    }
    fn out_len(&self) -> usize {
        self.0.in_len()
    }
    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        self.0.adjoint_remove(x, out)
    }
    fn adjoint(&self, g: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for block in g.chunks(2 * self.0.n) {
            out.resize(out.len() + 2 * self.0.cp, 0.0);
            out.extend_from_slice(block);
        }
    }
}

/// Complex gains applied cyclically per subcarrier.
struct SubcarrierGains {
    gains: Vec<f64>,
    len: usize,
}

impl LinearMap for SubcarrierGains {
    fn in_len(&self) -> usize {
        2 * self.len
    }
    fn out_len(&self) -> usize {
        2 * self.len
    }
    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        *out = apply_gains(x, &self.gains);
    }
    fn adjoint(&self, g: &[f64], out: &mut Vec<f64>) {
        let conj: Vec<f64> = self.gains.chunks(2).flat_map(|c| [c[0], -c[1]]).collect();
        *out = apply_gains(g, &conj);
    }
}
