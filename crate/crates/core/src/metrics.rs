//! Fidelity and realism metrics, and closed-form posteriors for linear
//! observation models.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::codec::{Codec, Normalization};
use crate::error::{check_len, Error, Result};
use crate::prior::{Gmm, ScorePrior};

/// Reconstructions at or above this PSNR count as successful.
pub const SUCCESS_PSNR_DB: f64 = 15.0;

pub fn mse(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    check_len(x.len(), x_hat.len(), "mse operands")?;
    if x.is_empty() {
        return Err(Error::Parameter("mse of empty vectors".into()));
    }
    Ok(x.iter()
        .zip(x_hat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64)
}

/// `10 log10(peak^2 / MSE)`; a perfect reconstruction gives `+inf`.
pub fn psnr(x: &[f64], x_hat: &[f64], peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::Parameter("psnr peak must be positive".into()));
    }
    Ok(psnr_from_mse(mse(x, x_hat)?, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * libm::log10(peak * peak / mse)
    }
}

pub fn mse_from_psnr(psnr_db: f64, peak: f64) -> f64 {
    peak * peak / libm::pow(10.0, psnr_db / 10.0)
}

/// `||h_hat - h*||^2` over interleaved complex taps.
pub fn channel_error(h_hat: &[f64], h_true: &[f64]) -> Result<f64> {
    check_len(h_true.len(), h_hat.len(), "channel taps")?;
    Ok(h_hat
        .iter()
        .zip(h_true)
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// 99.9th percentile of `|x_i|` over `samples` prior draws.
pub fn default_peak<R: Rng + ?Sized>(
    prior: &ScorePrior,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut amps: Vec<f64> = prior
        .sample(samples.max(1), rng)?
        .into_iter()
        .flatten()
        .map(libm::fabs)
        .collect();
    amps.sort_by(f64::total_cmp);
    let idx = ((amps.len() as f64 * 0.999) as usize).min(amps.len() - 1);
    Ok(amps[idx])
}

/// Sample mean and unbiased covariance.
pub fn fit_gaussian(samples: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = samples.first().map_or(0, Vec::len);
    if samples.len() < d + 1 || d == 0 {
        return Err(Error::DegenerateSamples {
            needed: d + 1,
            got: samples.len(),
        });
    }
    let n = samples.len() as f64;
    let mut mean = DVector::zeros(d);
    for s in samples {
        check_len(d, s.len(), "sample dimension")?;
        mean += DVector::from_column_slice(s);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        let c = DVector::from_column_slice(s) - &mean;
        cov += &c * c.transpose();
    }
    cov /= n - 1.0;
    Ok((mean, cov))
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| libm::sqrt(v.max(1e-12)));
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussians fitted to two sample sets.
pub fn frechet_gaussian(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (ma, ca) = fit_gaussian(a)?;
    let (mb, cb) = fit_gaussian(b)?;
    check_len(ma.len(), mb.len(), "sample dimension")?;
    Ok(frechet_from_moments(&ma, &ca, &mb, &cb))
}

pub fn frechet_from_moments(
    ma: &DVector<f64>,
    ca: &DMatrix<f64>,
    mb: &DVector<f64>,
    cb: &DMatrix<f64>,
) -> f64 {
    let ra = psd_sqrt(ca);
    let cross = psd_sqrt(&(&ra * cb * &ra));
    let d = (ma - mb).norm_squared() + (ca + cb - cross * 2.0).trace();
    d.max(0.0)
}

/// Gaussian mixture posterior with full component covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMixture {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

impl PosteriorMixture {
    pub fn mean(&self) -> DVector<f64> {
        self.weights
            .iter()
            .zip(&self.means)
            .fold(DVector::zeros(self.means[0].len()), |acc, (w, m)| {
                acc + m * *w
            })
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let mu = self.mean();
        let d = mu.len();
        let mut c = DMatrix::zeros(d, d);
        for ((w, m), s) in self.weights.iter().zip(&self.means).zip(&self.covs) {
            let dm = m - &mu;
            c += (s + &dm * dm.transpose()) * *w;
        }
        c
    }
}

/// Exact posterior of `x` given the received latent `y = s (A x + b) + n`,
/// `n ~ CN(0, noise_power)`, for a linear codec over an identity channel.
///
/// Fixed normalization makes the model exactly linear; per-frame
/// normalization is approximated by its mean gain.
pub fn analytic_posterior(
    codec: &Codec,
    prior: &ScorePrior,
    noise_power: f64,
    y: &[f64],
) -> Result<PosteriorMixture> {
    let gmm = prior.as_gmm().ok_or(Error::Unsupported(
        "analytic posterior needs a Gaussian-family prior",
    ))?;
    let (a, b) = codec.linear_parts()?;
    check_len(codec.m, gmm.dim(), "prior dimension")?;
    check_len(2 * codec.k, y.len(), "received latent")?;
    if !(noise_power > 0.0) {
        return Err(Error::Parameter(
            "posterior needs positive noise power".into(),
        ));
    }
    let s = match codec.normalization {
        Normalization::Fixed { scale } => scale,
        Normalization::PerFrame => {
            let (mean, cov) = gmm.moments();
            let cov = DMatrix::from_fn(codec.m, codec.m, |r, c| cov[r][c]);
            codec.nominal_scale(&mean, &cov)?
        }
    };
    let g = a * s;
    let yv = DVector::from_column_slice(y) - b * s;
    conjugate_mixture(&gmm, &g, noise_power / 2.0, &yv)
}

/// Posterior of a diagonal mixture prior under `y = G x + n`,
/// `n ~ N(0, var I)`.
pub fn conjugate_mixture(
    gmm: &Gmm,
    g: &DMatrix<f64>,
    var: f64,
    y: &DVector<f64>,
) -> Result<PosteriorMixture> {
    let n = g.nrows();
    let gtg = g.transpose() * g / var;
    let mut log_w = Vec::with_capacity(gmm.components());
    let mut means = Vec::new();
    let mut covs = Vec::new();
    for ((w, mu), v) in gmm.weights.iter().zip(&gmm.means).zip(&gmm.vars) {
        let mu = DVector::from_column_slice(mu);
        let prior_prec =
            DMatrix::from_diagonal(&DVector::from_iterator(v.len(), v.iter().map(|x| 1.0 / x)));
        let cov = (&prior_prec + &gtg)
            .cholesky()
            .ok_or(Error::Singular("posterior precision"))?
            .inverse();
        let mean = &cov * (&prior_prec * &mu + g.transpose() * y / var);
        let vdiag = DMatrix::from_diagonal(&DVector::from_column_slice(v));
        let marg = g * vdiag * g.transpose() + DMatrix::identity(n, n) * var;
        let chol = marg
            .cholesky()
            .ok_or(Error::Singular("marginal covariance"))?;
        let r = y - g * &mu;
        let quad = r.dot(&chol.solve(&r));
        let logdet: f64 = chol
            .l()
            .diagonal()
            .iter()
            .map(|d| 2.0 * libm::log(*d))
            .sum();
        log_w.push(libm::log(*w) - 0.5 * (quad + logdet));
        means.push(mean);
        covs.push(cov);
    }
    let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = log_w.iter().map(|l| libm::exp(l - top)).collect();
    let total: f64 = raw.iter().sum();
    Ok(PosteriorMixture {
        weights: raw.into_iter().map(|v| v / total).collect(),
        means,
        covs,
    })
}

/// Per-trial outcome.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrialReport {
    pub mse: f64,
    pub psnr_db: f64,
    pub l_m_final: f64,
    pub d_h: Option<f64>,
    pub success: bool,
}

impl TrialReport {
    pub fn new(
        x: &[f64],
        x_hat: &[f64],
        peak: f64,
        l_m_final: f64,
        d_h: Option<f64>,
    ) -> Result<Self> {
        let mse = mse(x, x_hat)?;
        if !(peak > 0.0) {
            return Err(Error::Parameter("psnr peak must be positive".into()));
        }
        let psnr_db = psnr_from_mse(mse, peak);
        Ok(Self {
            mse,
            psnr_db,
            l_m_final,
            d_h,
            success: psnr_db >= SUCCESS_PSNR_DB,
        })
    }
}

pub fn success_ratio(reports: &[TrialReport]) -> f64 {
    if reports.is_empty() {
        return 0.0;
    }
    reports.iter().filter(|r| r.success).count() as f64 / reports.len() as f64
}

/// Mean of `values`, or `NaN` when empty.
pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Per-coordinate sample variance (unbiased).
pub fn coordinate_variance(samples: &[Vec<f64>]) -> Vec<f64> {
    let d = samples.first().map_or(0, Vec::len);
    let n = samples.len() as f64;
    let mut m = vec![0.0; d];
    for s in samples {
        for (a, v) in m.iter_mut().zip(s) {
            *a += v / n;
        }
    }
    let mut var = vec![0.0; d];
    for s in samples {
        for ((a, v), mu) in var.iter_mut().zip(s).zip(&m) {
            *a += (v - mu) * (v - mu) / (n - 1.0);
        }
    }
    var
}
