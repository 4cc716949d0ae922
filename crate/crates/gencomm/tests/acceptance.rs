//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use gencomm::config::{ScenarioConfig, Variant};
use gencomm::runner::{run_prepared, run_scenario, Prepared, RunOptions};
use gencomm::{output, suites};
use gencomm_core::channel::{
    interleave, noise_power_from_csnr, sample_channel, sample_pdp, OfdmLink,
};
use gencomm_core::prior::{Gmm, ScorePrior};
use gencomm_core::rng::{normal_vec, seeded, stream, Substream};
use gencomm_core::sampler::compute_start_timestep;
use gencomm_core::schedule::NoiseSchedule;
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn tweedie_and_score() -> Outcome {
    let s = NoiseSchedule::default_linear();
    let unit = ScorePrior::standard_gaussian(6);
    let mut rng = seeded(101);
    let mut tweedie_err: f64 = 0.0;
    for t in 1..=s.steps() {
        let x = normal_vec(&mut rng, 6);
        let score = unit.score(&s, &x, t).map_err(|e| e.to_string())?;
        let tw = s.tweedie_mean(&x, t, &score).map_err(|e| e.to_string())?;
        for (a, b) in tw.iter().zip(&x) {
            tweedie_err = tweedie_err.max((a - s.abar(t).sqrt() * b).abs());
        }
    }

    let g = Gmm::new(
        vec![0.25, 0.45, 0.3],
        vec![
            vec![1.0, -1.5, 0.3],
            vec![-0.8, 0.6, 1.2],
            vec![0.1, 2.0, -1.0],
        ],
        vec![
            vec![0.3, 0.5, 0.2],
            vec![0.6, 0.15, 0.4],
            vec![0.25, 0.35, 0.7],
        ],
    )
    .map_err(|e| e.to_string())?;
    let mut score_err: f64 = 0.0;
    for _ in 0..100 {
        let t = rng.random_range(1..=s.steps());
        let d = g.diffused(s.abar(t));
        let x: Vec<f64> = normal_vec(&mut rng, 3).iter().map(|v| 1.5 * v).collect();
        let analytic = d.score(&x);
        // five-point stencil
        let step = 1e-3;
        for j in 0..3 {
            let at = |k: f64| {
                let mut p = x.clone();
                p[j] += k * step;
                d.log_density(&p)
            };
            let fd = (at(-2.0) - 8.0 * at(-1.0) + 8.0 * at(1.0) - at(2.0)) / (12.0 * step);
            score_err = score_err.max((analytic[j] - fd).abs() / analytic[j].abs().max(1e-3));
        }
    }
    check(
        tweedie_err <= 1e-12 && score_err <= 1e-5,
        format!("tweedie max err {tweedie_err:.1e}, score max rel err {score_err:.1e}"),
    )
}

fn reverse_chain() -> Outcome {
    let s = NoiseSchedule::default_linear();
    let g = Gmm::new(
        vec![0.35, 0.65],
        vec![vec![1.5, -0.5], vec![-1.0, 1.0]],
        vec![vec![0.3, 0.2], vec![0.4, 0.5]],
    )
    .map_err(|e| e.to_string())?;
    let n = 10_000;
    let mut rng = seeded(202);
    let mut xs: Vec<Vec<f64>> = (0..n).map(|_| normal_vec(&mut rng, 2)).collect();
    for t in (1..=s.steps()).rev() {
        let d = g.diffused(s.abar(t));
        for x in xs.iter_mut() {
            let x0 = s
                .tweedie_mean(x, t, &d.score(x))
                .map_err(|e| e.to_string())?;
            let noise = if t > 1 {
                normal_vec(&mut rng, 2)
            } else {
                vec![0.0; 2]
            };
            *x = s
                .ancestral_step(x, t, &x0, &noise)
                .map_err(|e| e.to_string())?;
        }
    }
    let (mu, cov) = g.moments();
    let mean: Vec<f64> = (0..2)
        .map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n as f64)
        .collect();
    let mut sc = [[0.0; 2]; 2];
    for x in &xs {
        for a in 0..2 {
            for b in 0..2 {
                sc[a][b] += (x[a] - mean[a]) * (x[b] - mean[b]) / (n - 1) as f64;
            }
        }
    }
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mean_err = norm(&[mean[0] - mu[0], mean[1] - mu[1]]) / norm(&mu);
    let diff: Vec<f64> = (0..4)
        .map(|i| sc[i / 2][i % 2] - cov[i / 2][i % 2])
        .collect();
    let flat: Vec<f64> = (0..4).map(|i| cov[i / 2][i % 2]).collect();
    let cov_err = norm(&diff) / norm(&flat);
    check(
        mean_err < 0.05 && cov_err < 0.10,
        format!("mean rel err {mean_err:.4}, covariance rel err {cov_err:.4}"),
    )
}

fn gradient_engine() -> Outcome {
    let setups = suites::grad_setups().map_err(|e| e.to_string())?;
    let setup = setups
        .iter()
        .find(|s| s.name == "l_m gmm linear fading8")
        .ok_or("setup missing")?;
    let case = suites::check_setup(setup, 50, 0).map_err(|e| e.to_string())?;
    check(
        case.max_rel_error < 1e-3 && case.checked > 0,
        format!(
            "{} states, {} coordinates, max rel err {:.2e}",
            case.states, case.checked, case.max_rel_error
        ),
    )
}

/// Direct DFT of the taps, `H[f] = sum_l h_l exp(-2 pi i f l / n)`.
fn dft_response(h: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; 2 * n];
    for f in 0..n {
        for l in 0..h.len() / 2 {
            let ang = -2.0 * std::f64::consts::PI * (f * l) as f64 / n as f64;
            let (s, c) = ang.sin_cos();
            out[2 * f] += h[2 * l] * c - h[2 * l + 1] * s;
            out[2 * f + 1] += h[2 * l] * s + h[2 * l + 1] * c;
        }
    }
    out
}

fn sq_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn ofdm_correctness() -> Outcome {
    let mut rng = seeded(404);

    let mut roundtrip: f64 = 0.0;
    for (n_fft, k) in [(8, 13), (16, 16), (64, 100)] {
        let link = OfdmLink::ofdm(n_fft, 0, vec![1.0], 0.0);
        let z = normal_vec(&mut rng, 2 * k);
        let y = link
            .transmit(&z, &[1.0, 0.0], None)
            .map_err(|e| e.to_string())?;
        let back = link
            .receiver_inverse(&y, &[1.0, 0.0], k)
            .map_err(|e| e.to_string())?;
        roundtrip = roundtrip.max(
            z.iter()
                .zip(&back)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );
    }

    let mut freq: f64 = 0.0;
    for (n_fft, taps, n_cp) in [(16, 8, 7), (64, 8, 10), (32, 4, 3)] {
        let pdp = sample_pdp(taps, 4.0).map_err(|e| e.to_string())?;
        let link = OfdmLink::ofdm(n_fft, n_cp, pdp.clone(), 0.0);
        let h = sample_channel(&pdp, &mut rng);
        let k = 3 * n_fft - 5;
        let z = normal_vec(&mut rng, 2 * k);
        let y = link.transmit(&z, &h, None).map_err(|e| e.to_string())?;
        let (_, data) = link.demodulate(&y, k).map_err(|e| e.to_string())?;
        let hf = dft_response(&h, n_fft);
        let mut grid = interleave(&z, link.interleaver_seed);
        grid.resize(data.len(), 0.0);
        for (i, pair) in grid.chunks(2).enumerate() {
            let f = i % n_fft;
            let (hr, hi) = (hf[2 * f], hf[2 * f + 1]);
            let want = [pair[0] * hr - pair[1] * hi, pair[0] * hi + pair[1] * hr];
            freq = freq.max(
                (data[2 * i] - want[0])
                    .abs()
                    .max((data[2 * i + 1] - want[1]).abs()),
            );
        }
    }

    let noise = noise_power_from_csnr(10.0);
    let symbols = 100_000;
    let n = OfdmLink::awgn(noise).draw_noise(symbols, &mut rng);
    let measured = n.chunks(2).map(|c| c[0] * c[0] + c[1] * c[1]).sum::<f64>() / symbols as f64;
    let csnr_ratio = (1.0 / measured) / 10.0;

    let pdp = sample_pdp(8, 4.0).map_err(|e| e.to_string())?;
    let link = OfdmLink::ofdm(16, 8, pdp.clone(), noise);
    let k = 16;
    let (mut ls, mut lmmse) = (0.0, 0.0);
    for i in 0..1000 {
        let h = sample_channel(&pdp, &mut stream(4, i, Substream::Channel));
        let z = normal_vec(&mut stream(4, i, Substream::Source), 2 * k);
        let nz = link.draw_noise(k, &mut stream(4, i, Substream::Noise));
        let y = link
            .transmit(&z, &h, Some(&nz))
            .map_err(|e| e.to_string())?;
        let est = link.estimate_lmmse(&y, k).map_err(|e| e.to_string())?;
        let truth = dft_response(&h, 16);
        ls += sq_err(&est.ls_response, &truth) / 1000.0;
        lmmse += sq_err(&est.response, &truth) / 1000.0;
    }

    check(
        roundtrip < 1e-9 && freq < 1e-9 && (csnr_ratio - 1.0).abs() < 0.02 && lmmse < ls,
        format!(
            "roundtrip {roundtrip:.1e}, time/freq {freq:.1e}, csnr ratio {csnr_ratio:.4}, \
             estimation mse lmmse {lmmse:.4} < ls {ls:.4}"
        ),
    )
}

fn posterior_oracle() -> Outcome {
    let r = suites::posterior_oracle(1000, 0).map_err(|e| e.to_string())?;
    check(
        r.pass(),
        format!(
            "mean err {:.4} (< 0.05), var err {:.4} (< 0.2)",
            r.mean_error, r.var_error
        ),
    )
}

fn hifi_superiority() -> Outcome {
    let mut c = ScenarioConfig::preset("awgn").map_err(|e| e.to_string())?;
    c.link.csnr_db = vec![0.0];
    c.trials = 200;
    c.reference_samples = 0;
    let mut p = Prepared::new(&c).map_err(|e| e.to_string())?;
    let mut mse = Vec::new();
    let mut steps = 0.0;
    for eta in [0.1, 0.5, 1.0] {
        p.config.sampler.guidance.eta = eta;
        let a = run_prepared(&p, RunOptions::default())
            .map_err(|e| e.to_string())?
            .points[0]
            .aggregate
            .clone();
        mse.push(a.mse);
        steps = a.steps;
    }
    p.config.sampler.variant = Variant::Standard;
    p.config.sampler.guidance.eta = 1.0;
    let standard = run_prepared(&p, RunOptions::default())
        .map_err(|e| e.to_string())?
        .points[0]
        .aggregate
        .mse;
    check(
        mse[2] < standard && steps < 500.0 && mse[0] >= mse[1] && mse[1] >= mse[2],
        format!(
            "hifi mse {:.4} vs standard {standard:.4} with {steps} steps; eta 0.1/0.5/1 mse {:.4}/{:.4}/{:.4}",
            mse[2], mse[0], mse[1], mse[2]
        ),
    )
}

fn robustness_ordering() -> Outcome {
    let mut c = ScenarioConfig::preset("fading_clip").map_err(|e| e.to_string())?;
    c.trials = 200;
    c.link.csnr_db = vec![10.0];
    c.link.clip_ratio = Some(1.2);
    c.codec =
        serde_json::from_str(r#"{"kind":"mlp","k":8,"hidden":64}"#).map_err(|e| e.to_string())?;
    c.sampler.guidance.zeta = 1.0;
    c.sampler.guidance.tau = 2.0;
    let mut p = Prepared::new(&c).map_err(|e| e.to_string())?;
    let mut frechet = Vec::new();
    for v in [Variant::Deterministic, Variant::Hifi] {
        p.config.sampler.variant = v;
        let a = &run_prepared(&p, RunOptions::default())
            .map_err(|e| e.to_string())?
            .points[0]
            .aggregate;
        frechet.push(a.frechet.ok_or("no frechet distance")?);
    }
    check(
        frechet[1] < frechet[0],
        format!(
            "frechet hifi {:.4} < deterministic {:.4}",
            frechet[1], frechet[0]
        ),
    )
}

fn blind_decoding() -> Outcome {
    let mut c = ScenarioConfig::preset("blind").map_err(|e| e.to_string())?;
    c.reference_samples = 0;
    let mut p = Prepared::new(&c).map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    for zeta in [0.3, 0.9] {
        p.config.sampler.guidance.zeta = zeta;
        let a = run_prepared(&p, RunOptions::default())
            .map_err(|e| e.to_string())?
            .points[0]
            .aggregate
            .clone();
        rows.push((a.success_ratio, a.d_h.unwrap_or(f64::INFINITY)));
    }
    check(
        rows[0].0 >= 0.5 && rows[0].1 < 0.5 && rows[1].1 < rows[0].1,
        format!(
            "zeta_x 0.3: success {:.2}, d_h {:.4}; zeta_x 0.9: success {:.2}, d_h {:.4}",
            rows[0].0, rows[0].1, rows[1].0, rows[1].1
        ),
    )
}

/// Independent scan: own schedule product, strict improvement so ties go
/// to the smaller step.
fn brute_force_start(noise: f64, rho: f64, tau: f64, eta: f64) -> usize {
    let steps = 1000usize;
    let target = (1.0 + 1.0 / noise).powf(rho * tau / 2.0);
    let mut abar = 1.0;
    let (mut best, mut gap) = (1usize, f64::INFINITY);
    for t in 1..=steps {
        let beta = 1e-4 + (0.02 - 1e-4) * (t - 1) as f64 / (steps - 1) as f64;
        abar *= 1.0 - beta;
        let g = (target - abar / (1.0 - abar)).abs();
        if g < gap {
            gap = g;
            best = t;
        }
    }
    ((eta * best as f64).round() as usize).clamp(1, steps)
}

fn start_timestep() -> Outcome {
    let s = NoiseSchedule::default_linear();
    let mut rng = seeded(909);
    let mut mismatches = 0;
    for _ in 0..100 {
        let noise = 10f64.powf(rng.random_range(-3.0..2.0));
        let rho = rng.random_range(0.01..1.0);
        let tau = rng.random_range(0.5..40.0);
        let eta = rng.random_range(0.1..2.0);
        if compute_start_timestep(&s, noise, rho, tau, eta)
            != brute_force_start(noise, rho, tau, eta)
        {
            mismatches += 1;
        }
    }
    let limit = [0.4, 1.0, 2.6].iter().all(|&eta| {
        compute_start_timestep(&s, 1e-300, 1.0, 20.0, eta) == (eta.round() as usize).max(1)
    });
    let clamp = compute_start_timestep(&s, 1.0, 0.5, 1.0, 1e6) == s.steps();
    check(
        mismatches == 0 && limit && clamp,
        format!("{mismatches} mismatches of 100, limit {limit}, clamp {clamp}"),
    )
}

fn reproducibility() -> Outcome {
    let mut c = ScenarioConfig::preset("fading_clip").map_err(|e| e.to_string())?;
    c.trials = 20;
    c.reference_samples = 200;
    let body = || -> Result<Vec<u8>, String> {
        let r = run_scenario(&c, RunOptions::default()).map_err(|e| e.to_string())?;
        let mut out = Vec::new();
        output::write_body(&mut out, &r).map_err(|e| e.to_string())?;
        Ok(out)
    };
    let (a, b) = (body()?, body()?);
    check(a == b, format!("{} bytes, identical {}", a.len(), a == b))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("tweedie and score exactness", tweedie_and_score),
        ("unconditional reverse chain", reverse_chain),
        ("gradient engine", gradient_engine),
        ("ofdm correctness", ofdm_correctness),
        ("posterior oracle", posterior_oracle),
        ("hifi superiority and acceleration", hifi_superiority),
        ("robustness ordering", robustness_ordering),
        ("blind decoding", blind_decoding),
        ("start timestep", start_timestep),
        ("reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let outcome = run();
        let secs = t0.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:2} {tag} {name} ({secs:.1} s): {detail}", i + 1);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
