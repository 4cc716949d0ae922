use gencomm_core::channel::{
    clip_papr, deinterleave, interleave, sample_channel, sample_pdp, OfdmLink,
};
use gencomm_core::codec::{Codec, Normalization};
use gencomm_core::metrics::{frechet_gaussian, mse_from_psnr, psnr_from_mse};
use gencomm_core::prior::{channel_score, ChannelScoreForm, Gmm, ScorePrior};
use gencomm_core::rng::{normal_vec, seeded, stream, Substream};
use gencomm_core::sampler::compute_start_timestep;
use gencomm_core::schedule::NoiseSchedule;
use proptest::prelude::*;

fn schedule() -> &'static NoiseSchedule {
    use std::sync::OnceLock;
    static S: OnceLock<NoiseSchedule> = OnceLock::new();
    S.get_or_init(NoiseSchedule::default_linear)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interleaver_is_a_bijection(len in 0usize..300, seed in any::<u64>()) {
        let z = normal_vec(&mut seeded(seed ^ 1), 2 * len);
        let shuffled = interleave(&z, seed);
        prop_assert_eq!(deinterleave(&shuffled, seed), z.clone());
        let mut a = shuffled.clone();
        let mut b = z;
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
        prop_assert_eq!(interleave(&shuffled, seed).len(), shuffled.len());
    }

    #[test]
    fn pdp_is_normalized(taps in 1usize..32, decay in 0.05f64..100.0) {
        let p = sample_pdp(taps, decay).unwrap();
        prop_assert_eq!(p.len(), taps);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        for w in p.windows(2) {
            prop_assert!((w[1] / w[0] - (-1.0 / decay).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn clipping_bounds_magnitude_and_keeps_phase(seed in any::<u64>(), ratio in 0.1f64..3.0) {
        let s = normal_vec(&mut seeded(seed), 64);
        let c = clip_papr(&s, ratio, 1.0);
        for (a, b) in s.chunks(2).zip(c.chunks(2)) {
            let (ma, mb) = (a[0].hypot(a[1]), b[0].hypot(b[1]));
            prop_assert!(mb <= ratio + 1e-12);
            if ma <= ratio {
                prop_assert_eq!(a, b);
            } else {
                prop_assert!((a[0] * b[1] - a[1] * b[0]).abs() < 1e-12);
                prop_assert!(a[0] * b[0] + a[1] * b[1] > 0.0);
            }
        }
        prop_assert_eq!(clip_papr(&s, f64::INFINITY, 1.0), s);
    }

    #[test]
    fn per_frame_power_contract(seed in any::<u64>(), m in 2usize..24, k in 1usize..12) {
        let mut rng = seeded(seed);
        let codec = Codec::linear_orthonormal(m, k, Normalization::PerFrame, &mut rng).unwrap();
        let mlp = Codec::mlp(m, k, 8, Normalization::PerFrame, &mut rng).unwrap();
        for c in [&codec, &mlp] {
            let x: Vec<f64> = normal_vec(&mut rng, m).iter().map(|v| 3.0 * v).collect();
            let z = c.encode(&x).unwrap();
            prop_assert!(!z.degenerate_power);
            let p = z.z.iter().map(|v| v * v).sum::<f64>() / k as f64;
            prop_assert!((p - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn noiseless_identity_roundtrip(seed in any::<u64>(), k in 1usize..40, n_fft in 1usize..10) {
        let mut rng = seeded(seed);
        let link = OfdmLink::ofdm(n_fft, 0, vec![1.0], 0.0);
        let z = normal_vec(&mut rng, 2 * k);
        let y = link.transmit(&z, &[1.0, 0.0], None).unwrap();
        let back = link.receiver_inverse(&y, &[1.0, 0.0], k).unwrap();
        for (a, b) in z.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn exact_channel_score_agrees_with_prior_variance_at_unit_variance(
        seed in any::<u64>(), taps in 1usize..8, t in 1usize..=1000,
    ) {
        let h = normal_vec(&mut seeded(seed), 2 * taps);
        let v = vec![1.0; taps];
        let exact = channel_score(&v, schedule(), &h, t, ChannelScoreForm::Exact).unwrap();
        let literal = channel_score(&v, schedule(), &h, t, ChannelScoreForm::PriorVariance).unwrap();
        for (a, b) in exact.iter().zip(&literal) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn unit_gaussian_tweedie_is_scaled_input(seed in any::<u64>(), t in 1usize..=1000) {
        let s = schedule();
        let x = normal_vec(&mut seeded(seed), 5);
        let prior = ScorePrior::standard_gaussian(5);
        let score = prior.score(s, &x, t).unwrap();
        let tw = s.tweedie_mean(&x, t, &score).unwrap();
        for (a, b) in tw.iter().zip(&x) {
            prop_assert!((a - s.abar(t).sqrt() * b).abs() < 1e-12);
        }
    }

    #[test]
    fn diffused_mixture_recovers_base_near_zero_noise(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let means = vec![normal_vec(&mut rng, 3), normal_vec(&mut rng, 3)];
        let g = Gmm::new(vec![0.4, 0.6], means, vec![vec![0.5; 3], vec![0.2; 3]]).unwrap();
        let d = g.diffused(1.0);
        prop_assert_eq!(&d.means, &g.means);
        prop_assert_eq!(&d.vars, &g.vars);
        let d = g.diffused(0.3);
        prop_assert!(d.vars.iter().flatten().all(|v| *v > 0.0));
    }

    #[test]
    fn psnr_mse_roundtrip(m in 1e-9f64..1e3, peak in 1e-3f64..1e3) {
        let back = mse_from_psnr(psnr_from_mse(m, peak), peak);
        prop_assert!((back / m - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frechet_is_symmetric_and_vanishes_on_identical_sets(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let a: Vec<Vec<f64>> = (0..40).map(|_| normal_vec(&mut rng, 3)).collect();
        let b: Vec<Vec<f64>> = (0..50).map(|_| normal_vec(&mut rng, 3).iter().map(|v| 2.0 * v + 1.0).collect()).collect();
        let ab = frechet_gaussian(&a, &b).unwrap();
        let ba = frechet_gaussian(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-8 * ab.max(1.0));
        prop_assert!(frechet_gaussian(&a, &a).unwrap().abs() < 1e-6);
    }

    #[test]
    fn start_timestep_stays_in_range(
        noise in 1e-6f64..1e3, rho in 0.01f64..2.0, tau in 0.1f64..50.0, eta in 0.01f64..5.0,
    ) {
        let ts = compute_start_timestep(schedule(), noise, rho, tau, eta);
        prop_assert!((1..=1000).contains(&ts));
    }

    #[test]
    fn zero_variance_taps_are_zero(seed in any::<u64>(), taps in 1usize..6) {
        let pdp = sample_pdp(taps, 2.0).unwrap();
        let mut zeroed = pdp.clone();
        zeroed[0] = 0.0;
        let h = sample_channel(&zeroed, &mut stream(seed, 0, Substream::Channel));
        prop_assert_eq!(h.len(), 2 * taps);
        prop_assert_eq!(&h[..2], &[0.0, 0.0]);
    }
}
