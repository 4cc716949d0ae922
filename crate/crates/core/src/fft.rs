//! Unitary DFT on interleaved complex vectors: iterative radix-2 for powers
//! of two, direct evaluation otherwise.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

/// In-place unitary DFT (`inverse` selects the `+j` kernel) of one block of
/// `x.len() / 2` complex samples.
pub fn dft_in_place(x: &mut [f64], inverse: bool) {
    let n = x.len() / 2;
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        radix2(x, inverse);
    } else {
        let out = direct(x, inverse);
        x.copy_from_slice(&out);
    }
    let s = 1.0 / libm::sqrt(n as f64);
    for v in x.iter_mut() {
        *v *= s;
    }
}

fn direct(x: &[f64], inverse: bool) -> Vec<f64> {
    let n = x.len() / 2;
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut out = vec![0.0; 2 * n];
    for k in 0..n {
        let (mut re, mut im) = (0.0, 0.0);
        for j in 0..n {
            let ang = sign * 2.0 * PI * ((k * j) % n) as f64 / n as f64;
            let (s, c) = libm::sincos(ang);
            re += x[2 * j] * c - x[2 * j + 1] * s;
            im += x[2 * j] * s + x[2 * j + 1] * c;
        }
        out[2 * k] = re;
        out[2 * k + 1] = im;
    }
    out
}

fn radix2(x: &mut [f64], inverse: bool) {
    let n = x.len() / 2;
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            x.swap(2 * i, 2 * j);
            x.swap(2 * i + 1, 2 * j + 1);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        for k in 0..half {
            let (s, c) = libm::sincos(sign * 2.0 * PI * k as f64 / len as f64);
            let mut start = 0;
            while start < n {
                let a = start + k;
                let b = a + half;
                let (br, bi) = (x[2 * b], x[2 * b + 1]);
                let (tr, ti) = (br * c - bi * s, br * s + bi * c);
                let (ar, ai) = (x[2 * a], x[2 * a + 1]);
                x[2 * a] = ar + tr;
                x[2 * a + 1] = ai + ti;
                x[2 * b] = ar - tr;
                x[2 * b + 1] = ai - ti;
                start += len;
            }
        }
        len <<= 1;
    }
}

/// Unitary DFT applied independently to consecutive blocks of `n` samples.
pub fn block_dft(x: &[f64], n: usize, inverse: bool) -> Vec<f64> {
    let mut out = x.to_vec();
    for block in out.chunks_mut(2 * n) {
        dft_in_place(block, inverse);
    }
    out
}

/// Unnormalized frequency response `H_f = sum_l h_l e^{-j 2 pi f l / n}` of
/// taps zero-padded to `n`.
pub fn frequency_response(taps: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; 2 * n];
    for f in 0..n {
        let (mut re, mut im) = (0.0, 0.0);
        for (l, h) in taps.chunks(2).enumerate() {
            let ang = -2.0 * PI * ((f * l) % n) as f64 / n as f64;
            let (s, c) = libm::sincos(ang);
            re += h[0] * c - h[1] * s;
            im += h[0] * s + h[1] * c;
        }
        out[2 * f] = re;
        out[2 * f + 1] = im;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, seeded};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn radix2_matches_direct() {
        let mut rng = seeded(1);
        for n in [2usize, 4, 8, 64, 256] {
            let x = normal_vec(&mut rng, 2 * n);
            for inv in [false, true] {
                let mut a = x.clone();
                radix2(&mut a, inv);
                let b = direct(&x, inv);
                for (u, v) in a.iter().zip(&b) {
                    assert_relative_eq!(*u, *v, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn delayed_impulse_response() {
        let h = frequency_response(&[0.0, 0.0, 1.0, 0.0], 8);
        for f in 0..8 {
            let ang = -2.0 * PI * f as f64 / 8.0;
            assert_relative_eq!(h[2 * f], ang.cos(), epsilon = 1e-15);
            assert_relative_eq!(h[2 * f + 1], ang.sin(), epsilon = 1e-15);
        }
    }

    proptest! {
        #[test]
        fn roundtrip_and_adjoint(n in 1usize..40, seed in 0u64..1000) {
            let mut rng = seeded(seed);
            let a = normal_vec(&mut rng, 2 * n);
            let b = normal_vec(&mut rng, 2 * n);
            let fa = block_dft(&a, n, false);
            let back = block_dft(&fa, n, true);
            for (u, v) in a.iter().zip(&back) {
                prop_assert!((u - v).abs() < 1e-10);
            }
            // <F a, b> = <a, F^H b> with F^H the inverse for a unitary transform
            let lhs: f64 = fa.iter().zip(&b).map(|(x, y)| x * y).sum();
            let fb = block_dft(&b, n, true);
            let rhs: f64 = a.iter().zip(&fb).map(|(x, y)| x * y).sum();
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }
    }
}
