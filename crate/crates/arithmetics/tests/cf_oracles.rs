use proptest::prelude::*;
use quasilab_arithmetics::*;

/// Exact Euclid on a decimal string fraction, used as an independent oracle.
fn euclid_quotients(mut num: u128, mut den: u128, count: usize) -> Vec<u128> {
    let mut out = Vec::new();
    while out.len() < count && num != 0 {
        out.push(den / num);
        let r = den % num;
        den = num;
        num = r;
    }
    out
}

/// (mantissa, 2^k) with x = mantissa / 2^k, computed from the bit pattern.
fn exact_fraction(x: f64) -> (u128, u32) {
    let bits = x.to_bits();
    let e = ((bits >> 52) & 0x7ff) as i32;
    let m = (bits & ((1 << 52) - 1)) | (1 << 52);
    (m as u128, (1075 - e) as u32)
}

/// 2·q·dist(qα) and q·dist(qα) compared against 1/q' by integer arithmetic.
fn approximation_bounds_hold(x: f64, q: u64, q_next: u64) -> bool {
    let (m, k) = exact_fraction(x);
    let den = 1u128 << k;
    let r = (q as u128 * m) % den;
    let near = r.min(den - r);
    let upper = near * q_next as u128 <= den;
    let lower = 2 * near * q_next as u128 >= den;
    upper && lower
}

#[test]
fn pi_fraction_matches_long_division() {
    // 35 digits of π − 3.
    let num: u128 = 14159265358979323846264338327950288;
    let den: u128 = 100000000000000000000000000000000000;
    let oracle = euclid_quotients(num, den, 8);
    assert_eq!(oracle, vec![7, 15, 1, 292, 1, 1, 1, 2]);
    let cf = cf_expand(std::f64::consts::PI - 3.0, 8).unwrap();
    let got: Vec<u128> = cf.partial_quotients.iter().map(|&a| a as u128).collect();
    assert_eq!(got, oracle);
    assert_eq!(cf.convergents[1], (1, 7));
    let q2 = cf.q(2) as f64;
    assert!((std::f64::consts::PI - 3.0 - 1.0 / 7.0).abs() < 1.0 / (7.0 * q2));
}

#[test]
fn golden_certificate_is_exhaustive_minimum() {
    let a = golden_mean();
    let mut oracle = f64::INFINITY;
    for n in 1..=100i64 {
        let x = n as f64 * a;
        let dist = (x - x.round()).abs();
        oracle = oracle.min(dist * (n as f64).powf(1.5));
    }
    let cert = certify_dc(&FrequencyVector::scalar(a), 1.5, 100).unwrap();
    assert!(cert.kappa_prime > 0.0);
    assert!((cert.kappa_prime - oracle).abs() < 1e-15);
}

#[test]
fn two_frequency_certificate_scan() {
    let alpha = vec![2f64.sqrt() - 1.0, 3f64.sqrt() - 1.0];
    let mut oracle = f64::INFINITY;
    for a in -50i64..=50 {
        for b in -50i64..=50 {
            let norm = a.abs() + b.abs();
            if norm == 0 || norm > 50 {
                continue;
            }
            let x = a as f64 * alpha[0] + b as f64 * alpha[1];
            oracle = oracle.min((x - x.round()).abs() * (norm as f64).powf(2.5));
        }
    }
    let cert = certify_dc(&FrequencyVector::new(alpha), 2.5, 50).unwrap();
    assert!(cert.kappa_prime > 0.0);
    assert!((cert.kappa_prime - oracle).abs() <= 1e-12 * oracle.max(1.0));
}

#[test]
fn dc_alpha_at_quarter_golden_matches_scan() {
    let a = golden_mean();
    let phi = a / 4.0;
    for &kappa in &[1e-4, 1e-2, 0.2] {
        let mut oracle = true;
        for m in -200i64..=200 {
            let x = 2.0 * phi - m as f64 * a;
            if (x - x.round()).abs() < kappa / ((m.abs() + 1) as f64).powf(1.5) {
                oracle = false;
            }
        }
        assert_eq!(dc_alpha_check(phi, &FrequencyVector::scalar(a), kappa, 1.5, 200), oracle);
    }
}

proptest! {
    #[test]
    fn convergent_invariants(alpha in 1e-3f64..0.999) {
        let cf = cf_expand(alpha, 40).unwrap();
        let c = &cf.convergents;
        for n in 1..c.len() {
            let det = c[n].0 as i128 * c[n - 1].1 as i128 - c[n - 1].0 as i128 * c[n].1 as i128;
            prop_assert_eq!(det, if n % 2 == 1 { 1 } else { -1 });
            if n >= 2 {
                let a = cf.partial_quotients[n - 1] as u128;
                prop_assert_eq!(c[n].1 as u128, a * c[n - 1].1 as u128 + c[n - 2].1 as u128);
                prop_assert!(c[n].1 > c[n - 1].1);
            }
        }
        // With a_1 = 1 the n = 0 bound degenerates (q_0 = q_1 = 1).
        let first = if cf.partial_quotients[0] == 1 { 1 } else { 0 };
        for n in first..c.len() - 1 {
            if c[n + 1].1 < (1 << 20) {
                prop_assert!(approximation_bounds_hold(alpha, c[n].1, c[n + 1].1));
            }
        }
        for n in 1..c.len().saturating_sub(1) {
            if c[n].1 as f64 * c[n + 1].1 as f64 > 1e10 {
                break;
            }
            let err = alpha - c[n].0 as f64 / c[n].1 as f64;
            prop_assert!(err.abs() < 1.0 / (c[n].1 as f64 * c[n + 1].1 as f64));
            if err != 0.0 {
                prop_assert_eq!(err > 0.0, n % 2 == 0);
            }
        }
    }

    #[test]
    fn torus_dist_symmetries(x in -50.0f64..50.0) {
        let d = torus_dist(x);
        prop_assert!((0.0..=0.5).contains(&d));
        prop_assert!((d - torus_dist(-x)).abs() < 1e-12);
        prop_assert!((d - torus_dist(x + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn certificate_monotone_in_bound(alpha in 0.01f64..0.99, b in 1i64..60) {
        let f = FrequencyVector::scalar(alpha);
        if let (Ok(small), Ok(large)) = (certify_dc(&f, 1.5, b), certify_dc(&f, 1.5, b + 10)) {
            prop_assert!(large.kappa_prime <= small.kappa_prime);
        }
    }
}
