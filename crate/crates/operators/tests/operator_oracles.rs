use proptest::prelude::*;
use quasilab_arithmetics::{golden_mean, FrequencyVector};
use quasilab_cocycle::{ScalarPoly, C64};
use quasilab_operators::*;
use std::f64::consts::PI;

/// Cyclic Jacobi eigenvalues: an oracle independent of the solver crate.
fn jacobi_eigenvalues(m: &SymMatrix) -> Vec<f64> {
    let n = m.size();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut v: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    v.sort_by(f64::total_cmp);
    v
}

fn free_spectrum(n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (1..=n).map(|k| 2.0 * (k as f64 * PI / (n as f64 + 1.0)).cos()).collect();
    v.sort_by(f64::total_cmp);
    v
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
}

#[test]
fn amo_free_and_shifted() {
    let h = build_amo(0.0, golden_mean(), 0.3, 5).unwrap();
    assert!(close(&jacobi_eigenvalues(&h.matrix), &free_spectrum(11), 1e-10));
    let h = build_amo(1.0, 0.0, 0.0, 5).unwrap();
    let shifted: Vec<f64> = free_spectrum(11).iter().map(|v| v + 2.0).collect();
    assert!(close(&jacobi_eigenvalues(&h.matrix), &shifted, 1e-10));
}

#[test]
fn amo_row_sum_bound() {
    let h = build_amo(2.0, golden_mean(), 0.1, 40).unwrap();
    assert!(h.matrix.row_sum_norm() <= 6.0 + 1e-12);
}

#[test]
fn longrange_cosine_is_amo() {
    let a = FrequencyVector::scalar(golden_mean());
    let lr = build_longrange(&ScalarPoly::cosine(1, &[1], 1.0), 1.5, &a, 0.2, 8, None).unwrap();
    let amo = build_amo(1.5, golden_mean(), 0.2, 8).unwrap();
    assert_eq!(lr.matrix, amo.matrix);
    assert!(lr.tridiagonal.is_some());
}

#[test]
fn longrange_single_second_mode() {
    let a = FrequencyVector::scalar(golden_mean());
    let v = ScalarPoly::cosine(1, &[2], 0.5);
    let h = build_longrange(&v, 0.7, &a, 0.0, 6, None).unwrap();
    for i in 0..h.size() {
        for j in 0..h.size() {
            let expect = if i.abs_diff(j) == 2 { 0.5 } else if i == j { h.matrix.get(i, i) } else { 0.0 };
            assert_eq!(h.matrix.get(i, j), expect);
        }
    }
    assert_eq!(h.meta.hop_range, 2);
}

#[test]
fn longrange_gershgorin_at_large_coupling() {
    let a = FrequencyVector::scalar(golden_mean());
    let v = ScalarPoly::from_modes(1, &[(vec![1], C64::new(0.3, 0.0)), (vec![-1], C64::new(0.3, 0.0)), (vec![3], C64::new(0.1, 0.0)), (vec![-3], C64::new(0.1, 0.0))]);
    let h = build_longrange(&v, 50.0, &a, 0.13, 10, None).unwrap();
    let radius = 0.8;
    let diag = h.diagonal();
    for e in jacobi_eigenvalues(&h.matrix) {
        assert!(diag.iter().any(|d| (e - d).abs() <= radius + 1e-9));
    }
}

#[test]
fn md_schrodinger_cases() {
    let a1 = FrequencyVector::scalar(golden_mean());
    let s = build_md_schrodinger(0.5, &a1, &[0.2], 7).unwrap();
    let amo = build_amo(0.5, golden_mean(), 0.2, 7).unwrap();
    assert_eq!(s.matrix, amo.matrix);
    let a2 = FrequencyVector::new(vec![2f64.sqrt() - 1.0, 3f64.sqrt() - 1.0]);
    let free = build_md_schrodinger(0.0, &a2, &[0.1, 0.4], 4).unwrap();
    assert!(close(&jacobi_eigenvalues(&free.matrix), &free_spectrum(9), 1e-10));
    let s2 = build_md_schrodinger(0.3, &a2, &[0.1, 0.4], 20).unwrap();
    assert!(s2.diagonal().iter().all(|d| d.abs() <= 4.0 * 0.3 + 1e-12));
}

#[test]
fn md_longrange_cases() {
    let a2 = FrequencyVector::new(vec![2f64.sqrt() - 1.0, 3f64.sqrt() - 1.0]);
    let free = build_md_longrange(0.0, &a2, 0.0, 2, DEFAULT_SITE_CAP).unwrap();
    let one = free_spectrum(5);
    let mut tensor: Vec<f64> = one.iter().flat_map(|x| one.iter().map(move |y| x + y)).collect();
    tensor.sort_by(f64::total_cmp);
    assert!(close(&jacobi_eigenvalues(&free.matrix), &tensor, 1e-10));
    let a1 = FrequencyVector::scalar(golden_mean());
    let d1 = build_md_longrange(1.3, &a1, 0.4, 6, DEFAULT_SITE_CAP).unwrap();
    assert_eq!(d1.matrix, build_amo(1.3, golden_mean(), 0.4, 6).unwrap().matrix);
    // N = 1, d = 2, λ = 1: brute-force 9×9 assembly
    let h = build_md_longrange(1.0, &a2, 0.0, 1, DEFAULT_SITE_CAP).unwrap();
    let b = BoxIndex::new(2, 1);
    let mut brute = SymMatrix::zeros(9);
    for (i, n) in b.sites().enumerate() {
        for (j, m) in b.sites().enumerate() {
            let dist: i64 = n.iter().zip(&m).map(|(x, y)| (x - y).abs()).sum();
            if i == j {
                brute.set_sym(i, i, 2.0 * (2.0 * PI * (n[0] as f64 * a2.components[0] + n[1] as f64 * a2.components[1])).cos());
            } else if dist == 1 {
                brute.set_sym(i, j, 1.0);
            }
        }
    }
    assert!(close(&jacobi_eigenvalues(&h.matrix), &jacobi_eigenvalues(&brute), 1e-10));
}

#[test]
fn csv_dump_lists_upper_triangle() {
    let h = build_amo(1.0, golden_mean(), 0.0, 1).unwrap();
    let csv = h.to_csv();
    // header, column line, 3 diagonal + 2 hopping entries
    assert_eq!(csv.lines().count(), 7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn covariance_under_phase_shift(lambda in 0.0f64..4.0, theta in 0.0f64..1.0, n in 3usize..20) {
        let a = golden_mean();
        let h0 = build_amo(lambda, a, theta, n).unwrap();
        let h1 = build_amo(lambda, a, theta + a, n).unwrap();
        // H_{θ+α} at sites (i, j) equals H_θ at (i+1, j+1) on the overlap
        let size = h0.size();
        for i in 0..size - 1 {
            for j in 0..size - 1 {
                prop_assert!((h1.matrix.get(i, j) - h0.matrix.get(i + 1, j + 1)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eigenvalues_within_gershgorin(lambda in 0.0f64..5.0, theta in 0.0f64..1.0) {
        let a2 = FrequencyVector::new(vec![2f64.sqrt() - 1.0, 3f64.sqrt() - 1.0]);
        let h = build_md_longrange(lambda, &a2, theta, 2, DEFAULT_SITE_CAP).unwrap();
        prop_assert!(h.matrix.is_symmetric());
        let (lo, hi) = h.matrix.gershgorin();
        for e in jacobi_eigenvalues(&h.matrix) {
            prop_assert!(e >= lo - 1e-9 && e <= hi + 1e-9);
        }
    }

    #[test]
    fn box_flatten_bijective(d in 1usize..4, r in 0usize..4) {
        let b = BoxIndex::new(d, r);
        for i in 0..b.len() {
            prop_assert_eq!(b.flatten(&b.site(i)), Some(i));
        }
    }
}
