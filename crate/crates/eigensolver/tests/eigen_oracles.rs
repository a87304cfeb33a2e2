use proptest::prelude::*;
use quasilab_arithmetics::golden_mean;
use quasilab_eigensolver::*;
use quasilab_operators::{build_amo, SymMatrix, TruncatedOperator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn dense_from(m: SymMatrix) -> TruncatedOperator {
    let n = m.size();
    let mut h = build_amo(0.0, 0.0, 0.0, n.div_ceil(2)).unwrap();
    h.matrix = m;
    h.tridiagonal = None;
    h
}

fn random_symmetric(n: usize, seed: u64) -> SymMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = SymMatrix::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            m.set_sym(i, j, rng.gen_range(-1.0..1.0));
        }
    }
    m
}

/// Characteristic-polynomial sign changes: count of eigenvalues below x,
/// evaluated with the three-term determinant recurrence (rescaled).
fn charpoly_count(d: &[f64], e: &[f64], x: f64) -> usize {
    let (mut p_prev, mut p) = (1.0f64, d[0] - x);
    let mut count = usize::from(p < 0.0);
    for i in 1..d.len() {
        let next = (d[i] - x) * p - e[i - 1] * e[i - 1] * p_prev;
        let s = next.abs().max(p.abs()).max(1e-300);
        p_prev = p / s;
        p = next / s;
        // a sign change between consecutive leading minors marks an eigenvalue below x
        if (p < 0.0) != (p_prev < 0.0) || p == 0.0 {
            count += 1;
        }
    }
    count
}

fn charpoly_eigenvalues(d: &[f64], e: &[f64]) -> Vec<f64> {
    let bound = d.iter().map(|v| v.abs()).fold(0.0, f64::max) + 2.0 * e.iter().map(|v| v.abs()).fold(0.0, f64::max) + 1.0;
    (0..d.len())
        .map(|k| {
            let (mut a, mut b) = (-bound, bound);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if charpoly_count(d, e, mid) > k {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            0.5 * (a + b)
        })
        .collect()
}

#[test]
fn free_laplacian_closed_form() {
    let h = build_amo(0.0, golden_mean(), 0.0, 10).unwrap();
    let ed = eigen_all(&h).unwrap();
    let n = h.size();
    let mut oracle: Vec<f64> = (1..=n).map(|k| 2.0 * (k as f64 * PI / (n as f64 + 1.0)).cos()).collect();
    oracle.sort_by(f64::total_cmp);
    for (a, b) in ed.values.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn amo_matches_charpoly_bisection() {
    let h = build_amo(2.0, golden_mean(), 0.1, 30).unwrap();
    let (d, e) = h.tridiagonal.clone().unwrap();
    let oracle = charpoly_eigenvalues(&d, &e);
    let ed = eigen_all(&h).unwrap();
    for (a, b) in ed.values.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
}

#[test]
fn dense_reconstruction() {
    let m = random_symmetric(50, 4);
    let t = tridiagonalize(&dense_from(m.clone()));
    let n = 50;
    // Q T Qᵀ
    let mut qt = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let mut s = t.diag[c] * t.q[r * n + c];
            if c > 0 {
                s += t.off[c - 1] * t.q[r * n + c - 1];
            }
            if c + 1 < n {
                s += t.off[c] * t.q[r * n + c + 1];
            }
            qt[r * n + c] = s;
        }
    }
    let mut worst: f64 = 0.0;
    let mut orth: f64 = 0.0;
    for r in 0..n {
        for c in 0..n {
            let v: f64 = (0..n).map(|k| qt[r * n + k] * t.q[c * n + k]).sum();
            worst = worst.max((v - m.get(r, c)).abs());
            let g: f64 = (0..n).map(|k| t.q[k * n + r] * t.q[k * n + c]).sum();
            orth = orth.max((g - if r == c { 1.0 } else { 0.0 }).abs());
        }
    }
    assert!(worst < 1e-10, "{worst}");
    assert!(orth < 1e-12, "{orth}");
}

#[test]
fn tridiagonal_input_keeps_identity_accumulator() {
    let h = build_amo(1.0, golden_mean(), 0.2, 4).unwrap();
    let t = tridiagonalize(&h);
    let n = h.size();
    for r in 0..n {
        for c in 0..n {
            assert_eq!(t.q[r * n + c], if r == c { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn window_cases() {
    let h = build_amo(2.0, golden_mean(), 0.1, 25).unwrap();
    let all = eigen_all(&h).unwrap();
    let full = eigen_window(&h, -10.0, 10.0).unwrap();
    assert_eq!(full.len(), all.len());
    for (a, b) in full.values.iter().zip(&all.values) {
        assert!((a - b).abs() < 1e-10);
    }
    assert!(eigen_window(&h, 20.0, 21.0).unwrap().is_empty());
    let w = eigen_window(&h, -0.5, 0.5).unwrap();
    let restricted: Vec<f64> = all.values.iter().cloned().filter(|v| (-0.5..0.5).contains(v)).collect();
    assert_eq!(w.len(), restricted.len());
    for (a, b) in w.values.iter().zip(&restricted) {
        assert!((a - b).abs() < 1e-10);
    }
    assert!(w.orthonormality_defect() < 1e-10);
    for (m, v) in w.vectors.iter().enumerate() {
        let k = all.values.iter().position(|x| (x - w.values[m]).abs() < 1e-9).unwrap();
        let overlap: f64 = v.iter().zip(&all.vectors[k]).map(|(a, b)| a * b).sum();
        assert!((overlap.abs() - 1.0).abs() < 1e-8);
    }
}

#[test]
fn degenerate_cluster_is_deterministic() {
    // Two decoupled identical blocks: every eigenvalue is doubled.
    let mut m = SymMatrix::zeros(6);
    for b in [0usize, 3] {
        m.set_sym(b, b + 1, 1.0);
        m.set_sym(b + 1, b + 2, 1.0);
        m.set_sym(b, b, 0.5);
    }
    let h = dense_from(m);
    let a = eigen_all(&h).unwrap();
    let b = eigen_all(&h).unwrap();
    assert_eq!(a, b);
    assert!(a.orthonormality_defect() < 1e-10);
}

#[test]
fn exports() {
    let h = build_amo(1.0, golden_mean(), 0.0, 2).unwrap();
    let ed = eigen_all(&h).unwrap();
    assert_eq!(ed.values_csv().lines().count(), 6);
    assert_eq!(ed.vectors_bytes().len(), 16 + 8 * 25);
}

#[test]
fn spectrum_shift_invariance_localized() {
    // Empirical: sorted spectra at θ and θ + α differ only through boundary states.
    let a = golden_mean();
    let e1 = eigen_all(&build_amo(3.0, a, 0.2, 60).unwrap()).unwrap();
    let e2 = eigen_all(&build_amo(3.0, a, 0.2 + a, 60).unwrap()).unwrap();
    let hausdorff = |x: &[f64], y: &[f64]| {
        x.iter().map(|p| y.iter().map(|q| (p - q).abs()).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max)
    };
    let bulk = |ed: &EigenDecomposition| -> Vec<f64> {
        // drop states with most of their weight within 10 sites of the wall
        ed.values
            .iter()
            .zip(&ed.vectors)
            .filter(|(_, v)| v[..10].iter().chain(&v[v.len() - 10..]).map(|x| x * x).sum::<f64>() < 1e-6)
            .map(|(e, _)| *e)
            .collect()
    };
    let (b1, b2) = (bulk(&e1), bulk(&e2));
    assert!(hausdorff(&b1, &e2.values) <= 1e-3);
    assert!(hausdorff(&b2, &e1.values) <= 1e-3);
}

#[test]
fn rotation_number_matches_eigenvalue_count() {
    // ρ(E) = (1 − N(E))/2 with N the integrated density of states.
    let (lambda, a) = (4.0, golden_mean());
    let h = build_amo(lambda, a, 0.0, 400).unwrap();
    let (d, e) = h.tridiagonal.clone().unwrap();
    let ed = eigen_all(&h).unwrap();
    let mid = 0.5 * (ed.values[0] + ed.values[ed.len() - 1]);
    let ids = sturm_count(&d, &e, mid) as f64 / h.size() as f64;
    let rho = quasilab_cocycle::rotation_number(&quasilab_cocycle::Cocycle::almost_mathieu(a, lambda, mid), 200_000).unwrap();
    assert!((rho - (1.0 - ids) / 2.0).abs() < 1e-2, "rho = {rho}, N = {ids}");
}

#[test]
fn graded_vectors_resolve_deep_tails() {
    let h = build_amo(4.0, golden_mean(), 0.013, 80).unwrap();
    let (d, e) = h.tridiagonal.clone().unwrap();
    let ed = eigen_all_graded(&h).unwrap();
    assert!(ed.orthonormality_defect() < 1e-10);
    assert!(ed.residual_bound < 1e-10 * ed.norm);
    let n = d.len();
    // componentwise: each row of (H − E)u is small relative to the entries it touches
    let mut worst: f64 = 0.0;
    for (&x, u) in ed.values.iter().zip(&ed.vectors) {
        for i in 0..n {
            let mut r = (d[i] - x) * u[i];
            let mut scale = (d[i] - x).abs() * u[i].abs();
            if i > 0 {
                r += e[i - 1] * u[i - 1];
                scale += u[i - 1].abs();
            }
            if i + 1 < n {
                r += e[i] * u[i + 1];
                scale += u[i + 1].abs();
            }
            if scale > 0.0 && scale > 1e-280 {
                worst = worst.max(r.abs() / scale);
            }
        }
    }
    assert!(worst < 1e-6, "{worst}");
    // a state localized near the centre reaches far below the rounding floor at the wall
    let m = (0..ed.len()).max_by(|&a, &b| ed.vectors[a][80].abs().total_cmp(&ed.vectors[b][80].abs())).unwrap();
    assert!(ed.vectors[m][0].abs() < 1e-30);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dense_invariants(n in 2usize..40, seed in 0u64..1000) {
        let m = random_symmetric(n, seed);
        let trace = m.trace();
        let h = dense_from(m);
        let ed = eigen_all(&h).unwrap();
        prop_assert!(ed.orthonormality_defect() < 1e-10);
        prop_assert!(ed.residual_bound <= 1e-10 * ed.norm.max(1.0));
        prop_assert!((kahan_sum(ed.values.iter().cloned()) - trace).abs() < 1e-8 * n as f64);
        prop_assert!(ed.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn sturm_count_matches_spectrum(lambda in 0.0f64..4.0, theta in 0.0f64..1.0, x in -10.0f64..10.0) {
        let h = build_amo(lambda, golden_mean(), theta, 20).unwrap();
        let ed = eigen_all(&h).unwrap();
        let (d, e) = h.tridiagonal.clone().unwrap();
        let below = ed.values.iter().filter(|&&v| v < x).count();
        prop_assert_eq!(sturm_count(&d, &e, x), below);
    }

    #[test]
    fn amo_even_in_theta(lambda in 0.1f64..4.0, theta in 0.0f64..1.0) {
        let a = eigen_all(&build_amo(lambda, golden_mean(), theta, 15).unwrap()).unwrap();
        let b = eigen_all(&build_amo(lambda, golden_mean(), -theta, 15).unwrap()).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }
}
