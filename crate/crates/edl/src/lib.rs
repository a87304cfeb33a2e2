//! Exponential dynamical localization in expectation.
//!
//! The supremum over time of |⟨δ_k, e^{−itH}δ_ℓ⟩| is replaced by its
//! dominator T(k,ℓ) = Σ_m |u_m(k)||u_m(ℓ)|, averaged over a uniform phase
//! grid. The decay rate γ̂ is the least-squares slope of −ln K(n) against |n|
//! on a window of the box. An empirical lower envelope from sampled times is
//! reported next to it.

use num_complex::Complex64;
use quasilab_arithmetics::FrequencyVector;
use quasilab_eigensolver::{eigen_all_graded, EigenDecomposition, EigenError};
use quasilab_operators::{build_amo, build_md_longrange, BoxIndex, OperatorError, TruncatedOperator, DEFAULT_SITE_CAP};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

mod criterion;
pub use criterion::*;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EdlError {
    #[error("decomposition has {have} eigenpairs, box has {need} sites")]
    IncompleteDecomposition { have: usize, need: usize },
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, EdlError>;

fn l1(n: &[i64]) -> usize {
    n.iter().map(|v| v.unsigned_abs() as usize).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicalKernel {
    pub boxed: BoxIndex,
    /// Row-major, T[k·n + ℓ].
    pub t: Vec<f64>,
    pub theta: Vec<f64>,
    pub coupling: Option<f64>,
    pub alpha: Vec<f64>,
}

impl DynamicalKernel {
    pub fn size(&self) -> usize {
        self.boxed.len()
    }

    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.t[k * self.size() + l]
    }

    pub fn column(&self, l: usize) -> Vec<f64> {
        (0..self.size()).map(|k| self.get(k, l)).collect()
    }
}

fn check_complete(dec: &EigenDecomposition, boxed: &BoxIndex) -> Result<()> {
    if dec.len() != boxed.len() || dec.vectors.iter().any(|v| v.len() != boxed.len()) {
        return Err(EdlError::IncompleteDecomposition { have: dec.len(), need: boxed.len() });
    }
    Ok(())
}

pub fn dynamical_kernel(dec: &EigenDecomposition, boxed: &BoxIndex) -> Result<DynamicalKernel> {
    check_complete(dec, boxed)?;
    let n = boxed.len();
    let abs: Vec<Vec<f64>> = dec.vectors.iter().map(|v| v.iter().map(|x| x.abs()).collect()).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|k| {
            (0..n)
                .map(|l| {
                    if l < k {
                        return 0.0;
                    }
                    abs.iter().map(|a| a[k] * a[l]).sum()
                })
                .collect()
        })
        .collect();
    let mut t = vec![0.0; n * n];
    for k in 0..n {
        for l in k..n {
            t[k * n + l] = rows[k][l];
            t[l * n + k] = rows[k][l];
        }
    }
    let (theta, coupling, alpha) = match &dec.source {
        Some(m) => (m.theta.clone(), Some(m.coupling), m.alpha.clone()),
        None => (Vec::new(), None, Vec::new()),
    };
    Ok(DynamicalKernel { boxed: boxed.clone(), t, theta, coupling, alpha })
}

/// T(·, ℓ) without forming the whole matrix.
pub fn kernel_column(dec: &EigenDecomposition, boxed: &BoxIndex, l: usize) -> Result<Vec<f64>> {
    check_complete(dec, boxed)?;
    let mut col = vec![0.0; boxed.len()];
    for v in &dec.vectors {
        let w = v[l].abs();
        for (c, x) in col.iter_mut().zip(v) {
            *c += x.abs() * w;
        }
    }
    Ok(col)
}

/// ⟨δ_k, e^{−itH}δ_ℓ⟩ = Σ_m e^{−itE_m} u_m(k) u_m(ℓ).
pub fn evolve_overlap(dec: &EigenDecomposition, k: usize, l: usize, t: f64) -> Complex64 {
    dec.values.iter().zip(&dec.vectors).map(|(&e, v)| Complex64::from_polar(v[k] * v[l], -t * e)).sum()
}

/// e^{−itH}δ_ℓ.
pub fn evolve_column(dec: &EigenDecomposition, l: usize, t: f64) -> Vec<Complex64> {
    let n = dec.vectors.first().map_or(0, |v| v.len());
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for (&e, v) in dec.values.iter().zip(&dec.vectors) {
        let w = Complex64::from_polar(v[l], -t * e);
        for (o, x) in out.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    out
}

/// Operator families the profile can sweep over θ.
#[derive(Debug, Clone, PartialEq)]
pub enum EdlFamily {
    /// Δ + 2λ cos 2π(θ + nα) on Z.
    Amo { lambda: f64, alpha: f64 },
    /// Δ + 2λ cos 2π(θ + ⟨n,α⟩) on Z^d.
    MultiDim { lambda: f64, alpha: FrequencyVector },
}

impl EdlFamily {
    pub fn dim(&self) -> usize {
        match self {
            EdlFamily::Amo { .. } => 1,
            EdlFamily::MultiDim { alpha, .. } => alpha.dim(),
        }
    }

    pub fn build(&self, theta: f64, radius: usize) -> Result<TruncatedOperator> {
        Ok(match self {
            EdlFamily::Amo { lambda, alpha } => build_amo(*lambda, *alpha, theta, radius)?,
            EdlFamily::MultiDim { lambda, alpha } => build_md_longrange(*lambda, alpha, theta, radius, DEFAULT_SITE_CAP)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdlOptions {
    pub grid: usize,
    pub radius: usize,
    /// Inclusive range of |n| used in the fit.
    pub window: (usize, usize),
    pub seed: u64,
    pub bootstrap: usize,
    /// Times for the empirical envelope max_t |⟨δ_n, e^{−itH}δ_0⟩|.
    pub times: Vec<f64>,
}

impl EdlOptions {
    /// Window (min(10, N/4), N/2), 200 bootstrap resamples, 16 log-spaced
    /// times in [0.1, 10⁴].
    pub fn new(grid: usize, radius: usize, seed: u64) -> Self {
        EdlOptions {
            grid,
            radius,
            window: ((radius / 4).min(10), radius / 2),
            seed,
            bootstrap: 200,
            times: (0..16).map(|i| 10f64.powf(-1.0 + 5.0 * i as f64 / 15.0)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdlProfile {
    pub dim: usize,
    pub radius: usize,
    pub phases: Vec<f64>,
    /// K(n) = mean over phases of T_θ(n, 0), in box order.
    pub k: Vec<f64>,
    /// Phase mean of max over sampled t of |⟨δ_n, e^{−itH}δ_0⟩|.
    pub envelope: Vec<f64>,
    pub window: (usize, usize),
    pub gamma_hat: f64,
    pub intercept: f64,
    pub gamma_ci: (f64, f64),
    /// Same fit applied to the envelope.
    pub envelope_gamma: f64,
    pub samples: usize,
}

impl EdlProfile {
    /// Columns n_1..n_d, |n|, K, envelope, fit.
    pub fn to_csv(&self) -> String {
        let b = BoxIndex::new(self.dim, self.radius);
        let mut out = String::new();
        for i in 0..self.dim {
            out.push_str(&format!("n{},", i + 1));
        }
        out.push_str("dist,K,envelope,fit\n");
        for (i, n) in b.sites().enumerate() {
            for c in &n {
                out.push_str(&format!("{c},"));
            }
            let r = l1(&n);
            let fit = (-self.intercept - self.gamma_hat * r as f64).exp();
            out.push_str(&format!("{r},{:e},{:e},{:e}\n", self.k[i], self.envelope[i], fit));
        }
        out
    }
}

/// Least-squares slope and intercept of −ln y against |n| on the window.
/// Returns (γ, c) with −ln y ≈ c + γ|n|, plus the sample count.
pub fn window_fit(y: &[f64], boxed: &BoxIndex, window: (usize, usize)) -> Option<(f64, f64, usize)> {
    let pts: Vec<(f64, f64)> = boxed
        .sites()
        .zip(y)
        .filter_map(|(n, &v)| {
            let r = l1(&n);
            (r >= window.0 && r <= window.1 && v > 0.0).then(|| (r as f64, -v.ln()))
        })
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let g = sxy / sxx;
    Some((g, my - g * mx, pts.len()))
}

/// Ordered pairwise sum of equal-length columns; the order is fixed by the
/// slice, not by thread scheduling.
fn pairwise_columns(cols: &[Vec<f64>]) -> Vec<f64> {
    match cols.len() {
        0 => Vec::new(),
        1 => cols[0].clone(),
        n => {
            let (a, b) = cols.split_at(n / 2);
            let (x, y) = (pairwise_columns(a), pairwise_columns(b));
            x.iter().zip(&y).map(|(p, q)| p + q).collect()
        }
    }
}

fn mean_columns(cols: &[Vec<f64>]) -> Vec<f64> {
    let n = cols.len() as f64;
    pairwise_columns(cols).into_iter().map(|v| v / n).collect()
}

/// Phases (k + u)/G, k = 0..G, with one seeded offset u ∈ [0, 1).
pub fn phase_offsets(grid: usize, seed: u64) -> Vec<f64> {
    let u: f64 = ChaCha8Rng::seed_from_u64(seed).gen();
    (0..grid).map(|k| (k as f64 + u) / grid as f64).collect()
}

pub fn edl_profile(family: &EdlFamily, opts: &EdlOptions) -> Result<EdlProfile> {
    edl_profile_with(family.dim(), &|theta| family.build(theta, opts.radius), opts)
}

/// Profile for an arbitrary phase-indexed builder on the box of radius
/// `opts.radius` in dimension `dim`.
pub fn edl_profile_with(dim: usize, builder: &(dyn Fn(f64) -> Result<TruncatedOperator> + Sync), opts: &EdlOptions) -> Result<EdlProfile> {
    if opts.grid < 10 {
        return Err(EdlError::InvalidArgument(format!("phase grid {} < 10", opts.grid)));
    }
    if opts.window.0 >= opts.window.1 || opts.window.1 > opts.radius {
        return Err(EdlError::InvalidArgument(format!("window {:?} outside radius {}", opts.window, opts.radius)));
    }
    let boxed = BoxIndex::new(dim, opts.radius);
    let origin = boxed.flatten(&vec![0; dim]).expect("origin in box");
    let phases = phase_offsets(opts.grid, opts.seed);
    let per_phase: Vec<(Vec<f64>, Vec<f64>)> = phases
        .par_iter()
        .map(|&theta| {
            let h = builder(theta)?;
            let dec = eigen_all_graded(&h)?;
            let col = kernel_column(&dec, &boxed, origin)?;
            let mut env = vec![0.0f64; boxed.len()];
            for &t in &opts.times {
                for (e, z) in env.iter_mut().zip(evolve_column(&dec, origin, t)) {
                    *e = e.max(z.norm());
                }
            }
            Ok((col, env))
        })
        .collect::<Result<_>>()?;
    let (cols, envs): (Vec<Vec<f64>>, Vec<Vec<f64>>) = per_phase.into_iter().unzip();
    let k = mean_columns(&cols);
    let envelope = mean_columns(&envs);
    let (gamma_hat, intercept, samples) =
        window_fit(&k, &boxed, opts.window).ok_or_else(|| EdlError::InvalidArgument("fit window has fewer than two usable sites".into()))?;
    let envelope_gamma = window_fit(&envelope, &boxed, opts.window).map_or(f64::NAN, |f| f.0);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut boot: Vec<f64> = (0..opts.bootstrap)
        .map(|_| {
            let pick: Vec<Vec<f64>> = (0..cols.len()).map(|_| cols[rng.gen_range(0..cols.len())].clone()).collect();
            window_fit(&mean_columns(&pick), &boxed, opts.window).map_or(f64::NAN, |f| f.0)
        })
        .filter(|g| g.is_finite())
        .collect();
    boot.sort_by(f64::total_cmp);
    let gamma_ci = if boot.is_empty() {
        (gamma_hat, gamma_hat)
    } else {
        let at = |q: f64| boot[((q * (boot.len() - 1) as f64).round() as usize).min(boot.len() - 1)];
        (at(0.025), at(0.975))
    };
    Ok(EdlProfile {
        dim,
        radius: opts.radius,
        phases,
        k,
        envelope,
        window: opts.window,
        gamma_hat,
        intercept,
        gamma_ci,
        envelope_gamma,
        samples,
    })
}
