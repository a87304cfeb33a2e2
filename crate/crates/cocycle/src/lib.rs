//! Quasi-periodic SL(2) cocycles over torus translations.
//!
//! Transfer products, Lyapunov exponents with bootstrap error bars, fibered
//! rotation numbers, degrees of matrix-valued maps and numerical probes for
//! uniform hyperbolicity and subcriticality.

pub mod mat2;
pub mod trigpoly;

pub use mat2::{CMat2, Mat2, C64};
pub use trigpoly::{Coef, MatPoly, ScalarPoly, TrigPoly};

use quasilab_arithmetics::FrequencyVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CocycleError {
    #[error("vector norm left the floating range at step {step}")]
    OverflowGuard { step: usize },
    #[error("map is not homotopic to the identity (degree {degree:?})")]
    NotHomotopicToIdentity { degree: Vec<i64> },
    #[error("angle step {step:.3} rad exceeds pi/2 on axis {axis}")]
    GridTooCoarse { axis: usize, step: f64 },
    #[error("map is singular at a grid point")]
    Singular,
    #[error("map is not real-valued (imaginary part {0:e})")]
    NotReal(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, CocycleError>;

#[derive(Debug, Clone)]
pub enum CocycleMap {
    Constant(Mat2),
    Poly(MatPoly),
    /// S_E^V = [[E − V, −1], [1, 0]].
    Schrodinger { energy: f64, potential: ScalarPoly },
}

#[derive(Debug, Clone)]
pub struct Cocycle {
    pub frequency: FrequencyVector,
    pub map: CocycleMap,
}

/// Precomputed Fourier terms, frequencies already divided by the lattice denominator.
#[derive(Debug, Clone)]
struct Terms<T> {
    freqs: Vec<Vec<f64>>,
    coefs: Vec<T>,
}

impl<T: Coef> Terms<T> {
    fn new(p: &TrigPoly<T>) -> Self {
        let d = p.dim();
        let (mut freqs, mut coefs) = (Vec::new(), Vec::new());
        for (m, c) in p.terms() {
            freqs.push(m[..d].iter().map(|&v| v as f64 / p.denom()).collect());
            coefs.push(c);
        }
        Terms { freqs, coefs }
    }

    fn eval(&self, x: &[f64], eps: f64) -> T {
        let mut acc = T::zero();
        for (f, c) in self.freqs.iter().zip(&self.coefs) {
            let mut phase = 0.0;
            let mut sum = 0.0;
            for (fi, xi) in f.iter().zip(x) {
                phase += fi * xi;
                sum += fi;
            }
            let w = if eps == 0.0 {
                C64::from_polar(1.0, 2.0 * PI * phase)
            } else {
                C64::from_polar((-2.0 * PI * sum * eps).exp(), 2.0 * PI * phase)
            };
            acc = acc + c.scale(w);
        }
        acc
    }
}

/// Fast pointwise evaluator of a cocycle map on the strip θ + iε.
#[derive(Debug, Clone)]
enum Evaluator {
    Constant(CMat2),
    Poly(Terms<CMat2>),
    Schrodinger(f64, Terms<C64>),
}

impl Evaluator {
    fn new(map: &CocycleMap) -> Self {
        match map {
            CocycleMap::Constant(a) => Evaluator::Constant(a.complex()),
            CocycleMap::Poly(p) => Evaluator::Poly(Terms::new(p)),
            CocycleMap::Schrodinger { energy, potential } => Evaluator::Schrodinger(*energy, Terms::new(potential)),
        }
    }

    fn matrix(&self, x: &[f64], eps: f64) -> CMat2 {
        match self {
            Evaluator::Constant(a) => *a,
            Evaluator::Poly(t) => t.eval(x, eps),
            Evaluator::Schrodinger(e, t) => {
                let v = t.eval(x, eps);
                let one = C64::new(1.0, 0.0);
                CMat2::new(C64::new(*e, 0.0) - v, -one, one, C64::new(0.0, 0.0))
            }
        }
    }

    fn apply(&self, x: &[f64], eps: f64, v: [C64; 2]) -> [C64; 2] {
        match self {
            Evaluator::Schrodinger(e, t) => {
                let pot = t.eval(x, eps);
                [(C64::new(*e, 0.0) - pot) * v[0] - v[1], v[0]]
            }
            _ => self.matrix(x, eps).apply(v),
        }
    }
}

fn advance(x: &mut [f64], alpha: &[f64], sign: f64) {
    for (xi, ai) in x.iter_mut().zip(alpha) {
        *xi = (*xi + sign * ai).rem_euclid(1.0);
    }
}

fn vnorm(v: &[C64; 2]) -> f64 {
    (v[0].norm_sqr() + v[1].norm_sqr()).sqrt()
}

impl Cocycle {
    pub fn new(frequency: FrequencyVector, map: CocycleMap) -> Self {
        Cocycle { frequency, map }
    }

    pub fn constant(frequency: FrequencyVector, a: Mat2) -> Self {
        Self::new(frequency, CocycleMap::Constant(a))
    }

    pub fn schrodinger(frequency: FrequencyVector, energy: f64, potential: ScalarPoly) -> Self {
        Self::new(frequency, CocycleMap::Schrodinger { energy, potential })
    }

    /// S_E^{2λ cos(2πθ)} over a scalar frequency.
    pub fn almost_mathieu(alpha: f64, lambda: f64, energy: f64) -> Self {
        Self::schrodinger(FrequencyVector::scalar(alpha), energy, ScalarPoly::cosine(1, &[1], lambda))
    }

    pub fn dim(&self) -> usize {
        self.frequency.dim()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.frequency.components
    }

    /// A(x + iε).
    pub fn eval_complex(&self, x: &[f64], eps: f64) -> CMat2 {
        Evaluator::new(&self.map).matrix(x, eps)
    }

    pub fn eval(&self, x: &[f64]) -> CMat2 {
        self.eval_complex(x, 0.0)
    }

    /// Largest |det A − 1| on a uniform grid of `per_axis`^d points.
    pub fn det_defect(&self, per_axis: usize) -> f64 {
        let ev = Evaluator::new(&self.map);
        trigpoly::grid_points(self.dim(), per_axis, false)
            .iter()
            .map(|x| (ev.matrix(x, 0.0).det() - C64::new(1.0, 0.0)).norm())
            .fold(0.0, f64::max)
    }

    /// The same cocycle with A replaced by A(· + iε).
    pub fn with_strip_shift(&self, eps: f64) -> ShiftedCocycle<'_> {
        ShiftedCocycle { base: self, eps }
    }
}

/// A cocycle evaluated on a horizontal line of the complex strip.
#[derive(Debug, Clone, Copy)]
pub struct ShiftedCocycle<'a> {
    pub base: &'a Cocycle,
    pub eps: f64,
}

/// 𝒜_n(x): A(x+(n−1)α)⋯A(x) for n > 0, identity for n = 0, and
/// A(x+nα)⁻¹⋯A(x−α)⁻¹ for n < 0.
pub fn transfer(c: &Cocycle, x: &[f64], n: i64) -> CMat2 {
    let ev = Evaluator::new(&c.map);
    let alpha = c.alpha();
    let mut pos = x.to_vec();
    let mut acc = CMat2::IDENTITY;
    if n >= 0 {
        for _ in 0..n {
            acc = ev.matrix(&pos, 0.0) * acc;
            advance(&mut pos, alpha, 1.0);
        }
    } else {
        for _ in 0..(-n) {
            advance(&mut pos, alpha, -1.0);
            acc = ev.matrix(&pos, 0.0).inv() * acc;
        }
    }
    acc
}

/// Sampling phases on T^d: a uniform grid in d = 1, the R_d Kronecker
/// sequence otherwise, both shifted by one seeded random offset.
pub fn phase_grid(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
    if dim == 1 {
        return (0..count).map(|k| vec![(offset[0] + k as f64 / count as f64).rem_euclid(1.0)]).collect();
    }
    // φ_d: positive root of x^{d+1} = x + 1.
    let mut phi = 2.0f64;
    for _ in 0..100 {
        phi = (1.0 + phi).powf(1.0 / (dim as f64 + 1.0));
    }
    let gen: Vec<f64> = (1..=dim).map(|i| phi.powi(-(i as i32))).collect();
    (0..count)
        .map(|k| (0..dim).map(|i| (offset[i] + k as f64 * gen[i]).rem_euclid(1.0)).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovEstimate {
    pub value: f64,
    /// Bootstrap standard error over phase samples.
    pub std_error: f64,
    pub per_phase: Vec<f64>,
    pub iterates: usize,
}

/// Finite-time growth rate from one phase after a burn-in of iterates/10 steps.
fn growth_rate(ev: &Evaluator, alpha: &[f64], x0: &[f64], eps: f64, iterates: usize) -> Result<f64> {
    let burn = (iterates / 10).max(100);
    let mut x = x0.to_vec();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut v = [C64::new(s, 0.0), C64::new(s, 0.0)];
    let mut acc = 0.0;
    let mut comp = 0.0;
    for step in 0..burn + iterates {
        v = ev.apply(&x, eps, v);
        let n = vnorm(&v);
        if !n.is_finite() || n == 0.0 {
            return Err(CocycleError::OverflowGuard { step });
        }
        v = [v[0] / n, v[1] / n];
        if step >= burn {
            let y = n.ln() - comp;
            let t = acc + y;
            comp = (t - acc) - y;
            acc = t;
        }
        advance(&mut x, alpha, 1.0);
    }
    Ok(acc / iterates as f64)
}

fn bootstrap_se(values: &[f64], seed: u64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_b007);
    let n = values.len();
    let means: Vec<f64> = (0..200)
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    let m = means.iter().sum::<f64>() / means.len() as f64;
    (means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (means.len() - 1) as f64).sqrt()
}

fn lyapunov_on_line(c: &Cocycle, eps: f64, iterates: usize, phase_samples: usize, seed: u64) -> Result<LyapunovEstimate> {
    if iterates < 1000 {
        return Err(CocycleError::InvalidArgument(format!("iterates = {iterates} < 1000")));
    }
    if phase_samples == 0 {
        return Err(CocycleError::InvalidArgument("phase_samples must be positive".into()));
    }
    let ev = Evaluator::new(&c.map);
    let phases = phase_grid(c.dim(), phase_samples, seed);
    let per_phase: Vec<f64> = phases
        .par_iter()
        .map(|x| growth_rate(&ev, c.alpha(), x, eps, iterates))
        .collect::<Result<Vec<f64>>>()?;
    let value = pairwise_sum(&per_phase) / per_phase.len() as f64;
    Ok(LyapunovEstimate { value: value.max(0.0), std_error: bootstrap_se(&per_phase, seed), per_phase, iterates })
}

/// Deterministic pairwise summation.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

/// Birkhoff estimate of L(α, A) averaged over sampled phases.
pub fn lyapunov(c: &Cocycle, iterates: usize, phase_samples: usize, seed: u64) -> Result<LyapunovEstimate> {
    lyapunov_on_line(c, 0.0, iterates, phase_samples, seed)
}

/// L(α, A(· + iε)) for each ε.
pub fn acceleration_probe(
    c: &Cocycle,
    epsilons: &[f64],
    iterates: usize,
    phase_samples: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    epsilons
        .iter()
        .map(|&e| lyapunov_on_line(c, e, iterates, phase_samples, seed).map(|l| (e, l.value)))
        .collect()
}

/// Polar angle of A in revolutions, on the branch (center − 1/2, center + 1/2].
fn polar_angle_near(a: &Mat2, center: f64) -> f64 {
    let p = a.polar_angle();
    p - (p - center - 0.5).ceil()
}

/// Fibered rotation number in [0, 1), from the orbit of x = 0.
///
/// Each step splits A = R_ψ P with P symmetric positive; P turns any vector
/// by less than a quarter turn, so the lift increment is 2πψ plus the exact
/// angle between v and Pv.
pub fn rotation_number(c: &Cocycle, iterates: usize) -> Result<f64> {
    rotation_lift(c, iterates, false)
}

/// Rotation number from the same lift, averaged with the smooth weight
/// w(t) = exp(−1/(t(1−t))) over t = k/n. For cocycles whose projective
/// dynamics is quasi-periodic (reducible, elliptic) the weighted average
/// converges faster than any power of n, against O(1/n) for the plain one.
pub fn rotation_number_weighted(c: &Cocycle, iterates: usize) -> Result<f64> {
    rotation_lift(c, iterates, true)
}

fn rotation_lift(c: &Cocycle, iterates: usize, weighted: bool) -> Result<f64> {
    if iterates < 1000 {
        return Err(CocycleError::InvalidArgument(format!("iterates = {iterates} < 1000")));
    }
    let center = match &c.map {
        CocycleMap::Poly(p) => {
            let deg = degree_probe(p, 256)?;
            if deg.iter().any(|&k| k != 0) {
                return Err(CocycleError::NotHomotopicToIdentity { degree: deg });
            }
            p.mean().re().polar_angle()
        }
        CocycleMap::Constant(a) => a.polar_angle(),
        CocycleMap::Schrodinger { .. } => 0.25,
    };
    let ev = Evaluator::new(&c.map);
    let mut x = vec![0.0; c.dim()];
    let mut v = [1.0f64, 0.0];
    let mut lift = 0.0;
    let mut comp = 0.0;
    let mut wsum = 0.0;
    for k in 0..iterates {
        let weight = if weighted {
            let t = (k as f64 + 0.5) / iterates as f64;
            (-1.0 / (t * (1.0 - t))).exp()
        } else {
            1.0
        };
        wsum += weight;
        let m = ev.matrix(&x, 0.0);
        let im = m.max_abs_im();
        if im > 1e-9 {
            return Err(CocycleError::NotReal(im));
        }
        let a = m.re();
        let psi = polar_angle_near(&a, center);
        let p = Mat2::rotation(-psi) * a;
        let w = p.apply(v);
        let turn = (v[0] * w[1] - v[1] * w[0]).atan2(v[0] * w[0] + v[1] * w[1]);
        let y = weight * (2.0 * PI * psi + turn) - comp;
        let t = lift + y;
        comp = (t - lift) - y;
        lift = t;
        let r = Mat2::rotation(psi).apply(w);
        let n = (r[0] * r[0] + r[1] * r[1]).sqrt();
        if !n.is_finite() || n == 0.0 {
            return Err(CocycleError::OverflowGuard { step: 0 });
        }
        v = [r[0] / n, r[1] / n];
        advance(&mut x, c.alpha(), 1.0);
    }
    let r = (lift / (2.0 * PI * wsum)).rem_euclid(1.0);
    // a lift just below an integer is the integer
    Ok(if r > 1.0 - 1e-12 { 0.0 } else { r })
}

/// Degree of a real 2×2 matrix-valued map: winding of a column angle along
/// each coordinate circle, in units of π.
pub fn degree_probe(b: &MatPoly, grid: usize) -> Result<Vec<i64>> {
    let d = b.dim();
    if grid < 4 {
        return Err(CocycleError::InvalidArgument("grid must be at least 4".into()));
    }
    let scale = b.norm_h(0.0).max(f64::MIN_POSITIVE);
    let mut out = Vec::with_capacity(d);
    for axis in 0..d {
        let samples: Vec<Mat2> = (0..=grid)
            .map(|k| {
                let mut x = vec![0.0; d];
                x[axis] = k as f64 / grid as f64;
                b.eval(&x).re()
            })
            .collect();
        let col_min = |j: usize| {
            samples.iter().map(|m| m.0[0][j].hypot(m.0[1][j])).fold(f64::INFINITY, f64::min)
        };
        let col = if col_min(0) > 1e-8 * scale { 0 } else { 1 };
        if col_min(col) <= 1e-8 * scale {
            return Err(CocycleError::Singular);
        }
        let mut total = 0.0;
        for w in samples.windows(2) {
            let (u, v) = ([w[0].0[0][col], w[0].0[1][col]], [w[1].0[0][col], w[1].0[1][col]]);
            let step = (u[0] * v[1] - u[1] * v[0]).atan2(u[0] * v[0] + u[1] * v[1]);
            if step.abs() > PI / 2.0 {
                return Err(CocycleError::GridTooCoarse { axis, step });
            }
            total += step;
        }
        out.push((total / PI).round() as i64);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UhReport {
    pub uniformly_hyperbolic: bool,
    pub lyapunov: f64,
    /// min over sampled phases of |sin ∠(E^u(x), E^s(x))|.
    pub min_splitting_angle: f64,
}

/// Unit direction reached from `start` after `steps` forward (or inverse) steps.
fn pushed_direction(ev: &Evaluator, alpha: &[f64], start: &[f64], steps: usize, backward: bool) -> [f64; 2] {
    let mut x = start.to_vec();
    let mut v = [C64::new(0.6, 0.0), C64::new(0.8, 0.0)];
    for _ in 0..steps {
        if backward {
            advance(&mut x, alpha, -1.0);
            v = ev.matrix(&x, 0.0).inv().apply(v);
        } else {
            v = ev.apply(&x, 0.0, v);
            advance(&mut x, alpha, 1.0);
        }
        let n = vnorm(&v);
        v = [v[0] / n, v[1] / n];
    }
    [v[0].re, v[1].re]
}

/// Numerical uniform-hyperbolicity probe: positive exponent and unstable and
/// stable directions (pushed forward from x − nα, pulled back from x + nα)
/// separated by at least `angle_tol` at every sampled phase.
pub fn uh_probe_report(c: &Cocycle, iterates: usize, phase_samples: usize, seed: u64, angle_tol: f64) -> Result<UhReport> {
    let lyap = lyapunov(c, iterates.max(1000), phase_samples.clamp(1, 16), seed)?.value;
    let ev = Evaluator::new(&c.map);
    let alpha = c.alpha();
    let steps = iterates.min(2000);
    let phases = phase_grid(c.dim(), phase_samples.max(1), seed.wrapping_add(1));
    let angles: Vec<f64> = phases
        .par_iter()
        .map(|x| {
            let mut back = x.clone();
            advance(&mut back, &alpha.iter().map(|a| a * steps as f64).collect::<Vec<_>>(), -1.0);
            let u = pushed_direction(&ev, alpha, &back, steps, false);
            let mut fwd = x.clone();
            advance(&mut fwd, &alpha.iter().map(|a| a * steps as f64).collect::<Vec<_>>(), 1.0);
            let s = pushed_direction(&ev, alpha, &fwd, steps, true);
            (u[0] * s[1] - u[1] * s[0]).abs()
        })
        .collect();
    let min_angle = angles.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(UhReport { uniformly_hyperbolic: lyap > 1e-3 && min_angle >= angle_tol, lyapunov: lyap, min_splitting_angle: min_angle })
}

/// Default splitting-angle tolerance of [`uh_probe`].
pub const UH_ANGLE_TOL: f64 = 1e-3;

pub fn uh_probe(c: &Cocycle, iterates: usize, phase_samples: usize, seed: u64) -> Result<bool> {
    uh_probe_report(c, iterates, phase_samples, seed, UH_ANGLE_TOL).map(|r| r.uniformly_hyperbolic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use quasilab_arithmetics::golden_mean;

    fn golden() -> FrequencyVector {
        FrequencyVector::scalar(golden_mean())
    }

    #[test]
    fn transfer_of_constant_is_power() {
        let a = Mat2::new(2.0, 1.0, 1.0, 1.0);
        let c = Cocycle::constant(golden(), a);
        let t = transfer(&c, &[0.4], 3).re();
        assert!(t.max_abs_diff(&(a * a * a)) < 1e-12);
        assert!(transfer(&c, &[0.4], 0).max_abs_diff(&CMat2::IDENTITY) == 0.0);
    }

    #[test]
    fn constant_lyapunov_exact() {
        let c = Cocycle::constant(golden(), Mat2::new(2.0, 0.0, 0.0, 0.5));
        assert!((lyapunov(&c, 1000, 4, 1).unwrap().value - 2f64.ln()).abs() < 1e-6);
        let r = Cocycle::constant(golden(), Mat2::rotation(0.3));
        assert!(lyapunov(&r, 1000, 4, 1).unwrap().value < 1e-6);
    }

    #[test]
    fn constant_rotation_number() {
        let c = Cocycle::constant(golden(), Mat2::rotation(0.3));
        assert!((rotation_number(&c, 1000).unwrap() - 0.3).abs() < 1e-4);
    }

    #[test]
    fn uh_constant_cases() {
        let h = Cocycle::constant(golden(), Mat2::new(2.0, 0.0, 0.0, 0.5));
        assert!(uh_probe(&h, 1000, 8, 3).unwrap());
        let r = Cocycle::constant(golden(), Mat2::rotation(0.3));
        assert!(!uh_probe(&r, 1000, 8, 3).unwrap());
    }

    #[test]
    fn phase_grid_is_seeded() {
        assert_eq!(phase_grid(2, 5, 9), phase_grid(2, 5, 9));
        assert_ne!(phase_grid(1, 5, 9), phase_grid(1, 5, 10));
    }
}
