//! Frequency arithmetic on the torus.
//!
//! Continued-fraction expansion of a machine real, torus distance, lattice
//! enumeration in the ℓ¹ norm and finite-range Diophantine certificates for
//! frequency vectors and rotation numbers.

use thiserror::Error;

/// Remainders below this are treated as zero (rational at precision).
pub const DEFAULT_REMAINDER_CUTOFF: f64 = 1e-14;

/// Denominators above 2^53 carry no information about a double.
const MAX_DENOMINATOR: u128 = 1 << 53;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArithError {
    #[error("alpha = {0} is not in the open unit interval")]
    NotInUnitInterval(f64),
    #[error("remainder underflow before the first partial quotient (alpha = {0})")]
    DegenerateAtPrecision(f64),
    #[error("rational resonance at n = {n:?}: dist(<n, alpha>) = 0")]
    RationalResonance { n: Vec<i64> },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, ArithError>;

/// Distance from `x` to the nearest integer, in [0, 1/2].
pub fn torus_dist(x: f64) -> f64 {
    (x - x.round()).abs()
}

/// ℓ¹ norm of a lattice vector.
pub fn l1_norm(n: &[i64]) -> i64 {
    n.iter().map(|v| v.abs()).sum()
}

/// ⟨n, α⟩ as a real number.
pub fn dot(n: &[i64], alpha: &[f64]) -> f64 {
    n.iter().zip(alpha).map(|(&k, &a)| k as f64 * a).sum()
}

/// All n ∈ Z^d with |n|₁ ≤ radius, in lexicographic order.
pub fn l1_ball(d: usize, radius: i64) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    let mut cur = vec![0i64; d];
    fill_ball(&mut out, &mut cur, 0, radius);
    out
}

fn fill_ball(out: &mut Vec<Vec<i64>>, cur: &mut [i64], pos: usize, budget: i64) {
    if pos == cur.len() {
        out.push(cur.to_vec());
        return;
    }
    for v in -budget..=budget {
        cur[pos] = v;
        fill_ball(out, cur, pos + 1, budget - v.abs());
    }
    cur[pos] = 0;
}

/// Representatives of (Z^d \ {0}) / ±1 with |n|₁ ≤ radius: the first
/// nonzero component is positive.
pub fn l1_half_ball(d: usize, radius: i64) -> Vec<Vec<i64>> {
    l1_ball(d, radius)
        .into_iter()
        .filter(|n| n.iter().find(|&&v| v != 0).is_some_and(|&v| v > 0))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuedFraction {
    pub alpha: f64,
    /// a_1, a_2, ...
    pub partial_quotients: Vec<u64>,
    /// (p_n, q_n) for n = 0..=depth, starting at (0, 1).
    pub convergents: Vec<(u64, u64)>,
    pub depth: usize,
    /// max over n of ln(q_{n+1}) / q_n.
    pub beta_estimate: f64,
}

impl ContinuedFraction {
    pub fn q(&self, n: usize) -> u64 {
        self.convergents[n].1
    }

    pub fn p(&self, n: usize) -> u64 {
        self.convergents[n].0
    }
}

/// Split a positive double into an exact dyadic fraction num / 2^k.
fn dyadic(x: f64) -> (u128, u128) {
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (mut m, mut e) = if exp == 0 {
        (frac as u128, -1074i64)
    } else {
        ((frac | (1u64 << 52)) as u128, exp - 1075)
    };
    while m & 1 == 0 && e < 0 {
        m >>= 1;
        e += 1;
    }
    debug_assert!(e < 0 && -e < 127);
    (m, 1u128 << (-e))
}

/// Continued-fraction expansion with the default remainder cutoff.
pub fn cf_expand(alpha: f64, depth: usize) -> Result<ContinuedFraction> {
    cf_expand_with_cutoff(alpha, depth, DEFAULT_REMAINDER_CUTOFF)
}

/// Continued-fraction expansion of the double `alpha`.
///
/// The Euclidean algorithm runs on the exact dyadic value of `alpha`, so the
/// partial quotients are those of the number actually stored. The expansion
/// stops early once the remainder α_k falls below `cutoff` or q_n exceeds
/// 2^53.
pub fn cf_expand_with_cutoff(alpha: f64, depth: usize, cutoff: f64) -> Result<ContinuedFraction> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ArithError::NotInUnitInterval(alpha));
    }
    if depth == 0 {
        return Err(ArithError::InvalidArgument("depth must be at least 1".into()));
    }
    if alpha < cutoff {
        return Err(ArithError::DegenerateAtPrecision(alpha));
    }
    let (mut num, mut den) = dyadic(alpha);
    let mut quotients = Vec::with_capacity(depth);
    let mut conv: Vec<(u128, u128)> = vec![(0, 1)];
    let (mut p_prev, mut q_prev) = (1u128, 0u128);
    while quotients.len() < depth && num != 0 {
        if (num as f64) / (den as f64) < cutoff {
            break;
        }
        let a = den / num;
        let r = den % num;
        let (p_cur, q_cur) = *conv.last().unwrap();
        let p_next = a * p_cur + p_prev;
        let q_next = a * q_cur + q_prev;
        if q_next > MAX_DENOMINATOR {
            break;
        }
        quotients.push(a as u64);
        conv.push((p_next, q_next));
        p_prev = p_cur;
        q_prev = q_cur;
        den = num;
        num = r;
    }
    if quotients.is_empty() {
        return Err(ArithError::DegenerateAtPrecision(alpha));
    }
    let convergents: Vec<(u64, u64)> = conv.iter().map(|&(p, q)| (p as u64, q as u64)).collect();
    let beta_estimate = convergents
        .windows(2)
        .map(|w| (w[1].1 as f64).ln() / w[0].1 as f64)
        .fold(0.0, f64::max);
    Ok(ContinuedFraction {
        alpha,
        depth: quotients.len(),
        partial_quotients: quotients,
        convergents,
        beta_estimate,
    })
}

/// Diophantine certificate over a finite index range.
#[derive(Debug, Clone, PartialEq)]
pub struct DcCertificate {
    pub kappa_prime: f64,
    pub tau: f64,
    pub search_bound: i64,
    /// Lattice vector attaining the minimum.
    pub worst_n: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyVector {
    pub components: Vec<f64>,
    pub dio: Option<DcCertificate>,
}

impl FrequencyVector {
    pub fn new(components: Vec<f64>) -> Self {
        FrequencyVector { components, dio: None }
    }

    pub fn scalar(alpha: f64) -> Self {
        Self::new(vec![alpha])
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn dot(&self, n: &[i64]) -> f64 {
        dot(n, &self.components)
    }

    /// Attach a certificate computed by [`certify_dc`].
    pub fn certified(mut self, tau: f64, search_bound: i64) -> Result<Self> {
        let cert = certify_dc(&self, tau, search_bound)?;
        self.dio = Some(cert);
        Ok(self)
    }
}

/// κ′ = min over 0 < |n|₁ ≤ bound of dist(⟨n,α⟩)·|n|^τ.
pub fn certify_dc(alpha: &FrequencyVector, tau: f64, search_bound: i64) -> Result<DcCertificate> {
    let d = alpha.dim();
    if d == 0 {
        return Err(ArithError::InvalidArgument("empty frequency vector".into()));
    }
    if tau <= d as f64 - 1.0 {
        return Err(ArithError::InvalidArgument(format!("tau = {tau} must exceed d - 1 = {}", d - 1)));
    }
    if search_bound < 1 {
        return Err(ArithError::InvalidArgument("search_bound must be at least 1".into()));
    }
    let mut best = f64::INFINITY;
    let mut worst_n = Vec::new();
    for n in l1_half_ball(d, search_bound) {
        let dist = torus_dist(alpha.dot(&n));
        if dist == 0.0 {
            return Err(ArithError::RationalResonance { n });
        }
        let v = dist * (l1_norm(&n) as f64).powf(tau);
        if v < best {
            best = v;
            worst_n = n;
        }
    }
    Ok(DcCertificate { kappa_prime: best, tau, search_bound, worst_n })
}

/// True iff dist(2φ − ⟨m,α⟩) ≥ κ/(|m|+1)^τ for every |m|₁ ≤ bound, m = 0 included.
pub fn dc_alpha_check(phi: f64, alpha: &FrequencyVector, kappa: f64, tau: f64, search_bound: i64) -> bool {
    l1_ball(alpha.dim(), search_bound.max(0)).iter().all(|m| {
        let lhs = torus_dist(2.0 * phi - alpha.dot(m));
        lhs >= kappa / ((l1_norm(m) + 1) as f64).powf(tau)
    })
}

/// The golden-mean frequency (√5 − 1)/2.
pub fn golden_mean() -> f64 {
    (5f64.sqrt() - 1.0) / 2.0
}
