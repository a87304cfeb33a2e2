//! Geometric lattice sums behind the dynamical-localization criterion and the
//! summability check on certificate budgets.

use serde::Serialize;

use crate::{EdlError, Result};

/// C(γ) = Σ_{j≥0} e^{−γj}.
pub fn c_gamma(gamma: f64) -> f64 {
    1.0 / (1.0 - (-gamma).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionSums {
    /// Σ_k e^{−γ(|p−k|+|q−k|)}, the same with both sites shifted by ℓ, and
    /// the mixed pair Σ_k e^{−γ(|p−k|+|q−k+ℓ|)} + e^{−γ(|p−k+ℓ|+|q−k|)}.
    pub lhs: [f64; 3],
    /// (2C(γ)+d+|p−q|)^d e^{−γ|p−q|}, twice, then 2e^{γ|ℓ|} times it.
    pub rhs: [f64; 3],
    /// Half-width of the summation box beyond the extreme coordinates.
    pub margin: i64,
}

impl CriterionSums {
    pub fn holds(&self) -> bool {
        self.lhs.iter().zip(&self.rhs).all(|(l, r)| l <= r)
    }
}

fn dist(a: &[i64], b: &[i64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<i64>() as f64
}

/// Brute-force sums over a box whose neglected tail is below 1e−12 of the
/// leading term, next to their closed-form bounds.
pub fn criterion_sums(p: &[i64], q: &[i64], ell: &[i64], gamma: f64) -> Result<CriterionSums> {
    let d = p.len();
    if gamma <= 0.0 || q.len() != d || ell.len() != d || d == 0 {
        return Err(EdlError::InvalidArgument("need gamma > 0 and matching dimensions".into()));
    }
    // each summand decays at least like e^{−2γ·excess} outside the hull
    let margin = ((14.0 * std::f64::consts::LN_10 + d as f64 * (2.0 * c_gamma(2.0 * gamma)).ln()) / (2.0 * gamma)).ceil() as i64 + 1;
    let pl: Vec<i64> = p.iter().zip(ell).map(|(a, b)| a + b).collect();
    let ql: Vec<i64> = q.iter().zip(ell).map(|(a, b)| a + b).collect();
    let lo: Vec<i64> = (0..d).map(|i| p[i].min(q[i]).min(pl[i]).min(ql[i]) - margin).collect();
    let hi: Vec<i64> = (0..d).map(|i| p[i].max(q[i]).max(pl[i]).max(ql[i]) + margin).collect();
    // |p−k+ℓ| = |(p+ℓ)−k|
    let mut k = lo.clone();
    let mut lhs = [0.0; 3];
    'outer: loop {
        let a = dist(p, &k);
        let b = dist(q, &k);
        let al = dist(&pl, &k);
        let bl = dist(&ql, &k);
        lhs[0] += (-gamma * (a + b)).exp();
        lhs[1] += (-gamma * (al + bl)).exp();
        lhs[2] += (-gamma * (a + bl)).exp() + (-gamma * (al + b)).exp();
        for i in 0..d {
            if k[i] < hi[i] {
                k[i] += 1;
                continue 'outer;
            }
            k[i] = lo[i];
        }
        break;
    }
    let pq = dist(p, q);
    let base = (2.0 * c_gamma(gamma) + d as f64 + pq).powi(d as i32) * (-gamma * pq).exp();
    let ell_norm = ell.iter().map(|v| v.abs()).sum::<i64>() as f64;
    Ok(CriterionSums { lhs, rhs: [base, base, 2.0 * (gamma * ell_norm).exp() * base], margin })
}

/// One scale of the budget: C_i, sup_m C_{i,m}e^{γm}, and μ(Ω^c_{i−1}).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BudgetTerm {
    pub c: f64,
    pub sup_weight: f64,
    pub tail: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetReport {
    pub partial_sums: Vec<f64>,
    pub total: f64,
    /// Largest ratio of consecutive terms over the last third of the sequence.
    pub tail_ratio: Option<f64>,
    pub convergent: bool,
}

/// Partial sums of Σ C_i²(1 + sup_m C_{i,m}e^{γm}) μ(Ω^c_{i−1}) with a
/// ratio-test verdict on the supplied finite sequence.
pub fn criterion_budget(terms: &[BudgetTerm]) -> Result<BudgetReport> {
    if terms.windows(2).any(|w| w[1].tail > w[0].tail) {
        return Err(EdlError::InvalidArgument("tail measures must be nonincreasing".into()));
    }
    // log domain: C_i grows and tails underflow long before the ratio settles
    let logs: Vec<f64> = terms
        .iter()
        .map(|t| if t.c == 0.0 || t.tail == 0.0 { f64::NEG_INFINITY } else { 2.0 * t.c.abs().ln() + t.sup_weight.ln_1p() + t.tail.ln() })
        .collect();
    let mut partial_sums = Vec::with_capacity(terms.len());
    let mut acc = 0.0;
    for l in &logs {
        acc += l.exp();
        partial_sums.push(acc);
    }
    let nonzero: Vec<f64> = logs.iter().cloned().filter(|l| l.is_finite()).collect();
    let tail_ratio = if nonzero.len() >= 3 {
        let start = nonzero.len() - (nonzero.len() / 3).max(2);
        Some(nonzero[start..].windows(2).map(|w| (w[1] - w[0]).exp()).fold(0.0, f64::max))
    } else {
        None
    };
    let convergent = match tail_ratio {
        Some(r) => r < 1.0 - 1e-9,
        None => acc.is_finite(),
    };
    Ok(BudgetReport { partial_sums, total: acc, tail_ratio, convergent })
}

/// Budget schedule at scales c_i = 10^{−i}: C_i = C₄|ln c_i|^{4τ}c_i^{−ε/(10h₁)},
/// C_{i,m} = min{1, C₄m^τ e^{−2πm(h₁−ε/96)}/c_i} with sup over m ≤ C₄|ln c_i|⁴
/// evaluated directly at γ = 2π(h₁ − ε/2), and tails μ = min{1, c_{i−1}}.
pub fn geometric_schedule(count: usize, tau: f64, eps: f64, h1: f64, c4: f64) -> Vec<BudgetTerm> {
    let two_pi = 2.0 * std::f64::consts::PI;
    let gamma = two_pi * (h1 - eps / 2.0);
    (1..=count)
        .map(|i| {
            let ln_c = -(i as f64) * std::f64::consts::LN_10;
            let c = c4 * ln_c.abs().powf(4.0 * tau) * (-eps / (10.0 * h1) * ln_c).exp();
            let n_i = (c4 * ln_c.abs().powi(4)).floor() as usize;
            let mut best = 1.0f64;
            let mut falling = 0;
            for m in 1..=n_i {
                let log_cm = (c4.ln() + tau * (m as f64).ln() - two_pi * m as f64 * (h1 - eps / 96.0) - ln_c).min(0.0);
                let w = (log_cm + gamma * m as f64).exp();
                if w > best {
                    best = w;
                    falling = 0;
                } else {
                    falling += 1;
                    if log_cm < 0.0 && falling > 8 {
                        break;
                    }
                }
            }
            BudgetTerm { c, sup_weight: best, tail: (ln_c + std::f64::consts::LN_10).exp().min(1.0) }
        })
        .collect()
}
