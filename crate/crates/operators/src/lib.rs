//! Finite-box truncations of quasi-periodic operators on Z^d.
//!
//! All cosines take arguments in revolutions, cos(2π(θ + ⟨n,α⟩)), and boxes
//! use Dirichlet (hard wall) truncation.

use quasilab_arithmetics::{dot, FrequencyVector};
use quasilab_cocycle::ScalarPoly;
use std::f64::consts::PI;
use std::fmt::Write as _;
use thiserror::Error;

/// Default cap on the number of sites for dense d-dimensional boxes.
pub const DEFAULT_SITE_CAP: usize = 4096;

/// Hoppings are dropped smallest first while the dropped ℓ¹ mass stays below this.
pub const DEFAULT_TAIL_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("potential is not Hermitian: max |V_(-k) - conj(V_k)| = {0:e}")]
    NonHermitianPotential(f64),
    #[error("potential has complex Fourier coefficients (max |Im V_k| = {0:e}); the real symmetric assembly needs an even potential")]
    ComplexHopping(f64),
    #[error("box with {sites} sites exceeds the cap of {cap}")]
    BoxTooLarge { sites: usize, cap: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, OperatorError>;

/// Sites {n ∈ Z^d : |n_i| ≤ N} flattened with the first coordinate varying fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoxIndex {
    pub dim: usize,
    pub radius: usize,
}

impl BoxIndex {
    pub fn new(dim: usize, radius: usize) -> Self {
        assert!(dim >= 1, "box dimension must be positive");
        BoxIndex { dim, radius }
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn len(&self) -> usize {
        self.side().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn flatten(&self, n: &[i64]) -> Option<usize> {
        let r = self.radius as i64;
        let mut idx = 0usize;
        for i in (0..self.dim).rev() {
            if n[i].abs() > r {
                return None;
            }
            idx = idx * self.side() + (n[i] + r) as usize;
        }
        Some(idx)
    }

    pub fn site(&self, mut idx: usize) -> Vec<i64> {
        let side = self.side();
        (0..self.dim)
            .map(|_| {
                let v = (idx % side) as i64 - self.radius as i64;
                idx /= side;
                v
            })
            .collect()
    }

    pub fn sites(&self) -> impl Iterator<Item = Vec<i64>> + '_ {
        (0..self.len()).map(|i| self.site(i))
    }

    /// ℓ^∞ distance of a site to the box boundary layer (0 on the outermost shell).
    pub fn depth(&self, n: &[i64]) -> usize {
        n.iter().map(|v| self.radius - v.unsigned_abs() as usize).min().unwrap_or(0)
    }
}

/// Dense real symmetric matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix { n, data: vec![0.0; n * n] }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Writes both (i, j) and (j, i).
    pub fn set_sym(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// Largest absolute row sum, an upper bound for ‖H‖₂.
    pub fn row_sum_norm(&self) -> f64 {
        (0..self.n).map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// Frobenius norm.
    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    /// Gershgorin interval [min(a_ii − r_i), max(a_ii + r_i)].
    pub fn gershgorin(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.n {
            let r: f64 = self.row(i).iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v.abs()).sum();
            lo = lo.min(self.get(i, i) - r);
            hi = hi.max(self.get(i, i) + r);
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    AlmostMathieu,
    LongRange,
    MultiFrequencySchrodinger,
    MultiDimLongRange,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMeta {
    pub family: Family,
    pub coupling: f64,
    /// θ: one entry for scalar phases, d entries for the multi-frequency potential.
    pub theta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub potential: String,
    /// Largest |k|₁ among kept hoppings.
    pub hop_range: usize,
    /// ℓ¹ mass of dropped hoppings.
    pub dropped_hopping_mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedOperator {
    pub boxed: BoxIndex,
    pub matrix: SymMatrix,
    /// (diagonal, off-diagonal) when the operator is tridiagonal.
    pub tridiagonal: Option<(Vec<f64>, Vec<f64>)>,
    pub meta: OperatorMeta,
}

impl TruncatedOperator {
    pub fn size(&self) -> usize {
        self.matrix.size()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.size()).map(|i| self.matrix.get(i, i)).collect()
    }

    /// Plain-text dump: a header line, then `i,j,value` for every nonzero
    /// upper-triangular entry.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# family={:?} dim={} radius={} coupling={} theta={:?} alpha={:?} potential={}",
            self.meta.family, self.boxed.dim, self.boxed.radius, self.meta.coupling, self.meta.theta, self.meta.alpha, self.meta.potential
        );
        let _ = writeln!(s, "i,j,value");
        for i in 0..self.size() {
            for j in i..self.size() {
                let v = self.matrix.get(i, j);
                if v != 0.0 {
                    let _ = writeln!(s, "{i},{j},{v:e}");
                }
            }
        }
        s
    }
}

fn tridiagonal_operator(diag: Vec<f64>, meta: OperatorMeta) -> TruncatedOperator {
    let n = diag.len();
    let mut m = SymMatrix::zeros(n);
    for (i, &d) in diag.iter().enumerate() {
        m.set_sym(i, i, d);
        if i + 1 < n {
            m.set_sym(i, i + 1, 1.0);
        }
    }
    TruncatedOperator {
        boxed: BoxIndex::new(1, (n - 1) / 2),
        matrix: m,
        tridiagonal: Some((diag, vec![1.0; n.saturating_sub(1)])),
        meta,
    }
}

fn check_radius(n: usize) -> Result<()> {
    if n == 0 {
        return Err(OperatorError::InvalidArgument("box radius must be at least 1".into()));
    }
    Ok(())
}

/// u_{n+1} + u_{n−1} + 2λ cos(2π(θ + nα)) u_n on [−N, N].
pub fn build_amo(lambda: f64, alpha: f64, theta: f64, radius: usize) -> Result<TruncatedOperator> {
    check_radius(radius)?;
    let r = radius as i64;
    let diag = (-r..=r).map(|n| 2.0 * lambda * (2.0 * PI * (theta + n as f64 * alpha)).cos()).collect();
    Ok(tridiagonal_operator(
        diag,
        OperatorMeta {
            family: Family::AlmostMathieu,
            coupling: lambda,
            theta: vec![theta],
            alpha: vec![alpha],
            potential: "2cos".into(),
            hop_range: 1,
            dropped_hopping_mass: 0.0,
        },
    ))
}

/// u_{n+1} + u_{n−1} + 2λ⁻¹ Σ_i cos(2π(θ_i + nα_i)) u_n on [−N, N].
pub fn build_md_schrodinger(lambda_inv: f64, alpha: &FrequencyVector, theta: &[f64], radius: usize) -> Result<TruncatedOperator> {
    check_radius(radius)?;
    if theta.len() != alpha.dim() {
        return Err(OperatorError::InvalidArgument("theta and alpha dimensions differ".into()));
    }
    let r = radius as i64;
    let diag = (-r..=r)
        .map(|n| {
            theta
                .iter()
                .zip(&alpha.components)
                .map(|(t, a)| 2.0 * lambda_inv * (2.0 * PI * (t + n as f64 * a)).cos())
                .sum()
        })
        .collect();
    Ok(tridiagonal_operator(
        diag,
        OperatorMeta {
            family: Family::MultiFrequencySchrodinger,
            coupling: lambda_inv,
            theta: theta.to_vec(),
            alpha: alpha.components.clone(),
            potential: format!("2 sum_i cos, d={}", alpha.dim()),
            hop_range: 1,
            dropped_hopping_mass: 0.0,
        },
    ))
}

/// Real hoppings (k, V_k) kept from V after the tail cut.
fn hoppings(v: &ScalarPoly, hop_cut: Option<f64>) -> Result<(Vec<(Vec<i64>, f64)>, f64)> {
    let defect = v.reality_defect();
    if defect > 1e-12 * v.norm_h(0.0).max(1.0) {
        return Err(OperatorError::NonHermitianPotential(defect));
    }
    let d = v.dim();
    let mut terms: Vec<(Vec<i64>, f64)> = Vec::new();
    let mut max_im: f64 = 0.0;
    for (m, c) in v.terms() {
        max_im = max_im.max(c.im.abs());
        terms.push((m[..d].to_vec(), c.re));
    }
    if max_im > 1e-12 {
        return Err(OperatorError::ComplexHopping(max_im));
    }
    // drop smallest first; ties broken by lattice order for determinism
    terms.sort_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then_with(|| a.0.cmp(&b.0)));
    let mut dropped = 0.0;
    let mut keep_from = 0;
    for (i, (_, c)) in terms.iter().enumerate() {
        let drop = match hop_cut {
            Some(cut) => c.abs() <= cut,
            None => dropped + c.abs() < DEFAULT_TAIL_TOL,
        };
        if !drop {
            break;
        }
        dropped += c.abs();
        keep_from = i + 1;
    }
    let kept = terms.split_off(keep_from);
    Ok((kept, dropped))
}

fn assemble_longrange(
    v: &ScalarPoly,
    lambda: f64,
    alpha: &FrequencyVector,
    theta: f64,
    radius: usize,
    hop_cut: Option<f64>,
    site_cap: usize,
    family: Family,
) -> Result<TruncatedOperator> {
    check_radius(radius)?;
    let d = v.dim();
    if alpha.dim() != d {
        return Err(OperatorError::InvalidArgument(format!("V has dimension {d} but alpha has {}", alpha.dim())));
    }
    if let Some(c) = hop_cut {
        if c < 0.0 {
            return Err(OperatorError::InvalidArgument("hop_cut must be non-negative".into()));
        }
    }
    let boxed = BoxIndex::new(d, radius);
    if boxed.len() > site_cap {
        return Err(OperatorError::BoxTooLarge { sites: boxed.len(), cap: site_cap });
    }
    let (hops, dropped) = hoppings(v, hop_cut)?;
    let mut m = SymMatrix::zeros(boxed.len());
    let mut hop_range = 0;
    for (i, n) in boxed.sites().enumerate() {
        let mut diag = 2.0 * lambda * (2.0 * PI * (theta + dot(&n, &alpha.components))).cos();
        for (k, vk) in &hops {
            if k.iter().all(|&x| x == 0) {
                diag += vk;
                continue;
            }
            // (Hu)_n = Σ_k V_k u_{n−k}
            let target: Vec<i64> = n.iter().zip(k).map(|(a, b)| a - b).collect();
            if let Some(j) = boxed.flatten(&target) {
                if j > i {
                    m.set_sym(i, j, *vk);
                }
            }
        }
        m.set_sym(i, i, diag);
    }
    for (k, _) in &hops {
        hop_range = hop_range.max(k.iter().map(|x| x.unsigned_abs() as usize).sum());
    }
    let tridiagonal = if d == 1 && hop_range <= 1 {
        let n = boxed.len();
        Some(((0..n).map(|i| m.get(i, i)).collect(), (0..n - 1).map(|i| m.get(i, i + 1)).collect()))
    } else {
        None
    };
    Ok(TruncatedOperator {
        boxed,
        matrix: m,
        tridiagonal,
        meta: OperatorMeta {
            family,
            coupling: lambda,
            theta: vec![theta],
            alpha: alpha.components.clone(),
            potential: format!("trig poly, d={d}, band={}", v.band()),
            hop_range,
            dropped_hopping_mass: dropped,
        },
    })
}

/// Σ_k V_k u_{n−k} + 2λ cos(2π(θ + ⟨n,α⟩)) u_n on the box [−N, N]^d.
///
/// With `hop_cut = None` hoppings are dropped smallest first while their
/// total stays below [`DEFAULT_TAIL_TOL`].
pub fn build_longrange(
    v: &ScalarPoly,
    lambda: f64,
    alpha: &FrequencyVector,
    theta: f64,
    radius: usize,
    hop_cut: Option<f64>,
) -> Result<TruncatedOperator> {
    assemble_longrange(v, lambda, alpha, theta, radius, hop_cut, DEFAULT_SITE_CAP, Family::LongRange)
}

/// Δ + 2λ cos(2π(θ + ⟨n,α⟩)) on [−N, N]^d, Δ the nearest-neighbour Laplacian.
pub fn build_md_longrange(lambda: f64, alpha: &FrequencyVector, theta: f64, radius: usize, site_cap: usize) -> Result<TruncatedOperator> {
    let v = ScalarPoly::cosine_sum(alpha.dim(), 1.0);
    assemble_longrange(&v, lambda, alpha, theta, radius, Some(0.0), site_cap, Family::MultiDimLongRange)
}
