//! Eigendecomposition of real symmetric truncated operators.
//!
//! Householder reduction to tridiagonal form, implicit QL with Wilkinson
//! shifts for the full spectrum, and Sturm bisection with inverse iteration
//! for spectral windows. Single-threaded and deterministic.

use quasilab_operators::{OperatorMeta, SymMatrix, TruncatedOperator};
use thiserror::Error;

pub const MAX_SWEEPS: usize = 60;
pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-10;
pub const DEFAULT_SIZE_CAP: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EigenError {
    #[error("no convergence for eigenvalue {index} after {MAX_SWEEPS} sweeps")]
    NoConvergence { index: usize },
    #[error("matrix of size {size} exceeds the cap {cap}")]
    TooLarge { size: usize, cap: usize },
    #[error("residual {residual:e} exceeds {bound:e}")]
    ResidualTooLarge { residual: f64, bound: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, EigenError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    pub residual_tol: f64,
    pub size_cap: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions { residual_tol: DEFAULT_RESIDUAL_TOL, size_cap: DEFAULT_SIZE_CAP }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    /// Ascending.
    pub values: Vec<f64>,
    /// vectors[m][k] = u_m(k), orthonormal.
    pub vectors: Vec<Vec<f64>>,
    /// max_m ‖H u_m − E_m u_m‖₂.
    pub residual_bound: f64,
    /// max |E_m|, equal to ‖H‖₂ for a full decomposition.
    pub norm: f64,
    pub source: Option<OperatorMeta>,
}

impl EigenDecomposition {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Largest |⟨u_i, u_j⟩ − δ_ij|.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.len() {
            for j in 0..=i {
                let g = kahan_dot(&self.vectors[i], &self.vectors[j]);
                let t = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - t).abs());
            }
        }
        worst
    }

    /// `index,value` lines.
    pub fn values_csv(&self) -> String {
        let mut s = String::from("index,value\n");
        for (i, v) in self.values.iter().enumerate() {
            s.push_str(&format!("{i},{v:e}\n"));
        }
        s
    }

    /// Little-endian u64 count, u64 length, then the vectors as f64 row after row.
    pub fn vectors_bytes(&self) -> Vec<u8> {
        let n = self.vectors.first().map(|v| v.len()).unwrap_or(0);
        let mut out = Vec::with_capacity(16 + 8 * n * self.len());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        for v in &self.vectors {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }
}

/// Kahan-compensated sum.
pub fn kahan_sum(it: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = 0.0;
    let mut comp = 0.0;
    for x in it {
        let y = x - comp;
        let t = acc + y;
        comp = (t - acc) - y;
        acc = t;
    }
    acc
}

pub fn kahan_dot(a: &[f64], b: &[f64]) -> f64 {
    kahan_sum(a.iter().zip(b).map(|(x, y)| x * y))
}

/// H = Q T Qᵀ with T tridiagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub diag: Vec<f64>,
    /// off[i] couples i and i + 1.
    pub off: Vec<f64>,
    /// Row-major orthogonal accumulator.
    pub q: Vec<f64>,
}

impl Tridiagonal {
    pub fn size(&self) -> usize {
        self.diag.len()
    }

    fn identity_from(diag: Vec<f64>, off: Vec<f64>) -> Self {
        let n = diag.len();
        let mut q = vec![0.0; n * n];
        for i in 0..n {
            q[i * n + i] = 1.0;
        }
        Tridiagonal { diag, off, q }
    }
}

/// Householder reduction of a dense symmetric matrix.
pub fn tridiagonalize_matrix(h: &SymMatrix) -> Tridiagonal {
    let n = h.size();
    if n == 0 {
        return Tridiagonal { diag: vec![], off: vec![], q: vec![] };
    }
    let mut v = h.data().to_vec();
    let ix = |r: usize, c: usize| r * n + c;
    let mut d: Vec<f64> = (0..n).map(|j| v[ix(n - 1, j)]).collect();
    let mut e = vec![0.0; n];
    for i in (1..n).rev() {
        let scale: f64 = d[..i].iter().map(|x| x.abs()).sum();
        let mut hh = 0.0;
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[ix(i - 1, j)];
                v[ix(i, j)] = 0.0;
                v[ix(j, i)] = 0.0;
            }
        } else {
            for dk in d[..i].iter_mut() {
                *dk /= scale;
                hh += *dk * *dk;
            }
            let f = d[i - 1];
            let mut g = hh.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            hh -= f * g;
            d[i - 1] = f - g;
            for ej in e[..i].iter_mut() {
                *ej = 0.0;
            }
            for j in 0..i {
                let f = d[j];
                v[ix(j, i)] = f;
                let mut g = e[j] + v[ix(j, j)] * f;
                for k in j + 1..i {
                    g += v[ix(k, j)] * d[k];
                    e[k] += v[ix(k, j)] * f;
                }
                e[j] = g;
            }
            let mut f = 0.0;
            for j in 0..i {
                e[j] /= hh;
                f += e[j] * d[j];
            }
            let h2 = f / (hh + hh);
            for j in 0..i {
                e[j] -= h2 * d[j];
            }
            for j in 0..i {
                let (f, g) = (d[j], e[j]);
                for k in j..i {
                    v[ix(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[ix(i - 1, j)];
                v[ix(i, j)] = 0.0;
            }
        }
        d[i] = hh;
    }
    for i in 0..n - 1 {
        v[ix(n - 1, i)] = v[ix(i, i)];
        v[ix(i, i)] = 1.0;
        let hh = d[i + 1];
        if hh != 0.0 {
            for k in 0..=i {
                d[k] = v[ix(k, i + 1)] / hh;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[ix(k, i + 1)] * v[ix(k, j)];
                }
                for k in 0..=i {
                    v[ix(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[ix(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[ix(n - 1, j)];
        v[ix(n - 1, j)] = 0.0;
    }
    v[ix(n - 1, n - 1)] = 1.0;
    Tridiagonal { diag: d, off: e[1..].to_vec(), q: v }
}

/// Tridiagonal form of an operator; identity accumulator if already tridiagonal.
pub fn tridiagonalize(h: &TruncatedOperator) -> Tridiagonal {
    match &h.tridiagonal {
        Some((d, e)) => Tridiagonal::identity_from(d.clone(), e.clone()),
        None => tridiagonalize_matrix(&h.matrix),
    }
}

/// Implicit QL with Wilkinson shifts. Returns ascending values and the
/// eigenvectors of H (columns of Q·Z) as rows.
fn ql_implicit(t: &Tridiagonal) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = t.size();
    let mut d = t.diag.clone();
    let mut e = vec![0.0; n];
    e[..n.saturating_sub(1)].copy_from_slice(&t.off);
    // z[col][row], columns contiguous
    let mut z: Vec<Vec<f64>> = (0..n).map(|c| (0..n).map(|r| t.q[r * n + c]).collect()).collect();
    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut sweeps = 0;
            loop {
                sweeps += 1;
                if sweeps > MAX_SWEEPS {
                    return Err(EigenError::NoConvergence { index: l });
                }
                // Wilkinson shift from the leading 2×2 block
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;
                p = d[m];
                let (mut c, mut c2, mut c3) = (1.0, 1.0, 1.0);
                let el1 = e[l + 1];
                let (mut s, mut s2) = (0.0, 0.0);
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    let (left, right) = z.split_at_mut(i + 1);
                    let (zi, zi1) = (&mut left[i], &mut right[0]);
                    for k in 0..n {
                        let hk = zi1[k];
                        zi1[k] = s * zi[k] + c * hk;
                        zi[k] = c * zi[k] - s * hk;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| d[i]).collect();
    let vectors = order.iter().map(|&i| std::mem::take(&mut z[i])).collect();
    Ok((values, vectors))
}

fn first_significant(v: &[f64]) -> usize {
    let m = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    v.iter().position(|x| x.abs() > 1e-8 * m).unwrap_or(0)
}

fn normalize(v: &mut [f64]) {
    let n = kahan_dot(v, v).sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

/// Deterministic Gram–Schmidt inside clusters (gap < 1e−12‖H‖), then a sign
/// convention: the first significant entry is positive.
fn canonicalize(values: &[f64], vectors: &mut [Vec<f64>], norm: f64) {
    let gap = 1e-12 * norm.max(f64::MIN_POSITIVE);
    let mut start = 0;
    while start < values.len() {
        let mut end = start + 1;
        while end < values.len() && values[end] - values[end - 1] < gap {
            end += 1;
        }
        if end - start > 1 {
            let cluster = &mut vectors[start..end];
            cluster.sort_by_key(|v| first_significant(v));
            for i in 0..cluster.len() {
                for _ in 0..2 {
                    for j in 0..i {
                        let p = kahan_dot(&cluster[i], &cluster[j]);
                        let (a, b) = cluster.split_at_mut(i);
                        for (x, y) in b[0].iter_mut().zip(&a[j]) {
                            *x -= p * y;
                        }
                    }
                    normalize(&mut cluster[i]);
                }
            }
        }
        start = end;
    }
    for v in vectors.iter_mut() {
        let k = first_significant(v);
        if v.get(k).is_some_and(|&x| x < 0.0) {
            for x in v.iter_mut() {
                *x = -*x;
            }
        }
    }
}

fn residual(h: &TruncatedOperator, value: f64, v: &[f64]) -> f64 {
    let hv = match &h.tridiagonal {
        Some((d, e)) => {
            let n = d.len();
            (0..n)
                .map(|i| {
                    let mut s = d[i] * v[i];
                    if i > 0 {
                        s += e[i - 1] * v[i - 1];
                    }
                    if i + 1 < n {
                        s += e[i] * v[i + 1];
                    }
                    s
                })
                .collect::<Vec<f64>>()
        }
        None => h.matrix.matvec(v),
    };
    kahan_sum(hv.iter().zip(v).map(|(a, b)| (a - value * b).powi(2))).sqrt()
}

fn check_size(h: &TruncatedOperator, opts: &EigenOptions) -> Result<()> {
    if h.size() > opts.size_cap {
        return Err(EigenError::TooLarge { size: h.size(), cap: opts.size_cap });
    }
    Ok(())
}

fn finish(h: &TruncatedOperator, values: Vec<f64>, mut vectors: Vec<Vec<f64>>, norm: f64, opts: &EigenOptions) -> Result<EigenDecomposition> {
    canonicalize(&values, &mut vectors, norm);
    let residual_bound = values.iter().zip(&vectors).map(|(&e, v)| residual(h, e, v)).fold(0.0, f64::max);
    let bound = opts.residual_tol * norm.max(1.0);
    if residual_bound > bound {
        return Err(EigenError::ResidualTooLarge { residual: residual_bound, bound });
    }
    Ok(EigenDecomposition { values, vectors, residual_bound, norm, source: Some(h.meta.clone()) })
}

pub fn eigen_all(h: &TruncatedOperator) -> Result<EigenDecomposition> {
    eigen_all_with(h, &EigenOptions::default())
}

pub fn eigen_all_with(h: &TruncatedOperator, opts: &EigenOptions) -> Result<EigenDecomposition> {
    check_size(h, opts)?;
    let t = tridiagonalize(h);
    let (values, vectors) = ql_implicit(&t)?;
    let norm = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    finish(h, values, vectors, norm, opts)
}

/// Full decomposition whose eigenvectors keep componentwise relative accuracy
/// far into exponentially decaying tails.
///
/// For tridiagonal operators each QL eigenvector is recomputed from a twisted
/// factorization: ratios u(n+1)/u(n) and u(n−1)/u(n) are built inward from
/// both walls, which is stable for the decaying solution, and joined at the
/// site where the twist element is smallest. A recomputed vector is kept only
/// when it agrees with the QL vector to 1e−8; otherwise the QL vector stays.
/// Dense operators fall through to [`eigen_all_with`].
pub fn eigen_all_graded(h: &TruncatedOperator) -> Result<EigenDecomposition> {
    eigen_all_graded_with(h, &EigenOptions::default())
}

pub fn eigen_all_graded_with(h: &TruncatedOperator, opts: &EigenOptions) -> Result<EigenDecomposition> {
    let mut ed = eigen_all_with(h, opts)?;
    let Some((d, e)) = &h.tridiagonal else { return Ok(ed) };
    if e.iter().any(|&x| x == 0.0) {
        return Ok(ed);
    }
    let norm = ed.norm.max(1.0);
    let mut changed = false;
    for (value, v) in ed.values.iter().zip(ed.vectors.iter_mut()) {
        let w = twisted_vector(d, e, *value, norm);
        let p = kahan_dot(&w, v);
        if (p.abs() - 1.0).abs() <= 1e-8 {
            let sign = p.signum();
            for (x, y) in v.iter_mut().zip(&w) {
                *x = sign * y;
            }
            changed = true;
        }
    }
    if changed {
        ed.residual_bound = ed.values.iter().zip(&ed.vectors).map(|(&x, v)| residual(h, x, v)).fold(0.0, f64::max);
        let bound = opts.residual_tol * norm;
        if ed.residual_bound > bound {
            return Err(EigenError::ResidualTooLarge { residual: ed.residual_bound, bound });
        }
    }
    Ok(ed)
}

/// Unit eigenvector of the tridiagonal (d, e) at eigenvalue `value`.
pub fn twisted_vector(d: &[f64], e: &[f64], value: f64, norm: f64) -> Vec<f64> {
    let n = d.len();
    if n == 1 {
        return vec![1.0];
    }
    let tiny = f64::EPSILON * f64::EPSILON * norm;
    let guard = |x: f64| if x.abs() < tiny { tiny.copysign(x) } else { x };
    // s[i] = u(i+1)/u(i), t[i] = u(i−1)/u(i)
    let mut s = vec![0.0; n];
    for i in (0..n - 1).rev() {
        let next = if i + 1 < n - 1 { e[i + 1] * s[i + 1] } else { 0.0 };
        s[i] = -e[i] / guard(d[i + 1] - value + next);
    }
    let mut t = vec![0.0; n];
    for i in 1..n {
        let prev = if i >= 2 { e[i - 2] * t[i - 1] } else { 0.0 };
        t[i] = -e[i - 1] / guard(d[i - 1] - value + prev);
    }
    let twist = (0..n)
        .map(|r| {
            let left = if r > 0 { e[r - 1] * t[r] } else { 0.0 };
            let right = if r + 1 < n { e[r] * s[r] } else { 0.0 };
            (d[r] - value + left + right).abs()
        })
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(r, _)| r)
        .unwrap_or(0);
    let mut u = vec![0.0; n];
    u[twist] = 1.0;
    for i in twist + 1..n {
        u[i] = s[i - 1] * u[i - 1];
    }
    for i in (0..twist).rev() {
        u[i] = t[i + 1] * u[i + 1];
    }
    normalize(&mut u);
    u
}

/// Number of eigenvalues of T strictly below x.
pub fn sturm_count(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    let tiny = f64::MIN_POSITIVE.sqrt();
    for i in 0..diag.len() {
        let b2 = if i == 0 { 0.0 } else { off[i - 1] * off[i - 1] };
        q = diag[i] - x - if i == 0 { 0.0 } else { b2 / q };
        if q == 0.0 {
            q = -tiny;
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

fn gershgorin_tri(d: &[f64], e: &[f64]) -> (f64, f64) {
    let n = d.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { e[i - 1].abs() } else { 0.0 } + if i + 1 < n { e[i].abs() } else { 0.0 };
        lo = lo.min(d[i] - r);
        hi = hi.max(d[i] + r);
    }
    (lo, hi)
}

/// k-th smallest eigenvalue (0-based) of T by bisection.
fn bisect_eigenvalue(d: &[f64], e: &[f64], k: usize, lo: f64, hi: f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if sturm_count(d, e, mid) > k {
            b = mid;
        } else {
            a = mid;
        }
    }
    0.5 * (a + b)
}

/// Solve (T − σI) x = b by LU with partial pivoting.
fn tri_solve(d: &[f64], e: &[f64], sigma: f64, b: &[f64]) -> Vec<f64> {
    let n = d.len();
    if n == 1 {
        let p = d[0] - sigma;
        return vec![b[0] / if p == 0.0 { f64::EPSILON } else { p }];
    }
    // rows as (sub, diag, sup, sup2) after pivoting
    let mut dl: Vec<f64> = e.to_vec();
    let mut dd: Vec<f64> = d.iter().map(|x| x - sigma).collect();
    let mut du: Vec<f64> = e.to_vec();
    let mut du2 = vec![0.0; n.saturating_sub(2)];
    let mut x = b.to_vec();
    let tiny = f64::EPSILON * d.iter().chain(e).fold(1.0f64, |a, v| a.max(v.abs()));
    for i in 0..n - 1 {
        if dd[i].abs() >= dl[i].abs() {
            if dd[i] == 0.0 {
                dd[i] = tiny;
            }
            let f = dl[i] / dd[i];
            dl[i] = f;
            dd[i + 1] -= f * du[i];
        } else {
            let f = dd[i] / dl[i];
            dd[i] = dl[i];
            dl[i] = f;
            let tmp = du[i];
            du[i] = dd[i + 1];
            dd[i + 1] = tmp - f * du[i];
            if i + 1 < n - 1 {
                du2[i] = du[i + 1];
                du[i + 1] = -f * du2[i];
            }
            x.swap(i, i + 1);
        }
        x[i + 1] -= dl[i] * x[i];
    }
    if dd[n - 1] == 0.0 {
        dd[n - 1] = tiny;
    }
    x[n - 1] /= dd[n - 1];
    x[n - 2] = (x[n - 2] - du[n - 2] * x[n - 1]) / dd[n - 2];
    for i in (0..n.saturating_sub(2)).rev() {
        x[i] = (x[i] - du[i] * x[i + 1] - du2[i] * x[i + 2]) / dd[i];
    }
    x
}

/// Eigenpairs with eigenvalue in [lo, hi), by Sturm bisection and inverse iteration.
pub fn eigen_window(h: &TruncatedOperator, lo: f64, hi: f64) -> Result<EigenDecomposition> {
    eigen_window_with(h, lo, hi, &EigenOptions::default())
}

pub fn eigen_window_with(h: &TruncatedOperator, lo: f64, hi: f64, opts: &EigenOptions) -> Result<EigenDecomposition> {
    if !(lo < hi) {
        return Err(EigenError::InvalidArgument(format!("empty window [{lo}, {hi})")));
    }
    check_size(h, opts)?;
    let t = tridiagonalize(h);
    let n = t.size();
    let (d, e) = (&t.diag, &t.off);
    let (glo, ghi) = gershgorin_tri(d, e);
    let norm = glo.abs().max(ghi.abs());
    let pad = 1e-10 * norm.max(1.0);
    let (c_lo, c_hi) = (sturm_count(d, e, lo), sturm_count(d, e, hi));
    let mut values: Vec<f64> = Vec::new();
    let mut tvecs: Vec<Vec<f64>> = Vec::new();
    let cluster_gap = 1e-3 * norm.max(1.0);
    for k in c_lo..c_hi {
        let lam = bisect_eigenvalue(d, e, k, glo - pad, ghi + pad);
        // inverse iteration from a fixed start, reorthogonalized within a cluster
        let mut y: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7 + k * 13) % 17) as f64 / 17.0).collect();
        normalize(&mut y);
        let sigma = lam + f64::EPSILON * norm.max(1.0) * if k % 2 == 0 { 1.0 } else { -1.0 };
        for _ in 0..4 {
            y = tri_solve(d, e, sigma, &y);
            for (j, prev) in tvecs.iter().enumerate() {
                if (values[j] - lam).abs() < cluster_gap {
                    let p = kahan_dot(&y, prev);
                    for (a, b) in y.iter_mut().zip(prev) {
                        *a -= p * b;
                    }
                }
            }
            normalize(&mut y);
        }
        values.push(lam);
        tvecs.push(y);
    }
    let vectors: Vec<Vec<f64>> = tvecs
        .iter()
        .map(|y| (0..n).map(|r| kahan_dot(&t.q[r * n..(r + 1) * n], y)).collect())
        .collect();
    if values.is_empty() {
        return Ok(EigenDecomposition { values, vectors, residual_bound: 0.0, norm, source: Some(h.meta.clone()) });
    }
    finish(h, values, vectors, norm, opts)
}
