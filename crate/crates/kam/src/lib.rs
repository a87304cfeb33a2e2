//! Quantitative KAM for SL(2,R) cocycles close to constants.
//!
//! Cocycles are carried as (α, A·e^{f(θ)}) with A constant and f a small
//! sl(2,R)-valued trigonometric polynomial. One step conjugates by e^Y
//! (non-resonant) or by P·e^Y·R_{⟨n,θ⟩/2} (resonant); the remainder is
//! recomputed from expm1/log1p products so that its size is resolved far
//! below the rounding level of the constant part.

use quasilab_arithmetics::{certify_dc, dc_alpha_check, l1_norm, torus_dist, FrequencyVector};
use quasilab_cocycle::mat2::{expm_traceless, logm_sl2, m_inverse, m_matrix, su11_params};
use quasilab_cocycle::{
    phase_grid, rotation_number_weighted, Cocycle, CocycleError, CocycleMap, CMat2, MatPoly, Mat2, C64,
};
use serde::Serialize;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KamError {
    #[error("smallness gate failed: eps = {eps:e} > bound {bound:e}")]
    SmallnessGateFailed { eps: f64, bound: f64 },
    #[error("several resonances {0:?} in one step")]
    MultipleResonances(Vec<Vec<i64>>),
    #[error("constant part is hyperbolic (trace {0})")]
    Hyperbolic(f64),
    #[error("gate failed: {0}")]
    GateFailed(String),
    #[error("step cap {steps} reached at eps = {eps:e}")]
    StepCapReached { steps: usize, eps: f64 },
    #[error("resonance {n:?} repeated at step {step}")]
    DcViolatedMidRun { step: usize, n: Vec<i64> },
    #[error("rotation number not bracketed: rho({lo}) = {rho_lo}, rho({hi}) = {rho_hi}")]
    NotBracketed { lo: f64, hi: f64, rho_lo: f64, rho_hi: f64 },
    #[error("rotation number not monotone at E = {0}")]
    NonMonotone(f64),
    #[error("remainder left the log1p domain (norm {0})")]
    RemainderTooLarge(f64),
    #[error("decomposition failed: {0}")]
    Decomposition(String),
    #[error(transparent)]
    Cocycle(#[from] CocycleError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, KamError>;

/// Series tolerance for expm1/log1p.
pub const SERIES_TOL: f64 = 1e-14;

/// A constant SL(2,R) matrix with its rotation angle and su(1,1) parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantCocycle {
    pub a: [[f64; 2]; 2],
    /// σ(A) = {e^{±2πiξ}}; None for hyperbolic A.
    pub xi: Option<f64>,
    /// A = M⁻¹ exp[[it, ν], [ν̄, −it]] M; None when A is too close to −I
    /// for the principal logarithm.
    pub t: Option<f64>,
    pub nu: Option<[f64; 2]>,
}

impl ConstantCocycle {
    pub fn new(a: Mat2) -> Self {
        let tr = a.trace();
        let xi = if tr.abs() <= 2.0 {
            let s = if a.0[1][0] < 0.0 { -1.0 } else { 1.0 };
            Some(s * (tr / 2.0).clamp(-1.0, 1.0).acos() / (2.0 * PI))
        } else {
            None
        };
        let (t, nu) = if tr > -2.0 + 1e-9 {
            let (t, nu) = su11_params(&logm_sl2(&a.complex()).re().complex());
            (Some(t), Some([nu.re, nu.im]))
        } else {
            (None, None)
        };
        ConstantCocycle { a: a.0, xi, t, nu }
    }

    pub fn mat(&self) -> Mat2 {
        Mat2(self.a)
    }

    pub fn nu_c(&self) -> Option<C64> {
        self.nu.map(|v| C64::new(v[0], v[1]))
    }

    /// M⁻¹ exp[[it, ν], [ν̄, −it]] M.
    pub fn from_su11(&self) -> Option<Mat2> {
        let (t, nu) = (self.t?, self.nu_c()?);
        let w = CMat2::new(C64::new(0.0, t), nu, nu.conj(), C64::new(0.0, -t));
        Some((m_inverse() * expm_traceless(&w) * m_matrix()).re())
    }
}

/// P with P⁻¹AP = R_ξ for elliptic A (|trace| < 2).
pub fn normalize_to_rotation(a: &Mat2) -> Option<(Mat2, f64)> {
    let cs = a.trace() / 2.0;
    if cs.abs() >= 1.0 {
        return None;
    }
    let xi = ConstantCocycle::new(*a).xi?;
    let s = (2.0 * PI * xi).sin();
    let j11 = (a.0[0][0] - cs) / s;
    let j21 = a.0[1][0] / s;
    if j21 <= 0.0 {
        return None;
    }
    let r = j21.sqrt();
    Some((Mat2([[1.0 / r, j11 / r], [0.0, r]]), xi))
}

/// R_{⟨n,θ⟩/2} on the half lattice.
pub fn half_rotation_poly(n: &[i64]) -> MatPoly {
    let d = n.len();
    let band = n.iter().map(|v| v.unsigned_abs() as usize).max().unwrap_or(0);
    let mut q = MatPoly::zeros(d, band).reinterpret_half();
    let neg: Vec<i64> = n.iter().map(|v| -v).collect();
    let half = C64::new(0.5, 0.0);
    let ih = C64::new(0.0, 0.5);
    q.add_to(n, CMat2::new(half, ih, -ih, half));
    q.add_to(&neg, CMat2::new(half, -ih, ih, half));
    q
}

fn coords(x: &CMat2) -> [C64; 3] {
    [x.0[0][0], x.0[0][1], x.0[1][0]]
}

fn from_coords(c: [C64; 3]) -> CMat2 {
    CMat2::new(c[0], c[1], c[2], -c[0])
}

/// X ↦ A⁻¹XA on traceless matrices, in (x₁₁, x₁₂, x₂₁) coordinates.
fn adjoint_matrix(a: &CMat2) -> [[C64; 3]; 3] {
    let ainv = a.inv();
    let mut l = [[C64::new(0.0, 0.0); 3]; 3];
    for k in 0..3 {
        let mut e = [C64::new(0.0, 0.0); 3];
        e[k] = C64::new(1.0, 0.0);
        let col = coords(&(ainv * from_coords(e) * *a));
        for i in 0..3 {
            l[i][k] = col[i];
        }
    }
    l
}

fn solve3(mut m: [[C64; 3]; 3], mut r: [C64; 3]) -> Option<[C64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| m[i][col].norm().total_cmp(&m[j][col].norm()))?;
        if m[piv][col].norm() == 0.0 {
            return None;
        }
        m.swap(col, piv);
        r.swap(col, piv);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                let v = m[col][k];
                m[row][k] -= f * v;
            }
            let v = r[col];
            r[row] -= f * v;
        }
    }
    let mut x = [C64::new(0.0, 0.0); 3];
    for i in (0..3).rev() {
        let mut s = r[i];
        for k in i + 1..3 {
            s -= m[i][k] * x[k];
        }
        x[i] = s / m[i][i];
    }
    Some(x)
}

/// Per-mode solution of A⁻¹Y(θ+α)A − Y(θ) = F(θ) over 0 < |n|₁ ≤ `n_cut`.
#[derive(Debug, Clone)]
pub struct HomologicalSolution {
    pub y: MatPoly,
    /// (mode, ‖ŷ(n)‖) for every solved mode.
    pub mode_sizes: Vec<(Vec<i64>, f64)>,
}

/// Solve the truncated homological equation mode by mode. `a` is the
/// constant in whichever frame `f` is written; `exclude` lists
/// (coordinate, mode) pairs left unsolved, coordinates (0, 1, 2) = (11, 12, 21).
pub fn solve_homological(
    f: &MatPoly,
    a: &CMat2,
    alpha: &FrequencyVector,
    n_cut: usize,
    exclude: &[(usize, Vec<i64>)],
) -> Result<HomologicalSolution> {
    if f.is_half() {
        return Err(KamError::InvalidArgument("homological equation needs integer modes".into()));
    }
    let d = f.dim();
    let l = adjoint_matrix(a);
    let mut y = MatPoly::zeros(d, f.band());
    let mut sizes = Vec::new();
    for (idx, c) in f.coeffs().iter().enumerate() {
        let m = f.mode(idx);
        let m = &m[..d];
        let size = l1_norm(m);
        if size == 0 || size as usize > n_cut {
            continue;
        }
        let z = C64::from_polar(1.0, 2.0 * PI * alpha.dot(m));
        let mut sys = [[C64::new(0.0, 0.0); 3]; 3];
        for i in 0..3 {
            for k in 0..3 {
                sys[i][k] = z * l[i][k] - if i == k { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
            }
        }
        let mut rhs = coords(c);
        let skip: Vec<usize> = exclude.iter().filter(|(_, n)| n.as_slice() == m).map(|(k, _)| *k).collect();
        for &k in &skip {
            rhs[k] = C64::new(0.0, 0.0);
        }
        let mut sol = solve3(sys, rhs).ok_or_else(|| KamError::InvalidArgument(format!("singular mode {m:?}")))?;
        for &k in &skip {
            sol[k] = C64::new(0.0, 0.0);
        }
        let ym = from_coords(sol);
        sizes.push((m.to_vec(), ym.norm()));
        y.set(m, ym);
    }
    Ok(HomologicalSolution { y, mode_sizes: sizes })
}

fn to_su11_poly(p: &MatPoly) -> MatPoly {
    p.conjugate_const(&m_matrix(), &m_inverse())
}

fn from_su11_poly(p: &MatPoly) -> MatPoly {
    p.conjugate_const(&m_inverse(), &m_matrix())
}

/// e^X − I for traceless X, accurate when X is tiny.
pub fn expm1_traceless(x: &CMat2) -> CMat2 {
    let s2 = -x.det();
    let s = s2.sqrt();
    let one = C64::new(1.0, 0.0);
    let sh = if s.norm() < 1e-4 { one + s2 / 6.0 + s2 * s2 / 120.0 } else { s.sinh() / s };
    // cosh s − 1 = 2 sinh²(s/2)
    let half = s * 0.5;
    let sh2 = if half.norm() < 1e-4 { one + half * half / 6.0 } else { half.sinh() / half };
    let cm1 = s2 * sh2 * sh2 * 0.5;
    CMat2::IDENTITY.scale(cm1) + x.scale(sh)
}

/// (I + a)(I + b) − I.
fn comb(a: &MatPoly, b: &MatPoly) -> MatPoly {
    a.add(b).add(&a.mul(b))
}

fn const_poly(dim: usize, m: CMat2) -> MatPoly {
    MatPoly::constant(dim, 0, m)
}

fn neg(p: &MatPoly) -> MatPoly {
    p.scale_re(-1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ResonanceRule {
    /// n is resonant when the solved mode ŷ(n) exceeds eps^σ in norm.
    Effect { sigma: f64 },
    /// n is resonant when dist(⟨n,α⟩ ∓ 2ξ) < eps^p.
    Divisor { exponent: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KamOptions {
    pub c0: f64,
    /// None: κ′/100 with κ′ from `certify_dc(α, τ, 200)`.
    pub d0: Option<f64>,
    pub tau: f64,
    /// Proceed past a failed smallness gate (recorded per step).
    pub force: bool,
    pub rule: ResonanceRule,
    /// Fourier band of f and Y; B carries twice this.
    pub band: usize,
    pub series_tol: f64,
    pub target_eps: f64,
    pub step_cap: usize,
    /// (κ, τ) for the DC_α check of the rotation number.
    pub rot_dc: Option<(f64, f64)>,
    pub dc_bound: i64,
    /// Rotation number of the input cocycle, if already known.
    pub rho: Option<f64>,
    pub rho_iterates: usize,
    /// Grid residual after each step (64 points).
    pub check_residual: bool,
}

impl Default for KamOptions {
    fn default() -> Self {
        KamOptions {
            c0: 4.0,
            d0: None,
            tau: 1.0,
            force: false,
            rule: ResonanceRule::Effect { sigma: 0.5 },
            band: 40,
            series_tol: SERIES_TOL,
            target_eps: 1e-24,
            step_cap: 40,
            rot_dc: None,
            dc_bound: 200,
            rho: None,
            rho_iterates: 100_000,
            check_residual: true,
        }
    }
}

impl KamOptions {
    pub fn d0_for(&self, alpha: &FrequencyVector) -> Result<f64> {
        if let Some(d0) = self.d0 {
            return Ok(d0);
        }
        let tau = self.tau.max(alpha.dim() as f64 - 1.0 + 1e-9);
        let cert = certify_dc(alpha, tau, 200).map_err(|e| KamError::InvalidArgument(e.to_string()))?;
        Ok(cert.kappa_prime / 100.0)
    }
}

/// ε-bound D₀/‖A‖^{C₀}·(min{1,1/h}(h − h₊))^{C₀τ}.
pub fn gate_bound(norm_a: f64, h: f64, h_next: f64, tau: f64, c0: f64, d0: f64) -> f64 {
    d0 / norm_a.powf(c0) * ((1.0f64).min(1.0 / h) * (h - h_next)).powf(c0 * tau)
}

/// N_j = ⌈2|ln ε|/(h − h₊)⌉, capped at `band`.
pub fn mode_cutoff(eps: f64, h: f64, h_next: f64, band: usize) -> usize {
    if eps <= 0.0 || eps >= 1.0 {
        return band;
    }
    let n = (2.0 * eps.ln().abs() / (h - h_next)).ceil();
    if n.is_finite() && n < band as f64 {
        n as usize
    } else {
        band
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResonanceEvent {
    pub step: usize,
    pub n: Vec<i64>,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KamState {
    pub step: usize,
    pub a: ConstantCocycle,
    pub f: MatPoly,
    pub h: f64,
    pub eps: f64,
    /// Cutoff used by the step that produced this state.
    pub n_cut: usize,
    pub b: MatPoly,
    pub deg: Vec<i64>,
    pub resonance_log: Vec<ResonanceEvent>,
    /// B = b_pre · R_{⟨ell,θ⟩/2} · post.
    pub b_pre: MatPoly,
    pub post: MatPoly,
    pub ell: Vec<i64>,
}

impl KamState {
    /// Start with B = id at radius h; B is stored at band `b_band`.
    pub fn new(a: Mat2, f: MatPoly, h: f64, b_band: usize) -> Self {
        let d = f.dim();
        let eps = f.norm_h(h);
        let id = MatPoly::identity(d, b_band);
        KamState {
            step: 0,
            a: ConstantCocycle::new(a),
            f,
            h,
            eps,
            n_cut: 0,
            b: id.clone(),
            deg: vec![0; d],
            resonance_log: Vec::new(),
            b_pre: id.clone(),
            post: id,
            ell: vec![0; d],
        }
    }

    /// Conjugate by a constant P: A ↦ P⁻¹AP, f ↦ P⁻¹fP, B ↦ BP.
    pub fn conjugate_constant(&self, p: &Mat2) -> Self {
        let (pc, pi) = (p.complex(), p.inv().complex());
        let mut s = self.clone();
        s.a = ConstantCocycle::new(p.inv() * self.a.mat() * *p);
        s.f = self.f.conjugate_const(&pi, &pc).real_part();
        s.eps = s.f.norm_h(s.h);
        s.b = self.b.rmul_const(&pc);
        s.b_pre = self.b_pre.rmul_const(&pc);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StepCase {
    NonResonant,
    Resonant,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub case: StepCase,
    pub h: f64,
    pub h_next: f64,
    pub eps_in: f64,
    pub eps_out: f64,
    pub n_cut: usize,
    pub resonance: Option<Vec<i64>>,
    /// Further flagged modes in the same step (mapped to ⟨n,α⟩ ≈ 2ξ).
    pub other_resonances: Vec<Vec<i64>>,
    pub gate_bound: f64,
    pub gate_ok: bool,
    pub y_norm: f64,
    pub b_step_norm: f64,
    /// eps_out / eps_in²: at most 10 is the bookkeeping target.
    pub contraction_slack: f64,
    /// Mass dropped when the resonant shift pushed modes out of the band.
    pub truncated: f64,
    pub a_shift: f64,
    pub t_plus: Option<f64>,
    pub nu_plus: Option<f64>,
    pub residual: Option<f64>,
}

fn flagged_modes(
    sol: &HomologicalSolution,
    eps: f64,
    xi: Option<f64>,
    alpha: &FrequencyVector,
    rule: ResonanceRule,
) -> Vec<Vec<i64>> {
    match rule {
        ResonanceRule::Effect { sigma } => {
            let thr = eps.powf(sigma);
            sol.mode_sizes.iter().filter(|(_, s)| *s > thr || !s.is_finite()).map(|(m, _)| m.clone()).collect()
        }
        ResonanceRule::Divisor { exponent } => {
            let Some(xi) = xi else { return Vec::new() };
            let thr = eps.powf(exponent);
            sol.mode_sizes
                .iter()
                .filter(|(m, _)| {
                    let p = alpha.dot(m);
                    torus_dist(p - 2.0 * xi) < thr || torus_dist(p + 2.0 * xi) < thr
                })
                .map(|(m, _)| m.clone())
                .collect()
        }
    }
}

/// Map each flagged mode to ±n with ⟨n,α⟩ ≈ 2ξ and order by (|n|₁, divisor).
fn resonance_candidates(flags: &[Vec<i64>], xi: f64, alpha: &FrequencyVector) -> Vec<Vec<i64>> {
    let mut out: Vec<(i64, f64, Vec<i64>)> = Vec::new();
    for n in flags {
        let minus: Vec<i64> = n.iter().map(|v| -v).collect();
        let dp = torus_dist(alpha.dot(n) - 2.0 * xi);
        let dm = torus_dist(alpha.dot(&minus) - 2.0 * xi);
        let (m, dist) = if dp <= dm { (n.clone(), dp) } else { (minus, dm) };
        if !out.iter().any(|(_, _, x)| *x == m) {
            out.push((l1_norm(&m), dist, m));
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    out.into_iter().map(|(_, _, m)| m).collect()
}

/// Max over 64 phases of ‖B(θ+α)⁻¹A₀e^{f₀(θ)}B(θ) − A e^{f(θ)}‖.
pub fn conjugacy_residual(b: &MatPoly, a0: &Mat2, f0: &MatPoly, a: &Mat2, f: &MatPoly, alpha: &FrequencyVector) -> f64 {
    let d = b.dim();
    let (a0, a) = (a0.complex(), a.complex());
    let mut worst: f64 = 0.0;
    for x in phase_grid(d, 64, 0) {
        let xs: Vec<f64> = x.iter().zip(&alpha.components).map(|(t, s)| t + s).collect();
        let lhs = b.eval(&xs).inv() * a0 * expm_traceless(&f0.eval(&x)) * b.eval(&x);
        let rhs = a * expm_traceless(&f.eval(&x));
        worst = worst.max((lhs - rhs).norm());
    }
    worst
}

/// One KAM step from radius `state.h` to `h_next`.
pub fn kam_step(state: &KamState, h_next: f64, alpha: &FrequencyVector, opts: &KamOptions) -> Result<(KamState, StepRecord)> {
    if !(h_next < state.h && h_next > 0.0) {
        return Err(KamError::InvalidArgument(format!("need 0 < h_next = {h_next} < h = {}", state.h)));
    }
    let d = state.f.dim();
    let eps = state.f.norm_h(state.h);
    let a = state.a.mat();
    let gate = gate_bound(a.norm(), state.h, h_next, opts.tau, opts.c0, opts.d0_for(alpha)?);
    let gate_ok = eps <= gate;
    if !gate_ok && !opts.force {
        return Err(KamError::SmallnessGateFailed { eps, bound: gate });
    }
    let mut rec = StepRecord {
        step: state.step,
        case: StepCase::NonResonant,
        h: state.h,
        h_next,
        eps_in: eps,
        eps_out: 0.0,
        n_cut: 0,
        resonance: None,
        other_resonances: Vec::new(),
        gate_bound: gate,
        gate_ok,
        y_norm: 0.0,
        b_step_norm: 1.0,
        contraction_slack: 0.0,
        truncated: 0.0,
        a_shift: 0.0,
        t_plus: state.a.t,
        nu_plus: state.a.nu_c().map(|v| v.norm()),
        residual: None,
    };
    let mut next = state.clone();
    next.step += 1;
    next.h = h_next;
    if eps == 0.0 {
        next.eps = 0.0;
        return Ok((next, rec));
    }
    let n_cut = mode_cutoff(eps, state.h, h_next, opts.band);
    rec.n_cut = n_cut;
    next.n_cut = n_cut;
    let ac = a.complex();
    let sol = solve_homological(&state.f, &ac, alpha, n_cut, &[])?;
    let flags = flagged_modes(&sol, eps, state.a.xi, alpha, opts.rule);
    let tol = opts.series_tol;
    let band = state.f.band().max(opts.band);

    if flags.is_empty() {
        let y = sol.y.real_part();
        let c = state.f.mean();
        let yp = y.shift(&alpha.components).conjugate_const(&ac.inv(), &ac);
        let ec = const_poly(d, expm1_traceless(&-c));
        let g = comb(&comb(&comb(&ec, &neg(&yp).expm1(h_next, tol)), &state.f.expm1(state.h, tol)), &y.expm1(h_next, tol))
            .with_band(band);
        let gn = g.norm_h(h_next);
        if gn >= 1.0 {
            return Err(KamError::RemainderTooLarge(gn));
        }
        let f_plus = g.log1p(h_next, tol).traceless().real_part();
        let a_plus = (ac * expm_traceless(&c)).re();
        let ey = y.expm(h_next, tol);
        next.a = ConstantCocycle::new(a_plus);
        next.f = f_plus;
        next.eps = next.f.norm_h(h_next);
        next.b = state.b.mul(&ey);
        next.post = state.post.mul(&ey);
        rec.y_norm = y.norm_h(h_next);
        rec.b_step_norm = ey.norm_h(h_next);
        rec.a_shift = (a_plus - a).complex().norm();
    } else {
        let xi = state.a.xi.ok_or(KamError::Hyperbolic(a.trace()))?;
        let cands = resonance_candidates(&flags, xi, alpha);
        let nstar = cands[0].clone();
        if state.resonance_log.last().is_some_and(|e| e.step + 1 == state.step && e.n == nstar) {
            return Err(KamError::DcViolatedMidRun { step: state.step, n: nstar });
        }
        rec.case = StepCase::Resonant;
        rec.resonance = Some(nstar.clone());
        rec.other_resonances = cands[1..].to_vec();

        // normalize to R_ξ, then solve in su(1,1) coordinates without the resonant pair
        let (p, xi) = normalize_to_rotation(&a).ok_or(KamError::Hyperbolic(a.trace()))?;
        let (pc, pinv) = (p.complex(), p.inv().complex());
        let fp = state.f.conjugate_const(&pinv, &pc).real_part();
        let r = Mat2::rotation(xi).complex();
        let rhat = m_matrix() * r * m_inverse();
        let minus: Vec<i64> = nstar.iter().map(|v| -v).collect();
        let exclude = vec![(2usize, nstar.clone()), (1usize, minus)];
        let solw = solve_homological(&to_su11_poly(&fp), &rhat, alpha, n_cut, &exclude)?;
        let y = from_su11_poly(&solw.y).real_part();
        let yp = y.shift(&alpha.components).conjugate_const(&r.inv(), &r);
        let g = comb(&comb(&neg(&yp).expm1(h_next, tol), &fp.expm1(state.h, tol)), &y.expm1(h_next, tol)).with_band(band);
        let gn = g.norm_h(h_next);
        if gn >= 1.0 {
            return Err(KamError::RemainderTooLarge(gn));
        }
        let ft = g.log1p(h_next, tol).traceless().real_part();

        // Q⁻¹ f̃ Q with Q = R_{⟨n*,θ⟩/2}: in su(1,1) coordinates the off-diagonal
        // entries move by ∓n*
        let shift = nstar.iter().map(|v| v.unsigned_abs() as usize).max().unwrap_or(0);
        let w = to_su11_poly(&ft).with_band(band + shift);
        let e11 = w.entry(0, 0);
        let e22 = w.entry(1, 1);
        let e12 = w.entry(0, 1).mode_shift(&nstar);
        let e21 = w.entry(1, 0).mode_shift(&nstar.iter().map(|v| -v).collect::<Vec<_>>());
        let wq = MatPoly::from_entries([[&e11, &e12], [&e21, &e22]]);
        let fq_full = from_su11_poly(&wq).real_part();
        let fq = fq_full.with_band(band);
        rec.truncated = fq_full.norm_h(h_next) - fq.norm_h(h_next);
        let xi_new = xi - alpha.dot(&nstar) / 2.0;
        let cq = fq.mean();
        let ecq = const_poly(d, expm1_traceless(&-cq));
        let g2 = comb(&ecq, &fq.expm1(h_next, tol)).with_band(band);
        let gn2 = g2.norm_h(h_next);
        if gn2 >= 1.0 {
            return Err(KamError::RemainderTooLarge(gn2));
        }
        let f_plus = g2.log1p(h_next, tol).traceless().real_part();
        let a_plus = (Mat2::rotation(xi_new).complex() * expm_traceless(&cq)).re();
        let ey = y.expm(h_next, tol);
        let q = half_rotation_poly(&nstar);
        let pre = state.b.rmul_const(&pc).mul(&ey);
        next.b = pre.mul(&q);
        next.b_pre = pre;
        next.post = MatPoly::identity(d, state.post.band());
        next.ell = nstar.clone();
        for (g, n) in next.deg.iter_mut().zip(&nstar) {
            *g += n;
        }
        next.resonance_log.push(ResonanceEvent { step: state.step, n: nstar, eps });
        next.a = ConstantCocycle::new(a_plus);
        next.f = f_plus;
        next.eps = next.f.norm_h(h_next);
        rec.y_norm = y.norm_h(h_next);
        rec.b_step_norm = ey.lmul_const(&pc).norm_h(h_next);
        rec.a_shift = (a_plus - a).complex().norm();
    }
    rec.eps_out = next.eps;
    rec.contraction_slack = next.eps / (eps * eps);
    rec.t_plus = next.a.t;
    rec.nu_plus = next.a.nu_c().map(|v| v.norm());
    Ok((next, rec))
}

/// Split of the accumulated conjugacy B = B̃·R_{⟨ℓ,θ⟩/2}·e^Y at the last resonance.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjugacyDecomposition {
    pub b_tilde: MatPoly,
    pub ell: Vec<i64>,
    pub y: MatPoly,
    pub nu: C64,
    pub deg_btilde: Vec<i64>,
    pub h_tilde: f64,
    pub norms: DecompositionNorms,
    pub estimates: EstimateReport,
    /// Grid distance between B̃·R·e^Y and the accumulated B.
    pub reconstruction_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionNorms {
    pub b_tilde: f64,
    pub y: f64,
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct EstimateReport {
    pub es1_y: bool,
    pub es1_nu: bool,
    pub es2: Option<bool>,
    pub es3: Option<bool>,
    pub eigenvalue_gap: Option<bool>,
    pub violations: Vec<String>,
}

impl ConjugacyDecomposition {
    /// B̃·R_{⟨ℓ,θ⟩/2}·e^Y as a polynomial (half lattice when ℓ has odd entries).
    pub fn assemble(&self, tol: f64) -> MatPoly {
        self.b_tilde.mul(&half_rotation_poly(&self.ell)).mul(&self.y.expm(self.h_tilde, tol))
    }
}

/// Serializable summary of a decomposition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionSummary {
    pub ell: Vec<i64>,
    pub nu: [f64; 2],
    pub deg_btilde: Vec<i64>,
    pub h_tilde: f64,
    pub norms: DecompositionNorms,
    pub estimates: EstimateReport,
    pub reconstruction_error: f64,
}

impl From<&ConjugacyDecomposition> for DecompositionSummary {
    fn from(d: &ConjugacyDecomposition) -> Self {
        DecompositionSummary {
            ell: d.ell.clone(),
            nu: [d.nu.re, d.nu.im],
            deg_btilde: d.deg_btilde.clone(),
            h_tilde: d.h_tilde,
            norms: d.norms.clone(),
            estimates: d.estimates.clone(),
            reconstruction_error: d.reconstruction_error,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReductionRun {
    pub decomposition: ConjugacyDecomposition,
    pub a_final: ConstantCocycle,
    pub states: Vec<KamState>,
    pub records: Vec<StepRecord>,
    pub trace: RunTrace,
}

/// JSON trace of a reducibility run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunTrace {
    pub h: f64,
    pub h_tilde: f64,
    pub eps0: f64,
    pub initial_gate_bound: f64,
    pub initial_gate_ok: bool,
    pub forced: bool,
    pub rho: Option<f64>,
    pub rho_dc: Option<bool>,
    pub steps: Vec<StepRecord>,
    pub a_final: ConstantCocycle,
    pub final_eps: f64,
    pub final_residual: f64,
    pub b_norm: f64,
    pub deg: Vec<i64>,
    pub resonances: Vec<ResonanceEvent>,
    pub spacing_ok: bool,
    pub decomposition: DecompositionSummary,
}

impl RunTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

/// Split a cocycle map into A₀·e^{f₀}.
pub fn constant_plus_perturbation(c: &Cocycle, band: usize, tol: f64) -> Result<(Mat2, MatPoly)> {
    let d = c.dim();
    match &c.map {
        CocycleMap::Constant(a) => Ok((*a, MatPoly::zeros(d, band))),
        CocycleMap::Schrodinger { energy, potential } => {
            // S = A₀(I + [[0,0],[V − V̂(0),0]]) and that factor is exp of its nilpotent part
            let v0 = potential.mean().re;
            let a0 = Mat2::schrodinger(energy - v0);
            let mut vt = potential.clone();
            vt.set(&vec![0; d], C64::new(0.0, 0.0));
            let z = vt.scale_re(0.0);
            let f0 = MatPoly::from_entries([[&z, &z], [&vt, &z]]).with_band(band.max(vt.band()));
            Ok((a0, f0.real_part()))
        }
        CocycleMap::Poly(p) => {
            let mean = p.mean();
            let det = mean.det();
            if det.re <= 0.0 {
                return Err(KamError::InvalidArgument("mean of the map has nonpositive determinant".into()));
            }
            let a0 = mean.scale_re(1.0 / det.re.sqrt()).re();
            let g = p.lmul_const(&a0.inv().complex()).sub(&MatPoly::identity(d, 0)).with_band(band.max(p.band()));
            let gn = g.norm_h(0.0);
            if gn >= 1.0 {
                return Err(KamError::RemainderTooLarge(gn));
            }
            Ok((a0, g.log1p(0.0, tol).traceless().real_part()))
        }
    }
}

/// Radius after step j of the schedule h_j − h_{j+1} = (h − (h+h̃)/2)/4^{j+1}.
pub fn radius_schedule(h: f64, h_tilde: f64, steps: usize) -> Vec<f64> {
    let gap = h - (h + h_tilde) / 2.0;
    let mut out = vec![h];
    let mut cur = h;
    for j in 0..steps {
        cur -= gap / 4f64.powi(j as i32 + 1);
        out.push(cur);
    }
    out
}

/// Iterate KAM steps on `c` at radius `h` until eps < `opts.target_eps`,
/// then split the conjugacy at the last resonance; norms are taken at `h_tilde`.
pub fn reduce_to_constant(c: &Cocycle, h: f64, h_tilde: f64, opts: &KamOptions) -> Result<ReductionRun> {
    if !(h_tilde > 0.0 && h_tilde < h) {
        return Err(KamError::InvalidArgument(format!("need 0 < h_tilde = {h_tilde} < h = {h}")));
    }
    let alpha = &c.frequency;
    let tol = opts.series_tol;
    let (a0, f0) = constant_plus_perturbation(c, opts.band, tol)?;
    let eps0 = f0.norm_h(h);
    let sched = radius_schedule(h, h_tilde, opts.step_cap + 1);
    let d0 = opts.d0_for(alpha)?;
    let gate0 = gate_bound(a0.norm(), h, sched[1], opts.tau, opts.c0, d0);
    let gate_ok = eps0 <= gate0;
    if !gate_ok && !opts.force && eps0 >= opts.target_eps {
        return Err(KamError::GateFailed(format!("eps0 = {eps0:e} exceeds {gate0:e}")));
    }

    let (rho, rho_dc) = match opts.rot_dc {
        Some((kappa, tau)) if eps0 > 0.0 => {
            let rho = match opts.rho {
                Some(r) => r,
                None => rotation_number_weighted(c, opts.rho_iterates)?,
            };
            let ok = dc_alpha_check(rho, alpha, kappa, tau, opts.dc_bound);
            if !ok && !opts.force {
                return Err(KamError::GateFailed(format!("rotation number {rho} fails DC_alpha({kappa}, {tau})")));
            }
            (Some(rho), Some(ok))
        }
        _ => (opts.rho, None),
    };

    let mut state = KamState::new(a0, f0.clone(), h, 2 * opts.band);
    if eps0 >= opts.target_eps {
        if let Some((p, _)) = normalize_to_rotation(&a0) {
            state = state.conjugate_constant(&p);
        }
    }
    let mut states = vec![state.clone()];
    let mut records = Vec::new();
    let mut j = 0;
    while state.eps >= opts.target_eps {
        if j >= opts.step_cap {
            return Err(KamError::StepCapReached { steps: j, eps: state.eps });
        }
        let (next, mut rec) = kam_step(&state, sched[j + 1], alpha, opts)?;
        if opts.check_residual {
            rec.residual = Some(conjugacy_residual(&next.b, &a0, &f0, &next.a.mat(), &next.f, alpha));
        }
        records.push(rec);
        state = next;
        states.push(state.clone());
        j += 1;
    }

    let decomposition = decompose(&state, h, h_tilde, alpha, rho, opts)?;
    let final_residual = conjugacy_residual(&state.b, &a0, &f0, &state.a.mat(), &state.f, alpha);
    let (spacing_ok, _) = resonance_spacing_check(&state.resonance_log, opts.tau);
    let trace = RunTrace {
        h,
        h_tilde,
        eps0,
        initial_gate_bound: gate0,
        initial_gate_ok: gate_ok,
        forced: opts.force,
        rho,
        rho_dc,
        steps: records.clone(),
        a_final: state.a.clone(),
        final_eps: state.eps,
        final_residual,
        b_norm: state.b.norm_h(0.0),
        deg: state.deg.clone(),
        resonances: state.resonance_log.clone(),
        spacing_ok,
        decomposition: (&decomposition).into(),
    };
    Ok(ReductionRun { decomposition, a_final: state.a.clone(), states, records, trace })
}

fn decompose(
    state: &KamState,
    h: f64,
    h_tilde: f64,
    alpha: &FrequencyVector,
    rho: Option<f64>,
    opts: &KamOptions,
) -> Result<ConjugacyDecomposition> {
    let d = state.f.dim();
    let g = state.post.sub(&MatPoly::identity(d, 0));
    let gn = g.norm_h(h_tilde);
    if gn >= 1.0 {
        return Err(KamError::Decomposition(format!("post-resonance conjugacy too far from identity ({gn})")));
    }
    let y = g.log1p(h_tilde, opts.series_tol).traceless().real_part();
    let ell = state.ell.clone();
    let deg_btilde: Vec<i64> = state.deg.iter().zip(&ell).map(|(a, b)| a - b).collect();
    let nu = state.a.nu_c().unwrap_or(C64::new(f64::NAN, f64::NAN));
    let norms = DecompositionNorms { b_tilde: state.b_pre.norm_h(h_tilde), y: y.norm_h(h_tilde), nu: nu.norm() };
    let ell_size = l1_norm(&ell) as f64;
    let bound = (-2.0 * PI * ell_size * h_tilde).exp();
    let mut est = EstimateReport { es1_y: norms.y <= bound, es1_nu: norms.nu <= 2.0 * bound, ..Default::default() };
    if !est.es1_y {
        est.violations.push(format!("es1: |Y| = {:e} > {:e}", norms.y, bound));
    }
    if !est.es1_nu {
        est.violations.push(format!("es1: |nu| = {:e} > {:e}", norms.nu, 2.0 * bound));
    }
    if let Some((kappa, tau)) = opts.rot_dc {
        let lk = kappa.ln().abs();
        let b2 = lk.powf(tau) * kappa.powf(-2.0 * (h - h_tilde) / h_tilde);
        est.es2 = Some(norms.b_tilde < b2);
        if est.es2 == Some(false) {
            est.violations.push(format!("es2: |B~| = {:e} >= {:e}", norms.b_tilde, b2));
        }
        let b3 = lk.powi(4) / (h - h_tilde);
        est.es3 = Some(ell_size <= b3);
        if est.es3 == Some(false) {
            est.violations.push(format!("es3: |ell| = {ell_size} > {b3:e}"));
        }
        if let (Some(rho), true) = (rho, ell_size > 0.0) {
            let lhs = torus_dist(2.0 * rho - alpha.dot(&ell) - alpha.dot(&deg_btilde));
            let rhs = kappa / (2f64.powf(tau) * ell_size.powf(tau));
            est.eigenvalue_gap = Some(lhs >= rhs);
            if lhs < rhs {
                est.violations.push(format!("gap: {lhs:e} < {rhs:e}"));
            }
        }
    }
    let mut dec = ConjugacyDecomposition {
        b_tilde: state.b_pre.clone(),
        ell,
        y,
        nu,
        deg_btilde,
        h_tilde,
        norms,
        estimates: est,
        reconstruction_error: 0.0,
    };
    let rebuilt = dec.assemble(opts.series_tol);
    let mut worst: f64 = 0.0;
    for x in phase_grid(d, 64, 1) {
        worst = worst.max((rebuilt.eval(&x) - state.b.eval(&x)).norm());
    }
    dec.reconstruction_error = worst;
    Ok(dec)
}

/// Successive resonances must grow: |n_{i+1}| ≥ eps_i^{−1/(18τ)}|n_i|.
pub fn resonance_spacing_check(log: &[ResonanceEvent], tau: f64) -> (bool, Vec<String>) {
    let mut diag = Vec::new();
    for w in log.windows(2) {
        let (a, b) = (l1_norm(&w[0].n) as f64, l1_norm(&w[1].n) as f64);
        let need = w[0].eps.powf(-1.0 / (18.0 * tau)) * a;
        if b < need {
            diag.push(format!("step {} -> {}: |n| = {b} < {need:.4}", w[0].step, w[1].step));
        }
    }
    (diag.is_empty(), diag)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneResult {
    pub energy: f64,
    pub rho: f64,
    pub iterations: usize,
}

/// Bisection on E for ρ(E) = target with ρ nonincreasing in E.
pub fn rotation_tune(
    builder: &dyn Fn(f64) -> Cocycle,
    target: f64,
    bracket: (f64, f64),
    iterates: usize,
) -> Result<TuneResult> {
    let (mut lo, mut hi) = bracket;
    if !(lo < hi) {
        return Err(KamError::InvalidArgument("bracket must satisfy lo < hi".into()));
    }
    let rho = |e: f64| rotation_number_weighted(&builder(e), iterates);
    let (mut r_lo, mut r_hi) = (rho(lo)?, rho(hi)?);
    let slack = 1e-9;
    if !(r_lo + slack >= target && target >= r_hi - slack) {
        return Err(KamError::NotBracketed { lo, hi, rho_lo: r_lo, rho_hi: r_hi });
    }
    let mut best = if (r_lo - target).abs() < (r_hi - target).abs() { (lo, r_lo) } else { (hi, r_hi) };
    for it in 0..200 {
        if (best.1 - target).abs() < 1e-9 || hi - lo < 1e-15 {
            return Ok(TuneResult { energy: best.0, rho: best.1, iterations: it });
        }
        let mid = 0.5 * (lo + hi);
        let r = rho(mid)?;
        if r > r_lo + slack || r < r_hi - slack {
            return Err(KamError::NonMonotone(mid));
        }
        if (r - target).abs() < (best.1 - target).abs() {
            best = (mid, r);
        }
        if r > target {
            lo = mid;
            r_lo = r;
        } else {
            hi = mid;
            r_hi = r;
        }
    }
    Ok(TuneResult { energy: best.0, rho: best.1, iterations: 200 })
}
