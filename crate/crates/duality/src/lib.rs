//! Aubry duality: eigenfunctions of the long-range operator
//! L = Σ_k V_k u_{n−k} + 2λ cos 2π(ρ + ⟨n,α⟩) u_n built from a reduced
//! Schrödinger cocycle with potential λ⁻¹V.

use quasilab_arithmetics::{torus_dist, FrequencyVector};
use quasilab_cocycle::mat2::m_inverse;
use quasilab_cocycle::{CMat2, ScalarPoly, C64};
use quasilab_kam::{ConjugacyDecomposition, ConstantCocycle};
use quasilab_localization::{certify_good, GoodCertificate, LocalizationError, C_ELL_FLOOR};
use quasilab_operators::{build_longrange, BoxIndex, OperatorError};
use serde::Serialize;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DualityError {
    #[error("inconsistent su(1,1) data: {0}")]
    InconsistentInput(String),
    #[error("rotation is rational with respect to alpha (distance {0:e})")]
    RationalRotation(f64),
    #[error("eigen-equation residual {residual:e} exceeds {tol:e}")]
    ResidualTooLarge { residual: f64, tol: f64 },
    #[error("l2 mass {mass:e} below the lower bound {bound:e}")]
    MassBelowBound { mass: f64, bound: f64 },
    #[error("demodulated coefficient left half-integer modes of size {0:e}")]
    OffLattice(f64),
    #[error("reduced rotation {reduced} does not match rho = {rho}")]
    RotationMismatch { reduced: f64, rho: f64 },
    #[error("final constant is not elliptic")]
    Hyperbolic,
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Localization(#[from] LocalizationError),
}

pub type Result<T> = std::result::Result<T, DualityError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DiagBranch {
    /// Explicit near-identity U, ρt > 0.
    Lemma,
    /// ρt < 0: the explicit U composed with the swap [[0, i], [i, 0]].
    Conjugated,
    /// Unitary eigenvector completion.
    Unitary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagonalizer {
    /// U W U⁻¹ = [[iρ, *], [0, −iρ]] with W = [[it, ν], [ν̄, −it]]; diagonal
    /// on the explicit branches.
    pub u: CMat2,
    pub branch: DiagBranch,
    /// |ν/ρ|, the certified bound on ‖U − id‖ (on the conjugated branch it
    /// bounds the explicit factor).
    pub bound: Option<f64>,
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Inverse of (1/√(1−|x|²))[[1, iν/(t+ρ)], [−iν̄/(t+ρ), 1]], x = ν/(t+ρ).
fn lemma_u(t: f64, nu: C64, rho: f64) -> CMat2 {
    let x = nu / (t + rho);
    let s = 1.0 / (1.0 - x.norm_sqr()).sqrt();
    let i = c(0.0, 1.0);
    CMat2::new(c(s, 0.0), -i * x * s, i * x.conj() * s, c(s, 0.0))
}

pub fn diagonalize_near_identity(t: f64, nu: C64, rho: f64) -> Result<Diagonalizer> {
    if !(t.is_finite() && nu.re.is_finite() && nu.im.is_finite() && rho.is_finite()) {
        return Err(DualityError::InconsistentInput("non-finite input".into()));
    }
    let defect = t * t - nu.norm_sqr() - rho * rho;
    if defect.abs() > 1e-8 * t.abs().max(1.0).powi(2) {
        return Err(DualityError::InconsistentInput(format!("t² − |ν|² − ρ² = {defect:e}")));
    }
    if rho == 0.0 {
        return Err(DualityError::InconsistentInput("rho = 0".into()));
    }
    let small = 4.0 * nu.norm() <= rho.abs();
    if small && rho * t > 0.0 {
        return Ok(Diagonalizer { u: lemma_u(t, nu, rho), branch: DiagBranch::Lemma, bound: Some(nu.norm() / rho.abs()) });
    }
    if small && rho * t < 0.0 {
        // S W S⁻¹ = [[−it, ν̄], [ν, it]]
        let s = CMat2::new(c(0.0, 0.0), c(0.0, 1.0), c(0.0, 1.0), c(0.0, 0.0));
        let u = lemma_u(-t, nu.conj(), rho) * s;
        return Ok(Diagonalizer { u, branch: DiagBranch::Conjugated, bound: Some(nu.norm() / rho.abs()) });
    }
    // kernel of W − iρ from either row, whichever is better conditioned
    let w1 = [nu, c(0.0, -(t - rho))];
    let w2 = [c(0.0, t + rho), nu.conj()];
    let n1 = (w1[0].norm_sqr() + w1[1].norm_sqr()).sqrt();
    let n2 = (w2[0].norm_sqr() + w2[1].norm_sqr()).sqrt();
    let (w, n) = if n1 >= n2 { (w1, n1) } else { (w2, n2) };
    let (a, b) = (w[0] / n, w[1] / n);
    Ok(Diagonalizer { u: CMat2::new(a.conj(), b.conj(), -b, a), branch: DiagBranch::Unitary, bound: None })
}

/// Inputs of the dual problem: V (unscaled), λ, α and the cocycle energy E.
#[derive(Debug, Clone)]
pub struct DualContext {
    pub potential: ScalarPoly,
    pub lambda: f64,
    pub alpha: FrequencyVector,
    pub energy: f64,
    /// ρ(E) when known; selects the eigenvalue branch of the final constant.
    pub rho: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct DualOptions {
    pub residual_tol: f64,
    /// Relative size allowed for half-integer modes after demodulation.
    pub lattice_tol: f64,
    pub series_tol: f64,
    /// Points per axis for the C⁰ norm of B₁.
    pub grid: usize,
    pub rational_tol: f64,
}

impl Default for DualOptions {
    fn default() -> Self {
        DualOptions { residual_tol: 1e-6, lattice_tol: 1e-10, series_tol: 1e-14, grid: 256, rational_tol: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualConstants {
    /// 8‖B̃‖⁴.
    pub c: f64,
    /// min{1, ‖Y‖ + 2|ν|/‖2ρ − ⟨ℓ+ℓ₀,α⟩‖}, floored at the certificate floor.
    pub c_ell: f64,
    pub c_ell_raw: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DualEigenfunction {
    pub dim: usize,
    pub band: usize,
    /// ẑ(n) for the sites of the box |n|_∞ ≤ band, first coordinate fastest.
    pub coefficients: Vec<[f64; 2]>,
    /// λE.
    pub energy: f64,
    /// Phase of the dual operator, ρ(E) mod 1 (or its reflection).
    pub phase: f64,
    pub ell: Vec<i64>,
    /// Total degree ℓ + ℓ₀ removed by the demodulation.
    pub degree: Vec<i64>,
    pub constants: DualConstants,
    pub residual: f64,
    pub raw_mass: f64,
    pub mass_bound: f64,
    pub branch: DiagBranch,
    pub u_deviation: f64,
}

impl DualEigenfunction {
    pub fn box_index(&self) -> BoxIndex {
        BoxIndex::new(self.dim, self.band)
    }

    pub fn coef(&self, n: &[i64]) -> C64 {
        match self.box_index().flatten(n) {
            Some(i) => c(self.coefficients[i][0], self.coefficients[i][1]),
            None => c(0.0, 0.0),
        }
    }

    pub fn as_poly(&self) -> ScalarPoly {
        let b = self.box_index();
        let modes: Vec<(Vec<i64>, C64)> = b.sites().zip(&self.coefficients).map(|(n, v)| (n, c(v[0], v[1]))).collect();
        ScalarPoly::from_modes(self.dim, &modes).with_band(self.band)
    }

    pub fn modulus(&self) -> Vec<f64> {
        self.coefficients.iter().map(|v| v[0].hypot(v[1])).collect()
    }

    /// Good-eigenfunction certificate of |ẑ| at rate `gamma`.
    pub fn certify(&self, gamma: f64, ell_search: usize) -> Result<GoodCertificate> {
        Ok(certify_good(&self.modulus(), &self.box_index(), gamma, ell_search)?)
    }

    /// Recomputes ‖(L − λE)ẑ‖₂ against a freshly assembled truncation.
    pub fn recompute_residual(&self, ctx: &DualContext) -> Result<f64> {
        residual(&self.as_poly(), ctx, self.phase)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    /// `n_1,..,n_d,re,im,abs` rows.
    pub fn profile_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.dim {
            out.push_str(&format!("n{},", i + 1));
        }
        out.push_str("re,im,abs\n");
        for (n, v) in self.box_index().sites().zip(&self.coefficients) {
            for x in n {
                out.push_str(&format!("{x},"));
            }
            out.push_str(&format!("{:e},{:e},{:e}\n", v[0], v[1], v[0].hypot(v[1])));
        }
        out
    }
}

/// Σ_k V_k ẑ(n−k) + (2λ cos 2π(ρ + ⟨n,α⟩) − λE) ẑ(n) for |n|_∞ ≤ band(z) + band(V).
pub fn apply_dual_operator(z: &ScalarPoly, v: &ScalarPoly, lambda: f64, alpha: &FrequencyVector, rho: f64, energy: f64) -> ScalarPoly {
    let d = z.dim();
    let band = z.band() + v.band();
    let mut out = ScalarPoly::zeros(d, band);
    let zt = z.terms();
    let vt = v.terms();
    for (m, zc) in &zt {
        let n = &m[..d];
        let diag = 2.0 * lambda * (2.0 * PI * (rho + alpha.dot(n))).cos() - lambda * energy;
        out.add_to(n, *zc * diag);
        for (k, vc) in &vt {
            let target: Vec<i64> = n.iter().zip(&k[..d]).map(|(a, b)| a + b).collect();
            out.add_to(&target, *vc * *zc);
        }
    }
    out
}

/// ℓ² norm of λ·(Fourier coefficients of the defect
/// z(θ−α)e^{−2πiρ} + z(θ+α)e^{2πiρ} − (E − λ⁻¹V)z) minus (L − λE)ẑ.
///
/// Integer-lattice inputs only; half-lattice inputs give NaN.
pub fn duality_identity_check(z: &ScalarPoly, v: &ScalarPoly, lambda: f64, alpha: &FrequencyVector, rho: f64, energy: f64) -> f64 {
    if z.is_half() || v.is_half() || z.dim() != v.dim() || alpha.dim() != z.dim() {
        return f64::NAN;
    }
    let band = z.band() + v.band();
    let zb = z.with_band(band);
    let minus: Vec<f64> = alpha.components.iter().map(|a| -a).collect();
    let e = C64::from_polar(1.0, 2.0 * PI * rho);
    let defect = zb
        .shift(&minus)
        .scale(e.conj())
        .add(&zb.shift(&alpha.components).scale(e))
        .sub(&zb.scale_re(energy))
        .add(&zb.mul(&v.with_band(band)).scale_re(1.0 / lambda))
        .scale_re(lambda);
    let direct = apply_dual_operator(z, v, lambda, alpha, rho, energy);
    defect.sub(&direct).coeffs().iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn residual(z: &ScalarPoly, ctx: &DualContext, phase: f64) -> Result<f64> {
    let d = z.dim();
    let radius = (z.band() + ctx.potential.band()).max(1);
    let norm = z.coeffs().iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let energy = ctx.lambda * ctx.energy;
    match build_longrange(&ctx.potential, ctx.lambda, &ctx.alpha, phase, radius, None) {
        Ok(op) => {
            let sites: Vec<Vec<i64>> = op.boxed.sites().collect();
            let re: Vec<f64> = sites.iter().map(|n| z.coef(n).re).collect();
            let im: Vec<f64> = sites.iter().map(|n| z.coef(n).im).collect();
            let (hr, hi) = (op.matrix.matvec(&re), op.matrix.matvec(&im));
            let mut s = 0.0;
            for i in 0..sites.len() {
                s += (hr[i] - energy * re[i]).powi(2) + (hi[i] - energy * im[i]).powi(2);
            }
            Ok(s.sqrt() / norm)
        }
        Err(OperatorError::BoxTooLarge { .. }) if d > 1 => {
            let r = apply_dual_operator(z, &ctx.potential, ctx.lambda, &ctx.alpha, phase, ctx.energy);
            Ok(r.coeffs().iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt() / norm)
        }
        Err(e) => Err(e.into()),
    }
}

/// ẑ₁₁ from B₁ = B̃·R_{⟨ℓ,θ⟩/2}·e^Y·M⁻¹·U⁻¹, demodulated by e^{−πi⟨ℓ+ℓ₀,θ⟩}.
pub fn build_dual_eigenfunction(
    dec: &ConjugacyDecomposition,
    a_final: &ConstantCocycle,
    ctx: &DualContext,
    opts: &DualOptions,
) -> Result<DualEigenfunction> {
    let xi = a_final.xi.ok_or(DualityError::Hyperbolic)?;
    let (t, nu) = match (a_final.t, a_final.nu_c()) {
        (Some(t), Some(nu)) => (t, nu),
        _ => return Err(DualityError::InconsistentInput("final constant has no principal logarithm".into())),
    };
    let d = ctx.alpha.dim();
    let degree: Vec<i64> = dec.deg_btilde.iter().zip(&dec.ell).map(|(a, b)| a + b).collect();
    let half_shift = ctx.alpha.dot(&degree) / 2.0;

    // eigenvalue e^{2πiφ} of A with φ + ⟨ℓ+ℓ₀,α⟩/2 ≡ ±ρ(E)
    let (phi, phase) = match ctx.rho {
        None => (xi, (xi + half_shift).rem_euclid(1.0)),
        Some(rho) => {
            let mut best = (f64::INFINITY, xi, 0.0);
            for phi in [xi, -xi] {
                let p = phi + half_shift;
                for target in [rho, -rho] {
                    let dist = torus_dist(p - target);
                    if dist < best.0 - 1e-15 {
                        best = (dist, phi, target.rem_euclid(1.0));
                    }
                }
            }
            if best.0 > 1e-6 {
                return Err(DualityError::RotationMismatch { reduced: (xi + half_shift).rem_euclid(1.0), rho });
            }
            (best.1, best.2)
        }
    };
    let gap = torus_dist(2.0 * phi);
    if gap < opts.rational_tol {
        return Err(DualityError::RationalRotation(gap));
    }

    let diag = diagonalize_near_identity(t, nu, 2.0 * PI * phi)?;
    let u_inv = diag.u.inv();
    let tail = m_inverse() * u_inv;
    let b = dec.assemble(opts.series_tol);
    let b11 = b.entry(0, 0).scale(tail.0[0][0]).add(&b.entry(0, 1).scale(tail.0[1][0]));

    let shift = degree.iter().map(|x| x.unsigned_abs() as usize).max().unwrap_or(0);
    let bh = b11.to_half();
    let neg: Vec<i64> = degree.iter().map(|x| -x).collect();
    let demod = bh.with_band(bh.band() + shift).mode_shift(&neg);
    let scale = demod.norm_h(0.0).max(f64::MIN_POSITIVE);
    let z = demod.to_integer(opts.lattice_tol * scale).map_err(|e| DualityError::OffLattice(e / scale))?;

    let raw_mass = z.coeffs().iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let b1_sup = b.rmul_const(&tail).sup_on_grid(opts.grid);
    let mass_bound = 1.0 / (2.0 * b1_sup);
    if !(raw_mass >= mass_bound) {
        return Err(DualityError::MassBelowBound { mass: raw_mass, bound: mass_bound });
    }
    let z = z.scale_re(1.0 / raw_mass);

    let res = residual(&z, ctx, phase)?;
    if !(res <= opts.residual_tol) {
        return Err(DualityError::ResidualTooLarge { residual: res, tol: opts.residual_tol });
    }

    let c_ell_raw = (dec.norms.y + 2.0 * nu.norm() / gap).min(1.0);
    let constants = DualConstants { c: 8.0 * dec.norms.b_tilde.powi(4), c_ell: c_ell_raw.max(C_ELL_FLOOR), c_ell_raw };
    let boxed = BoxIndex::new(d, z.band());
    let coefficients = boxed
        .sites()
        .map(|n| {
            let v = z.coef(&n);
            [v.re, v.im]
        })
        .collect();
    Ok(DualEigenfunction {
        dim: d,
        band: z.band(),
        coefficients,
        energy: ctx.lambda * ctx.energy,
        phase,
        ell: dec.ell.clone(),
        degree,
        constants,
        residual: res,
        raw_mass,
        mass_bound,
        branch: diag.branch,
        u_deviation: (diag.u - CMat2::IDENTITY).norm(),
    })
}
