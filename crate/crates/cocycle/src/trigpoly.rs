//! Finite Fourier series on T^d with a fixed band of modes.
//!
//! Coefficients are stored densely over the cube |m_i| ≤ band. When `half`
//! is set, lattice index m stands for the frequency m/2, which is how
//! functions on the double torus 2T^d (rotations R_{⟨n,θ⟩/2}) are carried.
//! All algebra is done on coefficients, so small high modes keep their
//! relative accuracy under products.

use crate::mat2::{CMat2, C64};
use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

pub const MAX_DIM: usize = 4;

pub trait Coef:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Send + Sync + std::fmt::Debug
{
    fn zero() -> Self;
    fn one() -> Self;
    fn norm(&self) -> f64;
    fn scale(&self, s: C64) -> Self;
    fn conj(&self) -> Self;
    fn is_zero(&self) -> bool;
}

impl Coef for C64 {
    fn zero() -> Self {
        C64::new(0.0, 0.0)
    }
    fn one() -> Self {
        C64::new(1.0, 0.0)
    }
    fn norm(&self) -> f64 {
        C64::norm(*self)
    }
    fn scale(&self, s: C64) -> Self {
        s * *self
    }
    fn conj(&self) -> Self {
        C64::conj(self)
    }
    fn is_zero(&self) -> bool {
        self.re == 0.0 && self.im == 0.0
    }
}

impl Coef for CMat2 {
    fn zero() -> Self {
        CMat2::ZERO
    }
    fn one() -> Self {
        CMat2::IDENTITY
    }
    fn norm(&self) -> f64 {
        CMat2::norm(self)
    }
    fn scale(&self, s: C64) -> Self {
        CMat2::scale(self, s)
    }
    fn conj(&self) -> Self {
        CMat2::conj(self)
    }
    fn is_zero(&self) -> bool {
        self.0.iter().flatten().all(|z| z.re == 0.0 && z.im == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrigPoly<T> {
    dim: usize,
    band: usize,
    half: bool,
    coeffs: Vec<T>,
}

pub type ScalarPoly = TrigPoly<C64>;
pub type MatPoly = TrigPoly<CMat2>;

impl<T: Coef> TrigPoly<T> {
    pub fn zeros(dim: usize, band: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "dimension {dim} outside 1..={MAX_DIM}");
        let len = (2 * band + 1).pow(dim as u32);
        TrigPoly { dim, band, half: false, coeffs: vec![T::zero(); len] }
    }

    pub fn constant(dim: usize, band: usize, value: T) -> Self {
        let mut p = Self::zeros(dim, band);
        p.set(&vec![0; dim], value);
        p
    }

    /// Build from (mode, coefficient) pairs; the band is the largest |m_i|.
    pub fn from_modes(dim: usize, modes: &[(Vec<i64>, T)]) -> Self {
        let band = modes.iter().flat_map(|(m, _)| m.iter().map(|v| v.unsigned_abs() as usize)).max().unwrap_or(0);
        let mut p = Self::zeros(dim, band);
        for (m, c) in modes {
            p.add_to(m, *c);
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn band(&self) -> usize {
        self.band
    }

    pub fn is_half(&self) -> bool {
        self.half
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    fn side(&self) -> usize {
        2 * self.band + 1
    }

    pub fn index(&self, m: &[i64]) -> Option<usize> {
        let k = self.band as i64;
        let side = self.side();
        let mut idx = 0usize;
        for i in (0..self.dim).rev() {
            if m[i].abs() > k {
                return None;
            }
            idx = idx * side + (m[i] + k) as usize;
        }
        Some(idx)
    }

    /// Lattice index of the flattened position `idx`.
    pub fn mode(&self, mut idx: usize) -> [i64; MAX_DIM] {
        let side = self.side();
        let mut m = [0i64; MAX_DIM];
        for v in m.iter_mut().take(self.dim) {
            *v = (idx % side) as i64 - self.band as i64;
            idx /= side;
        }
        m
    }

    /// Frequency scale: lattice index m has frequency m / denom.
    pub fn denom(&self) -> f64 {
        if self.half {
            2.0
        } else {
            1.0
        }
    }

    pub fn coef(&self, m: &[i64]) -> T {
        self.index(m).map(|i| self.coeffs[i]).unwrap_or_else(T::zero)
    }

    pub fn set(&mut self, m: &[i64], value: T) {
        let i = self.index(m).expect("mode outside band");
        self.coeffs[i] = value;
    }

    pub fn add_to(&mut self, m: &[i64], value: T) {
        let i = self.index(m).expect("mode outside band");
        self.coeffs[i] = self.coeffs[i] + value;
    }

    /// Nonzero (mode, coefficient) pairs.
    pub fn terms(&self) -> Vec<([i64; MAX_DIM], T)> {
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .map(|(i, c)| (self.mode(i), *c))
            .collect()
    }

    /// Resize to a new band, dropping modes outside it.
    pub fn with_band(&self, band: usize) -> Self {
        let mut out = Self::zeros(self.dim, band);
        out.half = self.half;
        for (m, c) in self.terms() {
            if let Some(i) = out.index(&m[..self.dim]) {
                out.coeffs[i] = c;
            }
        }
        out
    }

    /// Read the stored lattice indices as half-integer frequencies m/2.
    pub fn reinterpret_half(mut self) -> Self {
        self.half = true;
        self
    }

    /// Reinterpret on the half lattice (m → 2m).
    pub fn to_half(&self) -> Self {
        if self.half {
            return self.clone();
        }
        let mut out = Self::zeros(self.dim, 2 * self.band);
        out.half = true;
        for (m, c) in self.terms() {
            let mm: Vec<i64> = m[..self.dim].iter().map(|v| 2 * v).collect();
            out.set(&mm, c);
        }
        out
    }

    /// Back to integer frequencies if every odd lattice mode is below `tol`
    /// in norm; returns the largest odd-mode norm on failure.
    pub fn to_integer(&self, tol: f64) -> Result<Self, f64> {
        if !self.half {
            return Ok(self.clone());
        }
        let mut worst: f64 = 0.0;
        let mut out = Self::zeros(self.dim, self.band / 2);
        for (m, c) in self.terms() {
            if m[..self.dim].iter().any(|v| v % 2 != 0) {
                worst = worst.max(c.norm());
            } else {
                let mm: Vec<i64> = m[..self.dim].iter().map(|v| v / 2).collect();
                if let Some(i) = out.index(&mm) {
                    out.coeffs[i] = c;
                }
            }
        }
        if worst > tol {
            Err(worst)
        } else {
            Ok(out)
        }
    }

    fn aligned(&self, other: &Self) -> (Self, Self) {
        let (mut a, mut b) = (self.clone(), other.clone());
        if a.half != b.half {
            a = a.to_half();
            b = b.to_half();
        }
        let band = a.band.max(b.band);
        if a.band != band {
            a = a.with_band(band);
        }
        if b.band != band {
            b = b.with_band(band);
        }
        (a, b)
    }

    pub fn add(&self, other: &Self) -> Self {
        let (mut a, b) = self.aligned(other);
        for (x, y) in a.coeffs.iter_mut().zip(&b.coeffs) {
            *x = *x + *y;
        }
        a
    }

    pub fn sub(&self, other: &Self) -> Self {
        let (mut a, b) = self.aligned(other);
        for (x, y) in a.coeffs.iter_mut().zip(&b.coeffs) {
            *x = *x - *y;
        }
        a
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = self.clone();
        for c in out.coeffs.iter_mut() {
            *c = c.scale(s);
        }
        out
    }

    pub fn scale_re(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    /// Coefficientwise map.
    pub fn map<U: Coef>(&self, f: impl Fn(&T) -> U) -> TrigPoly<U> {
        TrigPoly { dim: self.dim, band: self.band, half: self.half, coeffs: self.coeffs.iter().map(f).collect() }
    }

    /// Product, truncated to the larger of the two bands.
    pub fn mul(&self, other: &Self) -> Self {
        let (a, b) = self.aligned(other);
        let band = a.band;
        let mut out = Self::zeros(a.dim, band);
        out.half = a.half;
        if a.dim == 1 {
            let k = band as i64;
            let len = a.coeffs.len() as i64;
            let bt: Vec<(i64, T)> =
                b.coeffs.iter().enumerate().filter(|(_, c)| !c.is_zero()).map(|(j, c)| (j as i64, *c)).collect();
            for (i, x) in a.coeffs.iter().enumerate() {
                if x.is_zero() {
                    continue;
                }
                let i = i as i64;
                for &(j, y) in &bt {
                    let r = i + j - k;
                    if r >= 0 && r < len {
                        let r = r as usize;
                        out.coeffs[r] = out.coeffs[r] + *x * y;
                    }
                }
            }
            return out;
        }
        let bt = b.terms();
        let d = a.dim;
        for (m, x) in a.terms() {
            for (n, y) in &bt {
                let mut s = [0i64; MAX_DIM];
                for i in 0..d {
                    s[i] = m[i] + n[i];
                }
                if let Some(r) = out.index(&s[..d]) {
                    out.coeffs[r] = out.coeffs[r] + x * *y;
                }
            }
        }
        out
    }

    /// Dominating analytic norm Σ‖c_n‖ e^{2π|n|h} (frequencies, ℓ¹ norm).
    pub fn norm_h(&self, h: f64) -> f64 {
        let mut acc = 0.0;
        let mut comp = 0.0;
        for (i, c) in self.coeffs.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            let m = self.mode(i);
            let freq = m[..self.dim].iter().map(|v| v.abs()).sum::<i64>() as f64 / self.denom();
            // Kahan summation
            let y = c.norm() * (2.0 * PI * freq * h).exp() - comp;
            let t = acc + y;
            comp = (t - acc) - y;
            acc = t;
        }
        acc
    }

    /// Part of the norm carried by modes with frequency ℓ¹ norm above `cut`.
    pub fn tail_norm_h(&self, h: f64, cut: f64) -> f64 {
        let mut acc = 0.0;
        for (m, c) in self.terms() {
            let freq = m[..self.dim].iter().map(|v| v.abs()).sum::<i64>() as f64 / self.denom();
            if freq > cut {
                acc += c.norm() * (2.0 * PI * freq * h).exp();
            }
        }
        acc
    }

    /// Value at θ + iε (ε applied to every coordinate).
    pub fn eval_complex(&self, theta: &[f64], eps: f64) -> T {
        let mut acc = T::zero();
        for (m, c) in self.terms() {
            let mut phase = 0.0;
            let mut freq = 0.0;
            for i in 0..self.dim {
                phase += m[i] as f64 * theta[i];
                freq += m[i] as f64;
            }
            phase /= self.denom();
            freq /= self.denom();
            let w = C64::from_polar((-2.0 * PI * freq * eps).exp(), 2.0 * PI * phase);
            acc = acc + c.scale(w);
        }
        acc
    }

    pub fn eval(&self, theta: &[f64]) -> T {
        self.eval_complex(theta, 0.0)
    }

    /// g(θ) = f(θ + α).
    pub fn shift(&self, alpha: &[f64]) -> Self {
        let mut out = self.clone();
        for (i, c) in out.coeffs.iter_mut().enumerate() {
            if c.is_zero() {
                continue;
            }
            let m = self.mode(i);
            let phase: f64 = (0..self.dim).map(|j| m[j] as f64 * alpha[j]).sum::<f64>() / self.denom();
            *c = c.scale(C64::from_polar(1.0, 2.0 * PI * phase));
        }
        out
    }

    /// Multiply by e^{2πi⟨k,θ⟩/denom}: every lattice index moves by k.
    pub fn mode_shift(&self, k: &[i64]) -> Self {
        let mut out = Self::zeros(self.dim, self.band);
        out.half = self.half;
        for (m, c) in self.terms() {
            let mut s = [0i64; MAX_DIM];
            for i in 0..self.dim {
                s[i] = m[i] + k[i];
            }
            if let Some(r) = out.index(&s[..self.dim]) {
                out.coeffs[r] = c;
            }
        }
        out
    }

    /// Largest ‖c_{−n} − conj(c_n)‖: zero for real-valued functions.
    pub fn reality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.coeffs.len() {
            let m = self.mode(i);
            let neg: Vec<i64> = m[..self.dim].iter().map(|v| -v).collect();
            let j = self.index(&neg).unwrap();
            worst = worst.max((self.coeffs[j] - self.coeffs[i].conj()).norm());
        }
        worst
    }

    /// Project onto real-valued functions: c_n ← (c_n + conj(c_{−n}))/2.
    pub fn real_part(&self) -> Self {
        let mut out = self.clone();
        for i in 0..self.coeffs.len() {
            let m = self.mode(i);
            let neg: Vec<i64> = m[..self.dim].iter().map(|v| -v).collect();
            let j = self.index(&neg).unwrap();
            out.coeffs[i] = (self.coeffs[i] + self.coeffs[j].conj()).scale(C64::new(0.5, 0.0));
        }
        out
    }

    /// Zero coefficient.
    pub fn mean(&self) -> T {
        self.coef(&vec![0; self.dim])
    }

    /// Largest |m_i| carrying a coefficient above `tol` in norm.
    pub fn effective_band(&self, tol: f64) -> usize {
        self.terms()
            .iter()
            .filter(|(_, c)| c.norm() > tol)
            .map(|(m, _)| m[..self.dim].iter().map(|v| v.unsigned_abs() as usize).max().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    /// sup over a uniform grid of `per_axis`^d points.
    pub fn sup_on_grid(&self, per_axis: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for x in grid_points(self.dim, per_axis, self.half) {
            worst = worst.max(self.eval(&x).norm());
        }
        worst
    }
}

/// Uniform grid over [0,1)^d (or [0,2)^d for half-lattice functions).
pub fn grid_points(dim: usize, per_axis: usize, half: bool) -> Vec<Vec<f64>> {
    let period = if half { 2.0 } else { 1.0 };
    let total = per_axis.pow(dim as u32);
    (0..total)
        .map(|mut k| {
            (0..dim)
                .map(|_| {
                    let v = (k % per_axis) as f64 * period / per_axis as f64;
                    k /= per_axis;
                    v
                })
                .collect()
        })
        .collect()
}

impl TrigPoly<C64> {
    /// 2·amp·cos(2π(⟨k,θ⟩)) as a real trig polynomial.
    pub fn cosine(dim: usize, k: &[i64], amp: f64) -> Self {
        let neg: Vec<i64> = k.iter().map(|v| -v).collect();
        Self::from_modes(dim, &[(k.to_vec(), C64::new(amp, 0.0)), (neg, C64::new(amp, 0.0))])
    }

    /// Σ_i 2·amp·cos(2πθ_i).
    pub fn cosine_sum(dim: usize, amp: f64) -> Self {
        let mut out = Self::zeros(dim, 1);
        for i in 0..dim {
            let mut k = vec![0; dim];
            k[i] = 1;
            out = out.add(&Self::cosine(dim, &k, amp));
        }
        out
    }

    pub fn eval_real(&self, theta: &[f64]) -> f64 {
        self.eval(theta).re
    }
}

impl TrigPoly<CMat2> {
    pub fn identity(dim: usize, band: usize) -> Self {
        Self::constant(dim, band, CMat2::IDENTITY)
    }

    /// Constant matrix times a poly on the left.
    pub fn lmul_const(&self, m: &CMat2) -> Self {
        self.map(|c| *m * *c)
    }

    pub fn rmul_const(&self, m: &CMat2) -> Self {
        self.map(|c| *c * *m)
    }

    /// Coefficientwise conjugation c ↦ P c Q.
    pub fn conjugate_const(&self, p: &CMat2, q: &CMat2) -> Self {
        self.map(|c| *p * *c * *q)
    }

    pub fn entry(&self, i: usize, j: usize) -> TrigPoly<C64> {
        self.map(|c| c.0[i][j])
    }

    pub fn from_entries(e: [[&TrigPoly<C64>; 2]; 2]) -> Self {
        let base = e[0][0].add(e[0][1]).add(e[1][0]).add(e[1][1]);
        let mut out = TrigPoly::<CMat2>::zeros(base.dim, base.band);
        out.half = base.half;
        for i in 0..2 {
            for j in 0..2 {
                let p = e[i][j].with_band(base.band);
                let p = if base.half && !p.half { p.to_half().with_band(base.band) } else { p };
                for (k, c) in p.coeffs.iter().enumerate() {
                    out.coeffs[k].0[i][j] = *c;
                }
            }
        }
        out
    }

    /// Adjugate [[d, −b], [−c, a]]: the inverse for SL(2)-valued functions.
    pub fn adjugate(&self) -> Self {
        self.map(|c| {
            let m = &c.0;
            CMat2::new(m[1][1], -m[0][1], -m[1][0], m[0][0])
        })
    }

    /// Coefficientwise removal of the trace part.
    pub fn traceless(&self) -> Self {
        self.map(|c| c.traceless())
    }

    /// e^X − I by scaling and squaring of the Taylor series. Convergence is
    /// judged in the norm at radius `h`.
    pub fn expm1(&self, h: f64, tol: f64) -> Self {
        let nrm = self.norm_h(h);
        if nrm == 0.0 {
            return self.scale_re(0.0);
        }
        let mut squarings = 0;
        while nrm / 2f64.powi(squarings) > 0.5 {
            squarings += 1;
        }
        let x = self.scale_re(1.0 / 2f64.powi(squarings));
        let xn = x.norm_h(h);
        let mut term = x.clone();
        let mut sum = x.clone();
        for k in 2..200 {
            term = term.mul(&x).scale_re(1.0 / k as f64);
            sum = sum.add(&term);
            if term.norm_h(h) <= tol * xn {
                break;
            }
        }
        for _ in 0..squarings {
            // (I + φ)² − I = 2φ + φ²
            sum = sum.scale_re(2.0).add(&sum.mul(&sum));
        }
        sum
    }

    pub fn expm(&self, h: f64, tol: f64) -> Self {
        self.expm1(h, tol).add(&Self::identity(self.dim, 0))
    }

    /// log(I + g) by its power series; requires ‖g‖_h < 1.
    pub fn log1p(&self, h: f64, tol: f64) -> Self {
        let gn = self.norm_h(h);
        assert!(gn < 1.0, "log1p needs ‖g‖_h < 1, got {gn}");
        if gn == 0.0 {
            return self.clone();
        }
        let mut power = self.clone();
        let mut sum = self.clone();
        for k in 2..2000 {
            power = power.mul(self);
            let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
            sum = sum.add(&power.scale_re(sign / k as f64));
            if power.norm_h(h) / k as f64 <= tol * gn {
                break;
            }
        }
        sum
    }

    /// Largest |det − 1| on a uniform grid.
    pub fn det_defect(&self, per_axis: usize) -> f64 {
        grid_points(self.dim, per_axis, self.half)
            .iter()
            .map(|x| (self.eval(x).det() - C64::new(1.0, 0.0)).norm())
            .fold(0.0, f64::max)
    }
}

impl<T: Coef> Add for &TrigPoly<T> {
    type Output = TrigPoly<T>;
    fn add(self, o: &TrigPoly<T>) -> TrigPoly<T> {
        TrigPoly::add(self, o)
    }
}

impl<T: Coef> Sub for &TrigPoly<T> {
    type Output = TrigPoly<T>;
    fn sub(self, o: &TrigPoly<T>) -> TrigPoly<T> {
        TrigPoly::sub(self, o)
    }
}

impl<T: Coef> Mul for &TrigPoly<T> {
    type Output = TrigPoly<T>;
    fn mul(self, o: &TrigPoly<T>) -> TrigPoly<T> {
        TrigPoly::mul(self, o)
    }
}
