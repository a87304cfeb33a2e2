//! Real and complex 2×2 matrices, rotations, and the fixed conjugation
//! between sl(2,R) and su(1,1).

use num_complex::Complex64;
use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

pub type C64 = Complex64;

const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2(pub [[f64; 2]; 2]);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CMat2(pub [[C64; 2]; 2]);

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);
    pub const ZERO: Mat2 = Mat2([[0.0, 0.0], [0.0, 0.0]]);

    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2([[a, b], [c, d]])
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn inv(&self) -> Mat2 {
        let m = &self.0;
        let d = self.det();
        Mat2([[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]])
    }

    pub fn transpose(&self) -> Mat2 {
        let m = &self.0;
        Mat2([[m[0][0], m[1][0]], [m[0][1], m[1][1]]])
    }

    pub fn scale(&self, s: f64) -> Mat2 {
        let m = &self.0;
        Mat2([[s * m[0][0], s * m[0][1]], [s * m[1][0], s * m[1][1]]])
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        let m = &self.0;
        [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
    }

    /// Spectral norm.
    pub fn norm(&self) -> f64 {
        self.complex().norm()
    }

    pub fn max_abs_diff(&self, other: &Mat2) -> f64 {
        let mut out: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                out = out.max((self.0[i][j] - other.0[i][j]).abs());
            }
        }
        out
    }

    pub fn complex(&self) -> CMat2 {
        let m = &self.0;
        CMat2([
            [C64::new(m[0][0], 0.0), C64::new(m[0][1], 0.0)],
            [C64::new(m[1][0], 0.0), C64::new(m[1][1], 0.0)],
        ])
    }

    /// Rotation R_θ by angle 2πθ (θ in revolutions).
    pub fn rotation(theta: f64) -> Mat2 {
        let (s, c) = (2.0 * PI * theta).sin_cos();
        Mat2([[c, -s], [s, c]])
    }

    /// Schrödinger matrix [[E − v, −1], [1, 0]].
    pub fn schrodinger(e_minus_v: f64) -> Mat2 {
        Mat2([[e_minus_v, -1.0], [1.0, 0.0]])
    }

    /// Rotation angle of the polar factor, in revolutions in (−1/2, 1/2].
    pub fn polar_angle(&self) -> f64 {
        let m = &self.0;
        (m[1][0] - m[0][1]).atan2(m[0][0] + m[1][1]) / (2.0 * PI)
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, o: Mat2) -> Mat2 {
        let (a, b) = (&self.0, &o.0);
        let mut r = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                r[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Mat2(r)
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        let (a, b) = (&self.0, &o.0);
        Mat2([[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]])
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        self + o.scale(-1.0)
    }
}

impl CMat2 {
    pub const ZERO: CMat2 = CMat2([[C64 { re: 0.0, im: 0.0 }; 2]; 2]);
    pub const IDENTITY: CMat2 = CMat2([
        [C64 { re: 1.0, im: 0.0 }, C64 { re: 0.0, im: 0.0 }],
        [C64 { re: 0.0, im: 0.0 }, C64 { re: 1.0, im: 0.0 }],
    ]);

    pub fn new(a: C64, b: C64, c: C64, d: C64) -> Self {
        CMat2([[a, b], [c, d]])
    }

    pub fn diag(a: C64, d: C64) -> Self {
        CMat2([[a, C64::new(0.0, 0.0)], [C64::new(0.0, 0.0), d]])
    }

    pub fn det(&self) -> C64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn trace(&self) -> C64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn inv(&self) -> CMat2 {
        let m = &self.0;
        let d = self.det();
        CMat2([[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]])
    }

    pub fn scale(&self, s: C64) -> CMat2 {
        let m = &self.0;
        CMat2([[s * m[0][0], s * m[0][1]], [s * m[1][0], s * m[1][1]]])
    }

    pub fn scale_re(&self, s: f64) -> CMat2 {
        self.scale(C64::new(s, 0.0))
    }

    /// Entrywise complex conjugate.
    pub fn conj(&self) -> CMat2 {
        let m = &self.0;
        CMat2([[m[0][0].conj(), m[0][1].conj()], [m[1][0].conj(), m[1][1].conj()]])
    }

    pub fn adjoint(&self) -> CMat2 {
        let m = &self.0;
        CMat2([[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]])
    }

    pub fn apply(&self, v: [C64; 2]) -> [C64; 2] {
        let m = &self.0;
        [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.0.iter().flatten().map(|z| z.norm_sqr()).sum()
    }

    /// Spectral norm from the singular values of a 2×2 matrix.
    pub fn norm(&self) -> f64 {
        let s = self.frobenius_sq();
        let dd = self.det().norm();
        let disc = (s * s - 4.0 * dd * dd).max(0.0);
        ((s + disc.sqrt()) / 2.0).sqrt()
    }

    pub fn re(&self) -> Mat2 {
        let m = &self.0;
        Mat2([[m[0][0].re, m[0][1].re], [m[1][0].re, m[1][1].re]])
    }

    pub fn max_abs_im(&self) -> f64 {
        self.0.iter().flatten().map(|z| z.im.abs()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &CMat2) -> f64 {
        let mut out: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                out = out.max((self.0[i][j] - other.0[i][j]).norm());
            }
        }
        out
    }

    /// Remove the trace part.
    pub fn traceless(&self) -> CMat2 {
        let h = self.trace() * 0.5;
        *self - CMat2::IDENTITY.scale(h)
    }
}

impl Mul for CMat2 {
    type Output = CMat2;
    fn mul(self, o: CMat2) -> CMat2 {
        let (a, b) = (&self.0, &o.0);
        let z = C64::new(0.0, 0.0);
        let mut r = [[z; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                r[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        CMat2(r)
    }
}

impl Add for CMat2 {
    type Output = CMat2;
    fn add(self, o: CMat2) -> CMat2 {
        let (a, b) = (&self.0, &o.0);
        CMat2([[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]])
    }
}

impl Sub for CMat2 {
    type Output = CMat2;
    fn sub(self, o: CMat2) -> CMat2 {
        let (a, b) = (&self.0, &o.0);
        CMat2([[a[0][0] - b[0][0], a[0][1] - b[0][1]], [a[1][0] - b[1][0], a[1][1] - b[1][1]]])
    }
}

impl Neg for CMat2 {
    type Output = CMat2;
    fn neg(self) -> CMat2 {
        self.scale_re(-1.0)
    }
}

/// M = (1/2i)[[1, −i], [1, i]].
pub fn m_matrix() -> CMat2 {
    let f = C64::new(1.0, 0.0) / (2.0 * I);
    CMat2::new(f, -I * f, f, I * f)
}

pub fn m_inverse() -> CMat2 {
    m_matrix().inv()
}

/// M X M⁻¹: sl(2,R) coordinates to su(1,1) coordinates.
pub fn to_su11(x: &CMat2) -> CMat2 {
    m_matrix() * *x * m_inverse()
}

/// M⁻¹ X M.
pub fn from_su11(x: &CMat2) -> CMat2 {
    m_inverse() * *x * m_matrix()
}

/// exp of a traceless 2×2 complex matrix in closed form.
pub fn expm_traceless(x: &CMat2) -> CMat2 {
    // X² = −det(X)·I, so e^X = cosh(s) I + sinh(s)/s X with s² = −det X.
    let s2 = -x.det();
    let s = s2.sqrt();
    let (c, sh) = if s.norm() < 1e-4 {
        let c = C64::new(1.0, 0.0) + s2 / 2.0 + s2 * s2 / 24.0 + s2 * s2 * s2 / 720.0;
        let sh = C64::new(1.0, 0.0) + s2 / 6.0 + s2 * s2 / 120.0 + s2 * s2 * s2 / 5040.0;
        (c, sh)
    } else {
        (s.cosh(), s.sinh() / s)
    };
    CMat2::IDENTITY.scale(c) + x.scale(sh)
}

/// Principal logarithm of X ∈ SL(2,C) in closed form (X ≠ −I).
pub fn logm_sl2(x: &CMat2) -> CMat2 {
    // X = cosh(s) I + sinh(s)/s Z, so Z = s/sinh(s) (X − cosh(s) I).
    let half_tr = x.trace() * 0.5;
    let s = half_tr.acosh();
    let factor = if s.norm() < 1e-4 {
        let s2 = s * s;
        C64::new(1.0, 0.0) - s2 / 6.0 + s2 * s2 * (7.0 / 360.0)
    } else {
        s / s.sinh()
    };
    (*x - CMat2::IDENTITY.scale(half_tr)).scale(factor)
}

/// su(1,1) parameters (t, ν) of a traceless real generator Z: M Z M⁻¹ = [[it, ν], [ν̄, −it]].
pub fn su11_params(z: &CMat2) -> (f64, C64) {
    let w = to_su11(z);
    (w.0[0][0].im, w.0[0][1])
}

/// Real generator with su(1,1) parameters (t, ν).
pub fn su11_generator(t: f64, nu: C64) -> CMat2 {
    let w = CMat2::new(C64::new(0.0, t), nu, nu.conj(), C64::new(0.0, -t));
    from_su11(&w)
}
