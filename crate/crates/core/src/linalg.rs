//! Small dense helpers for the 2×2 horizontal (L/R) space.
//!
//! The basis is {L, R} with σ₃ = +1 on L. A Hermitian 2×2 block is stored as
//! its four real parameters `ρ_LL`, `ρ_RR`, `Re ρ_LR`, `Im ρ_LR`.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::{Complex, Matrix2, Matrix4};

pub type C64 = Complex<f64>;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);
pub(crate) const I: C64 = C64::new(0.0, 1.0);

/// Pauli matrix `σ_i` with `σ_0` the identity.
pub fn pauli(i: usize) -> Matrix2<C64> {
    match i {
        0 => Matrix2::new(ONE, ZERO, ZERO, ONE),
        1 => Matrix2::new(ZERO, ONE, ONE, ZERO),
        2 => Matrix2::new(ZERO, -I, I, ZERO),
        3 => Matrix2::new(ONE, ZERO, ZERO, -ONE),
        _ => panic!("pauli index {i} out of range"),
    }
}

/// Kronecker product of two 2×2 matrices, first factor acting on particle one.
pub fn kron2(a: &Matrix2<C64>, b: &Matrix2<C64>) -> Matrix4<C64> {
    Matrix4::from_fn(|r, c| a[(r / 2, c / 2)] * b[(r % 2, c % 2)])
}

/// `σ_i ⊗ σ_j`.
pub fn pauli_pair(i: usize, j: usize) -> Matrix4<C64> {
    kron2(&pauli(i), &pauli(j))
}

/// Largest absolute entry of `m − m†`.
pub fn hermiticity_defect4(m: &Matrix4<C64>) -> f64 {
    let mut worst = 0.0f64;
    for r in 0..4 {
        for c in 0..4 {
            worst = worst.max((m[(r, c)] - m[(c, r)].conj()).norm());
        }
    }
    worst
}

/// Hermitian 2×2 matrix in the {L, R} basis.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Herm2 {
    pub ll: f64,
    pub rr: f64,
    pub lr_re: f64,
    pub lr_im: f64,
}

impl Herm2 {
    pub const ZERO: Herm2 = Herm2 { ll: 0.0, rr: 0.0, lr_re: 0.0, lr_im: 0.0 };
    pub const IDENTITY: Herm2 = Herm2 { ll: 1.0, rr: 1.0, lr_re: 0.0, lr_im: 0.0 };

    pub const fn new(ll: f64, rr: f64, lr_re: f64, lr_im: f64) -> Self {
        Herm2 { ll, rr, lr_re, lr_im }
    }

    pub const fn diag(ll: f64, rr: f64) -> Self {
        Herm2 { ll, rr, lr_re: 0.0, lr_im: 0.0 }
    }

    /// Projector onto `c1|L⟩ + c2|R⟩` (not normalised).
    pub fn projector(c1: C64, c2: C64) -> Self {
        let lr = c1 * c2.conj();
        Herm2 { ll: c1.norm_sqr(), rr: c2.norm_sqr(), lr_re: lr.re, lr_im: lr.im }
    }

    /// Returns `None` if `m` is not Hermitian within `tol`.
    pub fn from_matrix(m: &Matrix2<C64>, tol: f64) -> Option<Self> {
        let defect = m[(0, 0)].im.abs()
            .max(m[(1, 1)].im.abs())
            .max((m[(0, 1)] - m[(1, 0)].conj()).norm());
        if defect > tol {
            return None;
        }
        let lr = (m[(0, 1)] + m[(1, 0)].conj()) * 0.5;
        Some(Herm2 { ll: m[(0, 0)].re, rr: m[(1, 1)].re, lr_re: lr.re, lr_im: lr.im })
    }

    pub fn to_matrix(&self) -> Matrix2<C64> {
        let lr = C64::new(self.lr_re, self.lr_im);
        Matrix2::new(C64::new(self.ll, 0.0), lr, lr.conj(), C64::new(self.rr, 0.0))
    }

    pub fn lr(&self) -> C64 {
        C64::new(self.lr_re, self.lr_im)
    }

    pub fn trace(&self) -> f64 {
        self.ll + self.rr
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let mean = 0.5 * (self.ll + self.rr);
        let half_gap = (0.25 * (self.ll - self.rr).powi(2) + self.lr_re.powi(2) + self.lr_im.powi(2)).sqrt();
        (mean - half_gap, mean + half_gap)
    }

    /// `Tr(ρ²)`.
    pub fn purity(&self) -> f64 {
        self.ll * self.ll + self.rr * self.rr + 2.0 * (self.lr_re * self.lr_re + self.lr_im * self.lr_im)
    }

    /// `{A, B} = AB + BA`, Hermitian for Hermitian arguments.
    pub fn anticommutator(&self, other: &Herm2) -> Herm2 {
        let cross = self.lr_re * other.lr_re + self.lr_im * other.lr_im;
        let tr_a = self.ll + self.rr;
        let tr_b = other.ll + other.rr;
        Herm2 {
            ll: 2.0 * self.ll * other.ll + 2.0 * cross,
            rr: 2.0 * self.rr * other.rr + 2.0 * cross,
            lr_re: other.lr_re * tr_a + self.lr_re * tr_b,
            lr_im: other.lr_im * tr_a + self.lr_im * tr_b,
        }
    }

    /// `D ρ D` for the real diagonal `D = diag(l, r)`.
    pub fn sandwich_diag(&self, l: f64, r: f64) -> Herm2 {
        Herm2 { ll: l * l * self.ll, rr: r * r * self.rr, lr_re: l * r * self.lr_re, lr_im: l * r * self.lr_im }
    }

    /// `−i[g σ₁ + ε σ₃, ρ]`.
    pub fn tunnel_commutator(&self, g: f64, eps: f64) -> Herm2 {
        Herm2 {
            ll: -2.0 * g * self.lr_im,
            rr: 2.0 * g * self.lr_im,
            lr_re: 2.0 * eps * self.lr_im,
            lr_im: g * (self.ll - self.rr) - 2.0 * eps * self.lr_re,
        }
    }

    /// `e^{−iλh} ρ e^{iλh}` for `λ = g σ₁ + ε σ₃`, as a rotation of the Bloch vector.
    pub fn precess(&self, g: f64, eps: f64, h: f64) -> Herm2 {
        let w = g.hypot(eps);
        if w == 0.0 {
            return *self;
        }
        let n = [g / w, 0.0, eps / w];
        let r = [2.0 * self.lr_re, -2.0 * self.lr_im, self.ll - self.rr];
        let (sin, cos) = (2.0 * w * h).sin_cos();
        let dot = n[0] * r[0] + n[2] * r[2];
        let cross = [n[1] * r[2] - n[2] * r[1], n[2] * r[0] - n[0] * r[2], n[0] * r[1] - n[1] * r[0]];
        let rot: [f64; 3] = std::array::from_fn(|k| r[k] * cos + cross[k] * sin + n[k] * dot * (1.0 - cos));
        let tr = self.trace();
        Herm2 { ll: 0.5 * (tr + rot[2]), rr: 0.5 * (tr - rot[2]), lr_re: 0.5 * rot[0], lr_im: -0.5 * rot[1] }
    }

    pub fn max_abs(&self) -> f64 {
        self.ll.abs().max(self.rr.abs()).max(self.lr_re.abs()).max(self.lr_im.abs())
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.ll, self.rr, self.lr_re, self.lr_im]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Herm2 { ll: s[0], rr: s[1], lr_re: s[2], lr_im: s[3] }
    }
}

impl Add for Herm2 {
    type Output = Herm2;
    fn add(self, o: Herm2) -> Herm2 {
        Herm2 { ll: self.ll + o.ll, rr: self.rr + o.rr, lr_re: self.lr_re + o.lr_re, lr_im: self.lr_im + o.lr_im }
    }
}

impl AddAssign for Herm2 {
    fn add_assign(&mut self, o: Herm2) {
        *self = *self + o;
    }
}

impl Sub for Herm2 {
    type Output = Herm2;
    fn sub(self, o: Herm2) -> Herm2 {
        Herm2 { ll: self.ll - o.ll, rr: self.rr - o.rr, lr_re: self.lr_re - o.lr_re, lr_im: self.lr_im - o.lr_im }
    }
}

impl Neg for Herm2 {
    type Output = Herm2;
    fn neg(self) -> Herm2 {
        self * -1.0
    }
}

impl Mul<f64> for Herm2 {
    type Output = Herm2;
    fn mul(self, s: f64) -> Herm2 {
        Herm2 { ll: self.ll * s, rr: self.rr * s, lr_re: self.lr_re * s, lr_im: self.lr_im * s }
    }
}
