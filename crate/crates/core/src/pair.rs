//! Two particles in the double well, each with its own vertical ladder.
//!
//! The state is expanded as `ρ(E, E′) = Σ_ij x_ij(E, E′) σ_i ⊗ σ_j` with real
//! coefficients. Two right-hand sides are provided: a general one that
//! applies the full equation to every block through 16×16 superoperators,
//! and the reduced one for `ζ = ζ′ = 1` acting only on the σ₂/σ₃ sector.

use std::sync::OnceLock;

use nalgebra::{Matrix4, SymmetricEigen};

use crate::bath::{boltzmann_weights, RateTable};
use crate::error::{Error, Result};
use crate::integrator::{integrate, Layout, OdeSystem, StepperConfig, Stats};
use crate::linalg::{hermiticity_defect4, pauli, pauli_pair, C64, ONE, ZERO};
use crate::output::Trajectory;
use crate::single::CouplingSpec;
use crate::well::WellModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BellKind {
    PsiPlus,
    PsiMinus,
    PhiPlus,
    PhiMinus,
}

impl BellKind {
    pub const ALL: [BellKind; 4] = [BellKind::PsiPlus, BellKind::PsiMinus, BellKind::PhiPlus, BellKind::PhiMinus];

    pub fn name(&self) -> &'static str {
        match self {
            BellKind::PsiPlus => "psi_plus",
            BellKind::PsiMinus => "psi_minus",
            BellKind::PhiPlus => "phi_plus",
            BellKind::PhiMinus => "phi_minus",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        match key.as_str() {
            "psiplus" | "psip" => Some(BellKind::PsiPlus),
            "psiminus" | "psim" => Some(BellKind::PsiMinus),
            "phiplus" | "phip" => Some(BellKind::PhiPlus),
            "phiminus" | "phim" => Some(BellKind::PhiMinus),
            _ => None,
        }
    }

    /// Amplitudes on `|LL⟩, |LR⟩, |RL⟩, |RR⟩`.
    pub fn amplitudes(&self) -> [f64; 4] {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            BellKind::PhiPlus => [h, 0.0, 0.0, h],
            BellKind::PhiMinus => [h, 0.0, 0.0, -h],
            BellKind::PsiPlus => [0.0, h, h, 0.0],
            BellKind::PsiMinus => [0.0, h, -h, 0.0],
        }
    }

    pub fn projector(&self) -> Matrix4<C64> {
        let a = self.amplitudes();
        Matrix4::from_fn(|r, c| C64::new(a[r] * a[c], 0.0))
    }
}

fn pauli_pairs() -> &'static [Matrix4<C64>; 16] {
    static CELL: OnceLock<[Matrix4<C64>; 16]> = OnceLock::new();
    CELL.get_or_init(|| std::array::from_fn(|k| pauli_pair(k / 4, k % 4)))
}

/// `x_ab = Tr[ρ σ_a ⊗ σ_b] / 4`, row-major in `(a, b)`.
pub fn coefficients_of(rho: &Matrix4<C64>) -> [f64; 16] {
    let p = pauli_pairs();
    std::array::from_fn(|k| (rho * p[k]).trace().re * 0.25)
}

/// `Σ_ab x_ab σ_a ⊗ σ_b`.
pub fn matrix_of(x: &[f64]) -> Matrix4<C64> {
    let p = pauli_pairs();
    let mut m = Matrix4::zeros();
    for (k, &v) in x.iter().enumerate().take(16) {
        if v != 0.0 {
            m += p[k] * C64::new(v, 0.0);
        }
    }
    m
}

/// Real coefficients `x_ab(E_i, E_j)` over all ordered level pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBlochField {
    n: usize,
    data: Vec<f64>,
}

impl PairBlochField {
    pub fn zeros(n_levels: usize) -> Self {
        PairBlochField { n: n_levels, data: vec![0.0; 16 * n_levels * n_levels] }
    }

    pub fn from_vec(n_levels: usize, data: Vec<f64>) -> Result<Self> {
        let expected = 16 * n_levels * n_levels;
        if data.len() != expected {
            return Err(Error::DimensionMismatch { expected, found: data.len() });
        }
        Ok(PairBlochField { n: n_levels, data })
    }

    pub fn n_levels(&self) -> usize {
        self.n
    }

    pub fn layout(&self) -> Layout {
        Layout::PairFull(self.n)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn idx(&self, a: usize, b: usize, e: usize, f: usize) -> usize {
        ((a * 4 + b) * self.n + e) * self.n + f
    }

    pub fn get(&self, a: usize, b: usize, e: usize, f: usize) -> f64 {
        self.data[self.idx(a, b, e, f)]
    }

    pub fn set(&mut self, a: usize, b: usize, e: usize, f: usize, v: f64) {
        let k = self.idx(a, b, e, f);
        self.data[k] = v;
    }

    /// `Σ_{E,E′} x_ab(E, E′)`.
    pub fn total(&self, a: usize, b: usize) -> f64 {
        let start = (a * 4 + b) * self.n * self.n;
        self.data[start..start + self.n * self.n].iter().sum()
    }

    /// The 16 coefficients of one level pair.
    pub fn block(&self, e: usize, f: usize) -> [f64; 16] {
        std::array::from_fn(|k| self.get(k / 4, k % 4, e, f))
    }

    pub fn set_block(&mut self, e: usize, f: usize, x: &[f64; 16]) {
        for (k, v) in x.iter().enumerate() {
            self.set(k / 4, k % 4, e, f, *v);
        }
    }

    /// The 4×4 horizontal density matrix of the level pair `(E_e, E_f)`.
    pub fn rho_block(&self, e: usize, f: usize) -> Matrix4<C64> {
        matrix_of(&self.block(e, f))
    }

    /// Largest absolute value of a component over all level pairs.
    pub fn component_max(&self, a: usize, b: usize) -> f64 {
        let start = (a * 4 + b) * self.n * self.n;
        self.data[start..start + self.n * self.n].iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// The σ₂/σ₃ sector as a `2n × 2n` matrix `X[(a, E), (b, E′)]`, row-major.
    pub fn reduced(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; 4 * n * n];
        for a in 0..2 {
            for b in 0..2 {
                for e in 0..n {
                    for f in 0..n {
                        out[(a * n + e) * 2 * n + b * n + f] = self.get(a + 2, b + 2, e, f);
                    }
                }
            }
        }
        out
    }

    /// Copy of `self` with the σ₂/σ₃ sector replaced.
    pub fn with_reduced(&self, reduced: &[f64]) -> Self {
        let n = self.n;
        let mut out = self.clone();
        for a in 0..2 {
            for b in 0..2 {
                for e in 0..n {
                    for f in 0..n {
                        out.set(a + 2, b + 2, e, f, reduced[(a * n + e) * 2 * n + b * n + f]);
                    }
                }
            }
        }
        out
    }
}

/// Bell state in the horizontal space times the vertical product `w₁(E) w₂(E′)`.
pub fn bell_field(kind: BellKind, w1: &[f64], w2: &[f64]) -> Result<PairBlochField> {
    if w1.len() != w2.len() {
        return Err(Error::DimensionMismatch { expected: w1.len(), found: w2.len() });
    }
    let n = w1.len();
    let x = coefficients_of(&kind.projector());
    let mut field = PairBlochField::zeros(n);
    for e in 0..n {
        for f in 0..n {
            let w = w1[e] * w2[f];
            if w != 0.0 {
                field.set_block(e, f, &x.map(|v| v * w));
            }
        }
    }
    Ok(field)
}

/// Bell state with both particles thermally distributed at `T`.
pub fn thermal_bell_field(kind: BellKind, energies: &[f64], temperature: f64) -> PairBlochField {
    let p = boltzmann_weights(energies, temperature);
    bell_field(kind, &p, &p).expect("equal ladders")
}

/// Bell state with both particles in level `level` (zero-based).
pub fn level_bell_field(kind: BellKind, n_levels: usize, level: usize) -> Result<PairBlochField> {
    if level >= n_levels {
        return Err(Error::invalid("level", format!("{level} outside {n_levels} levels")));
    }
    let mut w = vec![0.0; n_levels];
    w[level] = 1.0;
    bell_field(kind, &w, &w)
}

/// `ρ = Σ_{E,E′} ρ(E, E′)`.
pub fn assemble_rho4(field: &PairBlochField) -> Matrix4<C64> {
    let x: [f64; 16] = std::array::from_fn(|k| field.total(k / 4, k % 4));
    matrix_of(&x)
}

/// `X₃₃ = 2(¼ + Σ x₃₃)`, the probability both particles share a side.
pub fn x33_observable(field: &PairBlochField) -> f64 {
    2.0 * (0.25 + field.total(3, 3))
}

/// Wootters concurrence of a two-qubit density matrix.
///
/// Uses the eigenvalues of the Hermitian `√ρ ρ̃ √ρ`, which coincide with
/// those of `ρρ̃`.
pub fn concurrence(rho: &Matrix4<C64>) -> Result<f64> {
    let trace = rho.trace();
    if (trace.re - 1.0).abs() > 1e-8 || trace.im.abs() > 1e-8 {
        return Err(Error::NotADensityMatrix(format!("trace {trace}")));
    }
    let herm = hermiticity_defect4(rho);
    if herm > 1e-10 {
        return Err(Error::NotADensityMatrix(format!("hermiticity defect {herm:e}")));
    }
    let sym = (rho + rho.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -1e-8 {
        return Err(Error::NotADensityMatrix(format!("negative eigenvalue {min:e}")));
    }
    let sqrt_diag = Matrix4::from_diagonal(&eig.eigenvalues.map(|v| C64::new(v.max(0.0).sqrt(), 0.0)));
    let sqrt_rho = eig.eigenvectors * sqrt_diag * eig.eigenvectors.adjoint();
    let yy = pauli_pair(2, 2);
    let flipped = yy * sym.conjugate() * yy;
    let r = &sqrt_rho * flipped * &sqrt_rho;
    let r = (r + r.adjoint()) * C64::new(0.5, 0.0);
    let mut lambdas: Vec<f64> = Vec::with_capacity(4);
    for v in SymmetricEigen::new(r).eigenvalues.iter() {
        if *v < -1e-10 {
            return Err(Error::NotADensityMatrix(format!("ρρ̃ eigenvalue {v:e}")));
        }
        lambdas.push(v.max(0.0).sqrt());
    }
    lambdas.sort_by(|a, b| b.total_cmp(a));
    Ok((lambdas[0] - lambdas[1] - lambdas[2] - lambdas[3]).clamp(0.0, 1.0))
}

/// `E_f = h(½ + ½√(1 − C²))` with the binary entropy in bits.
pub fn entanglement_of_formation(c: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::OutOfRange { value: c, lo: 0.0, hi: 1.0 });
    }
    let x = 0.5 + 0.5 * (1.0 - c * c).sqrt();
    let h = |p: f64| if p <= 0.0 || p >= 1.0 { 0.0 } else { -p * p.log2() };
    Ok(h(x) + h(1.0 - x))
}

fn one_particle_generator(g: f64, eps: f64) -> Matrix4<C64> {
    let m = pauli(1) * C64::new(g, 0.0) + pauli(3) * C64::new(eps, 0.0);
    crate::linalg::kron2(&m, &pauli(0))
}

fn other_particle_generator(g: f64, eps: f64) -> Matrix4<C64> {
    let m = pauli(1) * C64::new(g, 0.0) + pauli(3) * C64::new(eps, 0.0);
    crate::linalg::kron2(&pauli(0), &m)
}

fn zeta_matrix(c: CouplingSpec) -> nalgebra::Matrix2<C64> {
    let (l, r) = c.zeta();
    nalgebra::Matrix2::new(C64::new(l, 0.0), ZERO, ZERO, C64::new(r, 0.0))
}

type Coeffs = [f64; 16];

/// A linear map on 4×4 Hermitian blocks in the `σ_a ⊗ σ_b` coefficient
/// basis, kept as its nonzero entries.
#[derive(Clone, Debug)]
struct Superoperator {
    entries: Vec<(usize, usize, f64)>,
}

impl Superoperator {
    fn new(map: impl Fn(&Matrix4<C64>) -> Matrix4<C64>) -> Self {
        let mut entries = Vec::new();
        for (col, basis) in pauli_pairs().iter().enumerate() {
            for (row, v) in coefficients_of(&map(basis)).into_iter().enumerate() {
                // Entries are small integers or polynomials in b; anything
                // at round-off level is an artefact of the trace projection.
                if v.abs() > 1e-14 {
                    entries.push((row, col, v));
                }
            }
        }
        Superoperator { entries }
    }

    /// `out += scale · S x`.
    fn apply(&self, x: &Coeffs, scale: f64, out: &mut Coeffs) {
        if scale == 0.0 {
            return;
        }
        for &(r, c, v) in &self.entries {
            out[r] += scale * v * x[c];
        }
    }
}

/// The full two-particle equation, applied blockwise through superoperators
/// built from the 4×4 operators.
pub struct PairGeneral<'a> {
    model: &'a WellModel,
    rates: &'a RateTable,
    #[cfg_attr(not(test), allow(dead_code))]
    zeta1: Matrix4<C64>,
    #[cfg_attr(not(test), allow(dead_code))]
    zeta2: Matrix4<C64>,
    /// `−i[σ₁ ⊗ 1, ·]`, `−i[1 ⊗ σ₁, ·]` and `−i[σ₃ ⊗ 1 + 1 ⊗ σ₃, ·]`.
    tunnel1: Superoperator,
    tunnel2: Superoperator,
    bias: Superoperator,
    /// `Z ρ Z` and `½{Z², ρ}` for each particle.
    sandwich1: Superoperator,
    sandwich2: Superoperator,
    lose1: Superoperator,
    lose2: Superoperator,
}

impl<'a> PairGeneral<'a> {
    pub fn new(model: &'a WellModel, rates: &'a RateTable, first: CouplingSpec, second: CouplingSpec) -> Result<Self> {
        if rates.n_levels() != model.n_levels() {
            return Err(Error::DimensionMismatch { expected: model.n_levels(), found: rates.n_levels() });
        }
        let id = nalgebra::Matrix2::new(ONE, ZERO, ZERO, ONE);
        let zeta1 = crate::linalg::kron2(&zeta_matrix(first), &id);
        let zeta2 = crate::linalg::kron2(&id, &zeta_matrix(second));
        let minus_i = C64::new(0.0, -1.0);
        let commutator = |h: Matrix4<C64>| Superoperator::new(move |r| (h * r - r * h) * minus_i);
        let half = C64::new(0.5, 0.0);
        let (z1sq, z2sq) = (zeta1 * zeta1, zeta2 * zeta2);
        Ok(PairGeneral {
            model,
            rates,
            zeta1,
            zeta2,
            tunnel1: commutator(one_particle_generator(1.0, 0.0)),
            tunnel2: commutator(other_particle_generator(1.0, 0.0)),
            bias: commutator(one_particle_generator(0.0, 1.0) + other_particle_generator(0.0, 1.0)),
            sandwich1: Superoperator::new(|r| zeta1 * r * zeta1),
            sandwich2: Superoperator::new(|r| zeta2 * r * zeta2),
            lose1: Superoperator::new(|r| (z1sq * r + r * z1sq) * half),
            lose2: Superoperator::new(|r| (z2sq * r + r * z2sq) * half),
        })
    }

    pub fn rhs_field(&self, field: &PairBlochField, t: f64) -> Result<PairBlochField> {
        let n = self.model.n_levels();
        if field.n_levels() != n {
            return Err(Error::DimensionMismatch { expected: n, found: field.n_levels() });
        }
        let mut out = PairBlochField::zeros(n);
        self.derivative_into(t, &field.data, &mut out.data);
        Ok(out)
    }

    fn derivative_into(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.model.n_levels();
        let nn = n * n;
        let g = self.model.splittings();
        let eps = self.model.epsilon(t);
        let gamma = self.rates.gamma();
        let loss = self.rates.loss();
        // Component-major storage: the 16 coefficients of a block are strided by n².
        let blocks: Vec<Coeffs> = (0..nn).map(|ef| std::array::from_fn(|k| y[k * nn + ef])).collect();
        for e in 0..n {
            for f in 0..n {
                let x = &blocks[e * n + f];
                let mut into_first = [0.0; 16];
                let mut into_second = [0.0; 16];
                for k in 0..n {
                    let (r1, r2) = (gamma[(k, e)], gamma[(k, f)]);
                    for c in 0..16 {
                        into_first[c] += r1 * blocks[k * n + f][c];
                        into_second[c] += r2 * blocks[e * n + k][c];
                    }
                }
                let mut d = [0.0; 16];
                self.tunnel1.apply(x, g[e], &mut d);
                self.tunnel2.apply(x, g[f], &mut d);
                self.bias.apply(x, eps, &mut d);
                self.lose1.apply(x, -loss[e], &mut d);
                self.lose2.apply(x, -loss[f], &mut d);
                self.sandwich1.apply(&into_first, 1.0, &mut d);
                self.sandwich2.apply(&into_second, 1.0, &mut d);
                for (k, v) in d.iter().enumerate() {
                    dy[k * nn + e * n + f] = *v;
                }
            }
        }
    }

    /// The same equation evaluated directly on reassembled 4×4 blocks.
    #[cfg(test)]
    fn derivative_dense(&self, t: f64, field: &PairBlochField) -> PairBlochField {
        let n = field.n_levels();
        let g = self.model.splittings();
        let eps = self.model.epsilon(t);
        let gamma = self.rates.gamma();
        let loss = self.rates.loss();
        let i = C64::new(0.0, 1.0);
        let half = C64::new(0.5, 0.0);
        let blocks: Vec<Matrix4<C64>> = (0..n * n).map(|k| field.rho_block(k / n, k % n)).collect();
        let z1sq = self.zeta1 * self.zeta1;
        let z2sq = self.zeta2 * self.zeta2;
        let mut out = PairBlochField::zeros(n);
        for e in 0..n {
            for f in 0..n {
                let rho = &blocks[e * n + f];
                let h = one_particle_generator(g[e], eps) + other_particle_generator(g[f], eps);
                let mut d = (h * rho - rho * h) * (-i);
                for k in 0..n {
                    d += self.zeta1 * blocks[k * n + f] * self.zeta1 * C64::new(gamma[(k, e)], 0.0);
                    d += self.zeta2 * blocks[e * n + k] * self.zeta2 * C64::new(gamma[(k, f)], 0.0);
                }
                d -= (z1sq * rho + rho * z1sq) * half * C64::new(loss[e], 0.0);
                d -= (z2sq * rho + rho * z2sq) * half * C64::new(loss[f], 0.0);
                out.set_block(e, f, &coefficients_of(&d));
            }
        }
        out
    }
}

impl OdeSystem for PairGeneral<'_> {
    fn dim(&self) -> usize {
        16 * self.model.n_levels().pow(2)
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        self.derivative_into(t, y, dy);
    }

    fn is_linear_autonomous(&self) -> bool {
        self.model.bias().is_none()
    }
    fn is_linear(&self) -> bool {
        true
    }
    fn conserved_weights(&self) -> Option<Vec<f64>> {
        let nn = self.model.n_levels().pow(2);
        Some((0..self.dim()).map(|k| if k < nn { 1.0 } else { 0.0 }).collect())
    }
}

/// The reduced equation for `ζ = ζ′ = 1` on the σ₂/σ₃ sector.
///
/// With `A[(a, E), (c, E_k)] = g(E) ξ_ac δ_{E E_k} + δ_ac (Γ(E_k → E) − δ_{E E_k} Σ_m Γ(E → E_m))`
/// the sector obeys `dX/dt = A X + X Aᵀ`.
pub struct PairReduced {
    n: usize,
    a: nalgebra::DMatrix<f64>,
}

/// `ξ₃₂ = 2`, `ξ₂₃ = −2` in the σ₂/σ₃ sector (index 0 ↔ σ₂, 1 ↔ σ₃).
const XI: [[f64; 2]; 2] = [[0.0, -2.0], [2.0, 0.0]];

impl PairReduced {
    pub fn new(model: &WellModel, rates: &RateTable) -> Result<Self> {
        let n = model.n_levels();
        if rates.n_levels() != n {
            return Err(Error::DimensionMismatch { expected: n, found: rates.n_levels() });
        }
        let g = model.splittings();
        let mut a = nalgebra::DMatrix::zeros(2 * n, 2 * n);
        for comp in 0..2 {
            for e in 0..n {
                let row = comp * n + e;
                for c in 0..2 {
                    a[(row, c * n + e)] += g[e] * XI[comp][c];
                }
                for k in 0..n {
                    if k != e {
                        a[(row, comp * n + k)] += rates.rate(k, e);
                    }
                }
                a[(row, row)] -= rates.loss()[e];
            }
        }
        Ok(PairReduced { n, a })
    }

    /// The `2n × 2n` single-index generator `A`.
    pub fn generator(&self) -> &nalgebra::DMatrix<f64> {
        &self.a
    }

    /// Closed form `X(t) = e^{At} X₀ e^{Aᵀt}`.
    pub fn propagate(&self, x0: &[f64], t: f64) -> Vec<f64> {
        let m = 2 * self.n;
        let x = nalgebra::DMatrix::from_row_slice(m, m, x0);
        let e = crate::integrator::expm(&(&self.a * t));
        let xt = &e * x * e.transpose();
        let mut out = vec![0.0; m * m];
        for r in 0..m {
            for c in 0..m {
                out[r * m + c] = xt[(r, c)];
            }
        }
        out
    }
}

/// `dX/dt` of the reduced equation as a free function on the row-major sector.
pub fn rhs_pair_reduced(x: &[f64], model: &WellModel, rates: &RateTable) -> Result<Vec<f64>> {
    let sys = PairReduced::new(model, rates)?;
    if x.len() != sys.dim() {
        return Err(Error::DimensionMismatch { expected: sys.dim(), found: x.len() });
    }
    let mut out = vec![0.0; x.len()];
    sys.rhs(0.0, x, &mut out);
    Ok(out)
}

/// `dx/dt` of the general equation as a free function.
pub fn rhs_pair_general(
    field: &PairBlochField,
    model: &WellModel,
    rates: &RateTable,
    first: CouplingSpec,
    second: CouplingSpec,
    t: f64,
) -> Result<PairBlochField> {
    PairGeneral::new(model, rates, first, second)?.rhs_field(field, t)
}

impl OdeSystem for PairReduced {
    fn dim(&self) -> usize {
        4 * self.n * self.n
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let m = 2 * self.n;
        dy.fill(0.0);
        // (A X)_rc + (X Aᵀ)_rc = Σ_k A_rk X_kc + Σ_k X_rk A_ck.
        for r in 0..m {
            for k in 0..m {
                let a_rk = self.a[(r, k)];
                if a_rk == 0.0 {
                    continue;
                }
                for c in 0..m {
                    dy[r * m + c] += a_rk * y[k * m + c];
                    dy[c * m + r] += a_rk * y[c * m + k];
                }
            }
        }
    }

    fn is_linear_autonomous(&self) -> bool {
        true
    }

    fn jacobian(&self, _t: f64, _y: &[f64], jac: &mut nalgebra::DMatrix<f64>) -> bool {
        // J = A ⊗ I + I ⊗ A on the row-major vectorisation.
        let m = 2 * self.n;
        jac.fill(0.0);
        for r in 0..m {
            for k in 0..m {
                let a_rk = self.a[(r, k)];
                if a_rk == 0.0 {
                    continue;
                }
                for c in 0..m {
                    jac[(r * m + c, k * m + c)] += a_rk;
                    jac[(c * m + r, c * m + k)] += a_rk;
                }
            }
        }
        true
    }
}

/// One sample of the pair observables.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairObservables {
    pub x33: f64,
    pub concurrence: f64,
    pub e_f: f64,
    pub x00_total: f64,
}

pub fn observe(field: &PairBlochField) -> Result<PairObservables> {
    let rho = assemble_rho4(field);
    let c = concurrence(&rho)?;
    Ok(PairObservables {
        x33: x33_observable(field),
        concurrence: c,
        e_f: entanglement_of_formation(c)?,
        x00_total: field.total(0, 0),
    })
}

#[derive(Clone, Debug)]
pub struct PairRun {
    pub t: Vec<f64>,
    pub fields: Vec<PairBlochField>,
    pub stats: Stats,
}

impl PairRun {
    pub fn observables(&self) -> Result<Vec<PairObservables>> {
        self.fields.iter().map(observe).collect()
    }

    /// Columns `t,x33,e_f,concurrence`.
    pub fn trajectory(&self) -> Result<Trajectory> {
        let mut tr = Trajectory::new(&["t", "x33", "e_f", "concurrence"]);
        for (t, o) in self.t.iter().zip(self.observables()?) {
            tr.push(vec![*t, o.x33, o.e_f, o.concurrence]);
        }
        Ok(tr)
    }
}

/// Integrates the reduced equation, keeping the static components of `initial`.
pub fn run_reduced(sys: &PairReduced, initial: &PairBlochField, cfg: &StepperConfig) -> Result<PairRun> {
    if initial.n_levels() != sys.n {
        return Err(Error::DimensionMismatch { expected: sys.n, found: initial.n_levels() });
    }
    let sol = integrate(sys, &initial.reduced(), cfg)?;
    let fields = sol.y.iter().map(|y| initial.with_reduced(y)).collect();
    Ok(PairRun { t: sol.t, fields, stats: sol.stats })
}

/// Integrates the general equation.
pub fn run_general(sys: &PairGeneral, initial: &PairBlochField, cfg: &StepperConfig) -> Result<PairRun> {
    let n = sys.model.n_levels();
    if initial.n_levels() != n {
        return Err(Error::DimensionMismatch { expected: n, found: initial.n_levels() });
    }
    let sol = integrate(sys, initial.as_slice(), cfg)?;
    let fields = sol.y.into_iter().map(|data| PairBlochField { n, data }).collect();
    Ok(PairRun { t: sol.t, fields, stats: sol.stats })
}
