//! Single-particle master equation on the doublet ladder.
//!
//! Each level carries a 2×2 Hermitian block `ρ_i` in the {L, R} basis. The
//! bath couples through `ζ = 1 + bσ₃`:
//!
//! ```text
//! dρ_i/dt = −i[g_i σ₁ + ε(t) σ₃, ρ_i] + Σ_j Γ_ji ζ ρ_j ζ − ½{ζ², ρ_i} Σ_j Γ_ij
//! ```

use crate::bath::{boltzmann_weights, RateTable};
use crate::error::{Error, Result};
use crate::integrator::{integrate, FlatState, Layout, OdeSystem, Solution, StepperConfig};
use crate::linalg::{Herm2, C64};
use crate::output::Trajectory;
use crate::well::WellModel;

/// Side-sensing strength `b` in `ζ = 1 + bσ₃`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CouplingSpec {
    b: f64,
}

impl CouplingSpec {
    pub fn new(b: f64) -> Result<Self> {
        if !(b.is_finite() && b.abs() <= 1.0) {
            return Err(Error::OutOfRange { value: b, lo: -1.0, hi: 1.0 });
        }
        Ok(CouplingSpec { b })
    }

    pub const SIDE_BLIND: CouplingSpec = CouplingSpec { b: 0.0 };

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Diagonal of `ζ`.
    pub fn zeta(&self) -> (f64, f64) {
        (1.0 + self.b, 1.0 - self.b)
    }

    /// `½{ζ², ρ}`.
    pub fn half_anticommutator_zeta2(&self, rho: &Herm2) -> Herm2 {
        let (l, r) = self.zeta();
        let off = 0.5 * (l * l + r * r);
        Herm2::new(l * l * rho.ll, r * r * rho.rr, off * rho.lr_re, off * rho.lr_im)
    }
}

/// Per-level horizontal density matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityLadder {
    pub levels: Vec<Herm2>,
}

impl DensityLadder {
    pub fn new(levels: Vec<Herm2>) -> Self {
        DensityLadder { levels }
    }

    /// `ρ_i = p_i |L⟩⟨L|` with Boltzmann weights.
    pub fn thermal_left(energies: &[f64], temperature: f64) -> Self {
        let p = boltzmann_weights(energies, temperature);
        DensityLadder { levels: p.into_iter().map(|w| Herm2::diag(w, 0.0)).collect() }
    }

    /// `ρ_i = (p_i/2) I`, the horizontally mixed thermal state.
    pub fn thermal_mixed(energies: &[f64], temperature: f64) -> Self {
        let p = boltzmann_weights(energies, temperature);
        DensityLadder { levels: p.into_iter().map(|w| Herm2::diag(0.5 * w, 0.5 * w)).collect() }
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn layout(&self) -> Layout {
        Layout::Ladder(self.n_levels())
    }

    pub fn to_flat(&self) -> FlatState {
        let data = self.levels.iter().flat_map(|h| h.to_array()).collect();
        FlatState::new(self.layout(), data).expect("ladder layout matches its length")
    }

    pub fn from_flat(state: &FlatState) -> Result<Self> {
        match state.layout() {
            Layout::Ladder(n) => Ok(Self::from_slice(&state.as_slice()[..4 * n])),
            other => Err(Error::LayoutMismatch { expected: "Ladder".into(), found: format!("{other:?}") }),
        }
    }

    pub fn from_slice(s: &[f64]) -> Self {
        DensityLadder { levels: s.chunks_exact(4).map(Herm2::from_slice).collect() }
    }

    pub fn trace(&self) -> f64 {
        self.levels.iter().map(Herm2::trace).sum()
    }

    pub fn p_left(&self) -> f64 {
        self.levels.iter().map(|h| h.ll).sum()
    }

    /// `−Σ_i Tr ρ_i ln ρ_i`, eigenvalues clipped at zero.
    pub fn entropy(&self) -> f64 {
        self.levels
            .iter()
            .map(|h| {
                let (lo, hi) = h.eigenvalues();
                xlnx(lo) + xlnx(hi)
            })
            .sum()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.levels.iter().map(|h| h.eigenvalues().0).fold(f64::INFINITY, f64::min)
    }

    /// `Tr ρ²` summed over levels.
    pub fn purity(&self) -> f64 {
        self.levels.iter().map(Herm2::purity).sum()
    }
}

fn xlnx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        -x * x.ln()
    }
}

/// The master equation bound to a model, a rate table and a coupling.
pub struct SingleParticle<'a> {
    model: &'a WellModel,
    rates: &'a RateTable,
    coupling: CouplingSpec,
}

impl<'a> SingleParticle<'a> {
    pub fn new(model: &'a WellModel, rates: &'a RateTable, coupling: CouplingSpec) -> Result<Self> {
        if rates.n_levels() != model.n_levels() {
            return Err(Error::DimensionMismatch { expected: model.n_levels(), found: rates.n_levels() });
        }
        Ok(SingleParticle { model, rates, coupling })
    }

    pub fn coupling(&self) -> CouplingSpec {
        self.coupling
    }

    fn derivative_into(&self, t: f64, rho: &[Herm2], out: &mut [Herm2]) {
        let n = rho.len();
        let g = self.model.splittings();
        let eps = self.model.epsilon(t);
        let (zl, zr) = self.coupling.zeta();
        let gamma = self.rates.gamma();
        let loss = self.rates.loss();
        let sandwiched: Vec<Herm2> = rho.iter().map(|h| h.sandwich_diag(zl, zr)).collect();
        for i in 0..n {
            let mut d = rho[i].tunnel_commutator(g[i], eps);
            for j in 0..n {
                let rate = gamma[(j, i)];
                if rate != 0.0 {
                    d += sandwiched[j] * rate;
                }
            }
            d = d - self.coupling.half_anticommutator_zeta2(&rho[i]) * loss[i];
            out[i] = d;
        }
    }

    pub fn rhs_ladder(&self, state: &DensityLadder, t: f64) -> Result<DensityLadder> {
        if state.n_levels() != self.model.n_levels() {
            return Err(Error::DimensionMismatch { expected: self.model.n_levels(), found: state.n_levels() });
        }
        let mut out = vec![Herm2::ZERO; state.n_levels()];
        self.derivative_into(t, &state.levels, &mut out);
        Ok(DensityLadder::new(out))
    }

    pub fn run(&self, initial: &DensityLadder, cfg: &StepperConfig) -> Result<SingleRun> {
        let flat = initial.to_flat();
        flat.expect(Layout::Ladder(self.model.n_levels()))?;
        let sol = integrate(self, flat.as_slice(), cfg)?;
        Ok(SingleRun::from_solution(sol))
    }
}

/// `dρ/dt` of the ladder equation as a free function.
pub fn rhs_single(
    state: &DensityLadder,
    model: &WellModel,
    rates: &RateTable,
    coupling: CouplingSpec,
    t: f64,
) -> Result<DensityLadder> {
    SingleParticle::new(model, rates, coupling)?.rhs_ladder(state, t)
}

impl OdeSystem for SingleParticle<'_> {
    fn dim(&self) -> usize {
        4 * self.model.n_levels()
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let rho = DensityLadder::from_slice(y).levels;
        let mut out = vec![Herm2::ZERO; rho.len()];
        self.derivative_into(t, &rho, &mut out);
        for (chunk, h) in dy.chunks_exact_mut(4).zip(out) {
            chunk.copy_from_slice(&h.to_array());
        }
    }

    fn is_linear_autonomous(&self) -> bool {
        self.model.bias().is_none()
    }
    fn is_linear(&self) -> bool {
        true
    }
    fn conserved_weights(&self) -> Option<Vec<f64>> {
        Some((0..self.dim()).map(|k| if k % 4 < 2 { 1.0 } else { 0.0 }).collect())
    }
}

/// Sampled single-particle trajectory with conservation diagnostics.
#[derive(Clone, Debug)]
pub struct SingleRun {
    pub t: Vec<f64>,
    pub states: Vec<DensityLadder>,
    pub stats: crate::integrator::Stats,
}

impl SingleRun {
    fn from_solution(sol: Solution) -> Self {
        let states = sol.y.iter().map(|y| DensityLadder::from_slice(y)).collect();
        SingleRun { t: sol.t, states, stats: sol.stats }
    }

    pub fn p_left(&self) -> Vec<f64> {
        self.states.iter().map(DensityLadder::p_left).collect()
    }

    pub fn entropy(&self) -> Vec<f64> {
        self.states.iter().map(DensityLadder::entropy).collect()
    }

    pub fn max_trace_defect(&self) -> f64 {
        let t0 = self.states[0].trace();
        self.states.iter().map(|s| (s.trace() - t0).abs()).fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.states.iter().map(DensityLadder::min_eigenvalue).fold(f64::INFINITY, f64::min)
    }

    /// Columns `t,p_left,entropy`.
    pub fn trajectory(&self) -> Trajectory {
        let mut tr = Trajectory::new(&["t", "p_left", "entropy"]);
        for (t, s) in self.t.iter().zip(&self.states) {
            tr.push(vec![*t, s.p_left(), s.entropy()]);
        }
        tr
    }
}

/// One level with an injected self-rate `Γ`: the dephasing form
/// `dρ/dt = −i[gσ₁, ρ] + Γ(ζρζ − ½{ζ², ρ})`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoLevel {
    pub g: f64,
    pub b: f64,
    pub gamma: f64,
}

impl TwoLevel {
    /// Off-diagonal damping rate `2b²Γ`.
    pub fn dephasing_rate(&self) -> f64 {
        2.0 * self.b * self.b * self.gamma
    }

    pub fn derivative(&self, rho: &Herm2) -> Herm2 {
        let c = CouplingSpec { b: self.b };
        let (l, r) = c.zeta();
        rho.tunnel_commutator(self.g, 0.0) + (rho.sandwich_diag(l, r) - c.half_anticommutator_zeta2(rho)) * self.gamma
    }

    /// Closed-form damped Bloch solution.
    pub fn closed_form(&self, rho0: &Herm2, t: f64) -> Herm2 {
        // ρ = ½(n + r·σ): r1 = 2 Re ρ_LR, r2 = −2 Im ρ_LR, r3 = ρ_LL − ρ_RR.
        let n = rho0.trace();
        let r1 = 2.0 * rho0.lr_re;
        let r2 = -2.0 * rho0.lr_im;
        let r3 = rho0.ll - rho0.rr;
        let gam = self.dephasing_rate();
        // (r2, r3)' = M (r2, r3) with M = −γ/2 I + N and N² = s² I.
        let s2 = 0.25 * gam * gam - 4.0 * self.g * self.g;
        let (c, sinc) = if s2 > 0.0 {
            let s = s2.sqrt();
            ((s * t).cosh(), (s * t).sinh() / s)
        } else if s2 < 0.0 {
            let w = (-s2).sqrt();
            ((w * t).cos(), (w * t).sin() / w)
        } else {
            (1.0, t)
        };
        let decay = (-0.5 * gam * t).exp();
        let n11 = -0.5 * gam;
        let n12 = -2.0 * self.g;
        let n21 = 2.0 * self.g;
        let n22 = 0.5 * gam;
        let r2t = decay * (c * r2 + sinc * (n11 * r2 + n12 * r3));
        let r3t = decay * (c * r3 + sinc * (n21 * r2 + n22 * r3));
        let r1t = (-gam * t).exp() * r1;
        Herm2::new(0.5 * (n + r3t), 0.5 * (n - r3t), 0.5 * r1t, -0.5 * r2t)
    }
}

impl OdeSystem for TwoLevel {
    fn dim(&self) -> usize {
        4
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        dy.copy_from_slice(&self.derivative(&Herm2::from_slice(y)).to_array());
    }

    fn is_linear_autonomous(&self) -> bool {
        true
    }
}

/// Integrates the one-level equation and returns the largest entrywise
/// deviation from the closed form over the sample grid.
pub fn reduced_two_level_check(system: &TwoLevel, rho0: &Herm2, cfg: &StepperConfig) -> Result<f64> {
    let sol = integrate(system, &rho0.to_array(), cfg)?;
    Ok(sol
        .t
        .iter()
        .zip(&sol.y)
        .map(|(t, y)| (Herm2::from_slice(y) - system.closed_form(rho0, *t)).max_abs())
        .fold(0.0, f64::max))
}

/// Whether the colliding bath particle can tell L from R.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Collision {
    /// `b = 0`: the bath state factorises, the superposition survives.
    SideBlind,
    /// `b = 1`: the bath records the side, coherence is traced out.
    SideSensing,
}

/// Reduced horizontal state right after one collision with `c1|L⟩ + c2|R⟩`.
pub fn collision_toy(c1: C64, c2: C64, kind: Collision) -> Result<Herm2> {
    let norm = c1.norm_sqr() + c2.norm_sqr();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::NonNormalized { norm });
    }
    let pure = Herm2::projector(c1, c2);
    Ok(match kind {
        Collision::SideBlind => pure,
        Collision::SideSensing => Herm2::diag(pure.ll, pure.rr),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::{BathSpec, CalibratedBath};
    use crate::integrator::Method;
    use crate::well::WellSpec;
    use nalgebra::DMatrix;

    fn model(n: usize) -> WellModel {
        WellModel::new(WellSpec::default().with_levels(n)).unwrap()
    }

    #[test]
    fn thermal_left_is_all_left() {
        let m = model(20);
        let s = DensityLadder::thermal_left(m.energies(), 5.0);
        assert!((s.p_left() - 1.0).abs() < 1e-15);
        assert!((s.trace() - 1.0).abs() < 1e-15);
        let cold = DensityLadder::thermal_left(m.energies(), 1e-3);
        assert!((cold.levels[0].ll - 1.0).abs() < 1e-15);
    }

    #[test]
    fn entropy_of_pure_and_mixed() {
        let pure = DensityLadder::new(vec![Herm2::projector(C64::new(0.6, 0.0), C64::new(0.0, 0.8))]);
        assert!(pure.entropy().abs() < 1e-7);
        let m = model(20);
        let mixed = DensityLadder::thermal_mixed(m.energies(), 5.0);
        let p = boltzmann_weights(m.energies(), 5.0);
        let expected: f64 = p.iter().map(|p| -p * (p / 2.0).ln()).sum();
        assert!((mixed.entropy() - expected).abs() < 1e-12);
        assert!((mixed.p_left() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_rates_zero_splitting_gives_zero_derivative() {
        let m = WellModel::from_tables(vec![1.0, 4.0], vec![0.0, 0.0], DMatrix::zeros(2, 2)).unwrap();
        let t = RateTable::from_matrix(vec![1.0, 4.0], DMatrix::zeros(2, 2)).unwrap();
        let s = DensityLadder::new(vec![Herm2::diag(0.3, 0.2), Herm2::diag(0.4, 0.1)]);
        let d = rhs_single(&s, &m, &t, CouplingSpec::new(0.4).unwrap(), 0.0).unwrap();
        assert!(d.levels.iter().all(|h| h.max_abs() == 0.0));
    }

    #[test]
    fn free_rabi_flop() {
        let m = model(1);
        let bath = CalibratedBath::with_coupling(&m, BathSpec::new(5.0, 0.0)).unwrap();
        let sys = SingleParticle::new(&m, &bath.table, CouplingSpec::SIDE_BLIND).unwrap();
        let g = m.splittings()[0];
        let t_quarter = std::f64::consts::PI / (4.0 * g);
        let cfg = StepperConfig::new(Method::DormandPrince { rel_tol: 1e-11, abs_tol: 1e-14 }, 8.0 * t_quarter, 32);
        let run = sys.run(&DensityLadder::thermal_left(m.energies(), 5.0), &cfg).unwrap();
        for (t, p) in run.t.iter().zip(run.p_left()) {
            assert!((p - (g * t).cos().powi(2)).abs() < 1e-8);
        }
        assert!((run.p_left()[4] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn equilibrium_is_stationary() {
        let m = model(20);
        let bath = CalibratedBath::for_ratio(&m, 5.0, 10.0).unwrap();
        let s = DensityLadder::thermal_mixed(m.energies(), 5.0);
        let d = rhs_single(&s, &m, &bath.table, CouplingSpec::SIDE_BLIND, 0.0).unwrap();
        let worst = d.levels.iter().map(Herm2::max_abs).fold(0.0, f64::max);
        let scale = bath.table.loss().iter().cloned().fold(0.0, f64::max);
        assert!(worst < 1e-12 * scale, "{worst}");
    }

    #[test]
    fn rhs_rejects_wrong_size() {
        let m = model(3);
        let bath = CalibratedBath::for_ratio(&m, 5.0, 1.0).unwrap();
        let s = DensityLadder::thermal_left(&[1.0, 4.0], 5.0);
        assert!(matches!(
            rhs_single(&s, &m, &bath.table, CouplingSpec::SIDE_BLIND, 0.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn coupling_range() {
        assert!(CouplingSpec::new(1.0).is_ok());
        assert!(CouplingSpec::new(-1.0).is_ok());
        assert!(CouplingSpec::new(1.01).is_err());
    }

    #[test]
    fn two_level_pure_dephasing() {
        let sys = TwoLevel { g: 0.0, b: 1.0, gamma: 0.3 };
        let rho0 = Herm2::new(0.5, 0.5, 0.5, 0.0);
        for t in [0.0, 0.5, 2.0] {
            let r = sys.closed_form(&rho0, t);
            assert!((r.lr_re - 0.5 * (-0.6 * t).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn two_level_closed_form_matches_dense_generator() {
        for (g, b, gamma) in [(0.3, 0.4, 0.2), (0.05, 0.9, 1.5), (0.1, 0.5, 0.4)] {
            let sys = TwoLevel { g, b, gamma };
            let gen = crate::integrator::liouvillian_matrix(&sys, 0.0).unwrap();
            let rho0 = Herm2::new(0.7, 0.3, 0.1, -0.2);
            for t in [0.3, 1.7, 6.0] {
                let dense = crate::integrator::expm(&(&gen * t)) * nalgebra::DVector::from_row_slice(&rho0.to_array());
                let closed = sys.closed_form(&rho0, t).to_array();
                for k in 0..4 {
                    assert!((dense[k] - closed[k]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn unitary_two_level_check() {
        let sys = TwoLevel { g: 0.4, b: 0.0, gamma: 0.7 };
        let cfg = StepperConfig::new(Method::DormandPrince { rel_tol: 1e-11, abs_tol: 1e-14 }, 20.0, 40);
        let dev = reduced_two_level_check(&sys, &Herm2::diag(1.0, 0.0), &cfg).unwrap();
        assert!(dev < 1e-8, "{dev}");
    }

    #[test]
    fn collisions() {
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        assert_eq!(collision_toy(one, zero, Collision::SideSensing).unwrap(), Herm2::diag(1.0, 0.0));
        let h = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let sensed = collision_toy(h, h, Collision::SideSensing).unwrap();
        assert!((sensed - Herm2::diag(0.5, 0.5)).max_abs() < 1e-15);
        let blind = collision_toy(h, h, Collision::SideBlind).unwrap();
        assert!((blind.lr_re - 0.5).abs() < 1e-15 && (blind.purity() - 1.0).abs() < 1e-15);
        assert!(matches!(collision_toy(one, one, Collision::SideBlind), Err(Error::NonNormalized { .. })));
    }
}
