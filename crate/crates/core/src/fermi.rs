//! Pauli-blocked master equation for independently occupied fermion states.
//!
//! The ladder state is as in the single-particle case but its trace is the
//! mean particle number. Gain and loss carry symmetrised `(1 − ρ)` factors:
//!
//! ```text
//! dρ_i/dt = −i[λ_i, ρ_i] + ½ Σ_j {1 − ρ_i, ζρ_jζ} Γ_ji − ½ Σ_j {ρ_i, ζ(1 − ρ_j)ζ} Γ_ij
//! ```

use nalgebra::DMatrix;

use crate::bath::RateTable;
use crate::error::{Error, Result};
use crate::integrator::{integrate, Layout, OdeSystem, StepperConfig, Stats};
use crate::linalg::Herm2;
use crate::output::{sig17, Trajectory};
use crate::single::{CouplingSpec, DensityLadder};
use crate::well::WellModel;

/// Ladder of occupation matrices. Shares the storage of [`DensityLadder`].
pub type OccupancyLadder = DensityLadder;

/// Fermi function `[1 + e^{(E − μ)/T}]⁻¹`.
pub fn fermi_function(energy: f64, mu: f64, temperature: f64) -> f64 {
    let x = (energy - mu) / temperature;
    if x > 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FermiEquilibrium {
    pub mu: f64,
    pub temperature: f64,
    pub target_n: f64,
    /// Horizontal states available per level: 2 for independent L and R,
    /// 1 for an ensemble locked into a single common horizontal state.
    pub degeneracy: f64,
}

impl FermiEquilibrium {
    pub fn occupancies(&self, energies: &[f64]) -> Vec<f64> {
        energies.iter().map(|e| fermi_function(*e, self.mu, self.temperature)).collect()
    }

    /// `d Σ_j f(E_j) − N`.
    pub fn residual(&self, energies: &[f64]) -> f64 {
        self.degeneracy * self.occupancies(energies).iter().sum::<f64>() - self.target_n
    }

    /// `ρ_i = f_i I₂`.
    pub fn state(&self, energies: &[f64]) -> OccupancyLadder {
        DensityLadder::new(self.occupancies(energies).into_iter().map(|f| Herm2::diag(f, f)).collect())
    }

    /// `Σ_i f_i 2g_i / Σ_i f_i`, the angular frequency of a synchronised ensemble.
    pub fn weighted_frequency(&self, energies: &[f64], splittings: &[f64]) -> f64 {
        let f = self.occupancies(energies);
        let num: f64 = f.iter().zip(splittings).map(|(f, g)| 2.0 * f * g).sum();
        num / f.iter().sum::<f64>()
    }
}

/// Chemical potential for mean particle number `target_n` with independent
/// L and R occupancies: `2 Σ_j f(E_j) = N`.
pub fn solve_mu(target_n: f64, temperature: f64, energies: &[f64]) -> Result<FermiEquilibrium> {
    solve_mu_with_degeneracy(target_n, temperature, energies, 2.0)
}

/// As [`solve_mu`] with `degeneracy` states per level. A synchronised
/// ensemble shares one horizontal state and fills levels with `d = 1`.
pub fn solve_mu_with_degeneracy(target_n: f64, temperature: f64, energies: &[f64], degeneracy: f64) -> Result<FermiEquilibrium> {
    let max = degeneracy * energies.len() as f64;
    if !(target_n > 0.0 && target_n < max) {
        return Err(Error::Infeasible { target: target_n, levels: energies.len(), max });
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::invalid("temperature", format!("must be positive, got {temperature}")));
    }
    let count =
        |mu: f64| degeneracy * energies.iter().map(|e| fermi_function(*e, mu, temperature)).sum::<f64>() - target_n;
    let e_lo = energies.iter().cloned().fold(f64::INFINITY, f64::min);
    let e_hi = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut width = temperature.max(e_hi - e_lo).max(1.0);
    let (mut lo, mut hi) = (e_lo - width, e_hi + width);
    while count(lo) > 0.0 || count(hi) < 0.0 {
        width *= 2.0;
        lo = e_lo - width;
        hi = e_hi + width;
        if !width.is_finite() {
            return Err(Error::Infeasible { target: target_n, levels: energies.len(), max });
        }
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mu = if count(lo).abs() <= count(hi).abs() { lo } else { hi };
    Ok(FermiEquilibrium { mu, temperature, target_n, degeneracy })
}

/// `ρ_i = ½|L⟩⟨L|` for the lowest `n_occupied` levels, zero above.
pub fn half_filled_left_state(n_occupied: usize, n_levels: usize) -> Result<OccupancyLadder> {
    if n_occupied > n_levels {
        return Err(Error::invalid("n_occupied", format!("{n_occupied} exceeds the {n_levels} levels")));
    }
    Ok(DensityLadder::new(
        (0..n_levels).map(|i| if i < n_occupied { Herm2::diag(0.5, 0.0) } else { Herm2::ZERO }).collect(),
    ))
}

pub fn n_left(state: &OccupancyLadder) -> f64 {
    state.levels.iter().map(|h| h.ll).sum()
}

pub fn n_right(state: &OccupancyLadder) -> f64 {
    state.levels.iter().map(|h| h.rr).sum()
}

/// The blocked equation bound to a model, rates and coupling.
pub struct FermiEnsemble<'a> {
    model: &'a WellModel,
    rates: &'a RateTable,
    coupling: CouplingSpec,
}

impl<'a> FermiEnsemble<'a> {
    pub fn new(model: &'a WellModel, rates: &'a RateTable, coupling: CouplingSpec) -> Result<Self> {
        if rates.n_levels() != model.n_levels() {
            return Err(Error::DimensionMismatch { expected: model.n_levels(), found: rates.n_levels() });
        }
        Ok(FermiEnsemble { model, rates, coupling })
    }

    fn derivative_into(&self, t: f64, rho: &[Herm2], out: &mut [Herm2]) {
        let g = self.model.splittings();
        let eps = self.model.epsilon(t);
        self.collisions_into(rho, out);
        for i in 0..rho.len() {
            out[i] += rho[i].tunnel_commutator(g[i], eps);
        }
    }

    /// The blocked gain and loss terms alone.
    fn collisions_into(&self, rho: &[Herm2], out: &mut [Herm2]) {
        let n = rho.len();
        let (zl, zr) = self.coupling.zeta();
        let zeta2 = Herm2::diag(zl * zl, zr * zr);
        let gamma = self.rates.gamma();
        let loss = self.rates.loss();
        let sandwiched: Vec<Herm2> = rho.iter().map(|h| h.sandwich_diag(zl, zr)).collect();
        for i in 0..n {
            // S_i = Σ_j Γ_ji ζρ_jζ and M_i = Σ_j Γ_ij ζ(1 − ρ_j)ζ.
            let mut s = Herm2::ZERO;
            let mut m = zeta2 * loss[i];
            for j in 0..n {
                let into = gamma[(j, i)];
                if into != 0.0 {
                    s += sandwiched[j] * into;
                }
                let out_of = gamma[(i, j)];
                if out_of != 0.0 {
                    m = m - sandwiched[j] * out_of;
                }
            }
            let gain = s - rho[i].anticommutator(&s) * 0.5;
            let lose = rho[i].anticommutator(&m) * 0.5;
            out[i] = gain - lose;
        }
    }

    pub fn rhs_ladder(&self, state: &OccupancyLadder, t: f64) -> Result<OccupancyLadder> {
        if state.n_levels() != self.model.n_levels() {
            return Err(Error::DimensionMismatch { expected: self.model.n_levels(), found: state.n_levels() });
        }
        let mut out = vec![Herm2::ZERO; state.n_levels()];
        self.derivative_into(t, &state.levels, &mut out);
        Ok(DensityLadder::new(out))
    }

    pub fn run(&self, initial: &OccupancyLadder, cfg: &StepperConfig) -> Result<FermiRun> {
        let flat = initial.to_flat();
        flat.expect(Layout::Ladder(self.model.n_levels()))?;
        let sol = integrate(self, flat.as_slice(), cfg)?;
        let states = sol.y.iter().map(|y| DensityLadder::from_slice(y)).collect();
        Ok(FermiRun { t: sol.t, states, stats: sol.stats })
    }
}

impl FermiEnsemble<'_> {
    /// Strang splitting: exact half-step precession of every level around a
    /// classical RK4 step of the collision terms. Suited to weak coupling,
    /// where the free oscillations of the upper doublets are fast but the
    /// collisions are slow.
    pub fn run_split(&self, initial: &OccupancyLadder, t_max: f64, samples: usize, dt: f64) -> Result<FermiRun> {
        let n = self.model.n_levels();
        if initial.n_levels() != n {
            return Err(Error::DimensionMismatch { expected: n, found: initial.n_levels() });
        }
        let cfg = StepperConfig::new(crate::integrator::Method::Rk4 { dt }, t_max, samples);
        cfg.validate()?;
        let g = self.model.splittings();
        let mut rho = initial.levels.clone();
        let mut t = 0.0;
        let mut stats = Stats::default();
        let mut run = FermiRun { t: vec![0.0], states: vec![initial.clone()], stats };
        let (mut k1, mut k2, mut k3, mut k4) = (vec![Herm2::ZERO; n], vec![Herm2::ZERO; n], vec![Herm2::ZERO; n], vec![Herm2::ZERO; n]);
        let mut tmp = vec![Herm2::ZERO; n];
        let n_samples = (t_max / cfg.sample_interval - 1e-9).ceil().max(1.0) as usize;
        for k in 1..=n_samples {
            let target = if k == n_samples { t_max } else { k as f64 * cfg.sample_interval };
            let steps = ((target - t) / dt - 1e-9).ceil().max(1.0) as usize;
            let h = (target - t) / steps as f64;
            for s in 0..steps {
                if stats.accepted >= cfg.max_steps {
                    return Err(Error::TooManySteps { t, max_steps: cfg.max_steps });
                }
                let eps = self.model.epsilon(t + (s as f64 + 0.5) * h);
                for (r, gi) in rho.iter_mut().zip(g) {
                    *r = r.precess(*gi, eps, 0.5 * h);
                }
                self.collisions_into(&rho, &mut k1);
                for i in 0..n {
                    tmp[i] = rho[i] + k1[i] * (0.5 * h);
                }
                self.collisions_into(&tmp, &mut k2);
                for i in 0..n {
                    tmp[i] = rho[i] + k2[i] * (0.5 * h);
                }
                self.collisions_into(&tmp, &mut k3);
                for i in 0..n {
                    tmp[i] = rho[i] + k3[i] * h;
                }
                self.collisions_into(&tmp, &mut k4);
                for i in 0..n {
                    rho[i] = (rho[i] + (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (h / 6.0)).precess(g[i], eps, 0.5 * h);
                }
                stats.accepted += 1;
                stats.rhs_evals += 4;
            }
            t = target;
            if rho.iter().any(|r| !r.max_abs().is_finite()) {
                return Err(Error::NonFinite { t });
            }
            run.t.push(t);
            run.states.push(DensityLadder::new(rho.clone()));
        }
        run.stats = stats;
        Ok(run)
    }
}

/// `dρ/dt` of the blocked equation as a free function.
pub fn rhs_fermi(
    state: &OccupancyLadder,
    model: &WellModel,
    rates: &RateTable,
    coupling: CouplingSpec,
    t: f64,
) -> Result<OccupancyLadder> {
    FermiEnsemble::new(model, rates, coupling)?.rhs_ladder(state, t)
}

impl OdeSystem for FermiEnsemble<'_> {
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

    fn jacobian(&self, t: f64, y: &[f64], jac: &mut DMatrix<f64>) -> bool {
        let rho = DensityLadder::from_slice(y).levels;
        let n = rho.len();
        let g = self.model.splittings();
        let eps = self.model.epsilon(t);
        let (zl, zr) = self.coupling.zeta();
        let z = [zl * zl, zr * zr, zl * zr, zl * zr];
        let gamma = self.rates.gamma();
        let loss = self.rates.loss();
        jac.fill(0.0);
        for i in 0..n {
            // P_i = S_i + M_i enters the diagonal block as −½{·, P_i}.
            let mut p = Herm2::diag(z[0], z[1]) * loss[i];
            for j in 0..n {
                let net = gamma[(j, i)] - gamma[(i, j)];
                if net != 0.0 {
                    p += rho[j].sandwich_diag(zl, zr) * net;
                }
            }
            let k = anticommutator_matrix(&p);
            let mut block = [[0.0; 4]; 4];
            for r in 0..4 {
                for c in 0..4 {
                    block[r][c] = -0.5 * k[r][c];
                }
            }
            block[0][3] += -2.0 * g[i];
            block[1][3] += 2.0 * g[i];
            block[2][3] += 2.0 * eps;
            block[3][0] += g[i];
            block[3][1] -= g[i];
            block[3][2] -= 2.0 * eps;
            set_block(jac, i, i, &block);
            let ki = anticommutator_matrix(&rho[i]);
            for k in 0..n {
                if k == i {
                    continue;
                }
                let (into, out_of) = (gamma[(k, i)], gamma[(i, k)]);
                if into == 0.0 && out_of == 0.0 {
                    continue;
                }
                let half_net = 0.5 * (into - out_of);
                let mut block = [[0.0; 4]; 4];
                for r in 0..4 {
                    for c in 0..4 {
                        let direct = if r == c { into } else { 0.0 };
                        block[r][c] = (direct - half_net * ki[r][c]) * z[c];
                    }
                }
                set_block(jac, i, k, &block);
            }
        }
        true
    }
}

/// Matrix of `δ ↦ {A, δ}` on the components `(ll, rr, Re lr, Im lr)`.
fn anticommutator_matrix(a: &Herm2) -> [[f64; 4]; 4] {
    let tr = a.trace();
    [
        [2.0 * a.ll, 0.0, 2.0 * a.lr_re, 2.0 * a.lr_im],
        [0.0, 2.0 * a.rr, 2.0 * a.lr_re, 2.0 * a.lr_im],
        [a.lr_re, a.lr_re, tr, 0.0],
        [a.lr_im, a.lr_im, 0.0, tr],
    ]
}

fn set_block(jac: &mut DMatrix<f64>, i: usize, k: usize, block: &[[f64; 4]; 4]) {
    for r in 0..4 {
        for c in 0..4 {
            jac[(4 * i + r, 4 * k + c)] = block[r][c];
        }
    }
}

#[derive(Clone, Debug)]
pub struct FermiRun {
    pub t: Vec<f64>,
    pub states: Vec<OccupancyLadder>,
    pub stats: Stats,
}

impl FermiRun {
    pub fn n_left(&self) -> Vec<f64> {
        self.states.iter().map(n_left).collect()
    }

    pub fn max_number_defect(&self) -> f64 {
        let n0 = self.states[0].trace();
        self.states.iter().map(|s| (s.trace() - n0).abs()).fold(0.0, f64::max)
    }

    /// Smallest and largest eigenvalue over all levels and samples.
    pub fn occupancy_bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in &self.states {
            for h in &s.levels {
                let (a, b) = h.eigenvalues();
                lo = lo.min(a);
                hi = hi.max(b);
            }
        }
        (lo, hi)
    }

    /// Columns `t,n_left,n_right`.
    pub fn trajectory(&self) -> Trajectory {
        let mut tr = Trajectory::new(&["t", "n_left", "n_right"]);
        for (t, s) in self.t.iter().zip(&self.states) {
            tr.push(vec![*t, n_left(s), n_right(s)]);
        }
        tr
    }

    /// Final occupancies as `level,energy,occupancy_L,occupancy_R`.
    pub fn final_distribution_csv(&self, energies: &[f64]) -> String {
        let mut s = String::from("level,energy,occupancy_L,occupancy_R\n");
        let last = self.states.last().expect("run has samples");
        for (i, h) in last.levels.iter().enumerate() {
            s.push_str(&format!("{},{},{},{}\n", i + 1, sig17(energies[i]), sig17(h.ll), sig17(h.rr)));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::CalibratedBath;
    use crate::well::WellSpec;

    fn setup() -> (WellModel, CalibratedBath) {
        let m = WellModel::new(WellSpec::default()).unwrap();
        let bath = CalibratedBath::for_ratio(&m, 5.0, 1.0).unwrap();
        (m, bath)
    }

    #[test]
    fn empty_and_full_ladders_are_stationary_under_collisions() {
        let (m, bath) = setup();
        let c = CouplingSpec::new(0.3).unwrap();
        let empty = DensityLadder::new(vec![Herm2::ZERO; 20]);
        let d = rhs_fermi(&empty, &m, &bath.table, c, 0.0).unwrap();
        assert!(d.levels.iter().all(|h| h.max_abs() == 0.0));
        let full = DensityLadder::new(vec![Herm2::IDENTITY; 20]);
        let d = rhs_fermi(&full, &m, &bath.table, c, 0.0).unwrap();
        // The identity commutes with λ, so only collision terms could remain.
        assert!(d.levels.iter().all(|h| h.max_abs() < 1e-20));
    }

    #[test]
    fn mu_constraint_and_step_limit() {
        let m = WellModel::new(WellSpec::default()).unwrap();
        let eq = solve_mu(8.0, 5.0, m.energies()).unwrap();
        assert!(eq.residual(m.energies()).abs() < 1e-10);
        let cold = solve_mu(8.0, 1e-3, m.energies()).unwrap();
        let f = cold.occupancies(m.energies());
        assert!(f[..4].iter().all(|f| (f - 1.0).abs() < 1e-12));
        assert!(f[4..].iter().all(|f| *f < 1e-12));
        let nearly_full = solve_mu(40.0 - 1e-6, 5.0, m.energies()).unwrap();
        assert!(nearly_full.mu > 400.0);
        assert!(matches!(solve_mu(40.0, 5.0, m.energies()), Err(Error::Infeasible { .. })));
        assert!(matches!(solve_mu(0.0, 5.0, m.energies()), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let m = WellModel::new(WellSpec::default().with_levels(5)).unwrap();
        let bath = CalibratedBath::for_ratio(&m, 5.0, 3.0).unwrap();
        let sys = FermiEnsemble::new(&m, &bath.table, CouplingSpec::new(0.4).unwrap()).unwrap();
        let y: Vec<f64> = (0..20).map(|k| 0.1 + 0.37 * ((k * 7 % 11) as f64) / 11.0).collect();
        let mut jac = DMatrix::zeros(20, 20);
        assert!(sys.jacobian(0.0, &y, &mut jac));
        let mut f0 = vec![0.0; 20];
        let mut f1 = vec![0.0; 20];
        let mut f2 = vec![0.0; 20];
        sys.rhs(0.0, &y, &mut f0);
        let scale = jac.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for k in 0..20 {
            // Central differences are exact for a quadratic right-hand side.
            let h = 1e-3;
            let mut yp = y.clone();
            yp[k] += h;
            sys.rhs(0.0, &yp, &mut f1);
            yp[k] -= 2.0 * h;
            sys.rhs(0.0, &yp, &mut f2);
            for i in 0..20 {
                let fd = (f1[i] - f2[i]) / (2.0 * h);
                assert!((fd - jac[(i, k)]).abs() < 1e-9 * scale, "({i},{k}): {fd} vs {}", jac[(i, k)]);
            }
        }
    }

    #[test]
    fn half_filled_start() {
        let s = half_filled_left_state(16, 20).unwrap();
        assert_eq!(s.trace(), 8.0);
        assert_eq!(n_left(&s), 8.0);
        assert_eq!(n_right(&s), 0.0);
        assert!(half_filled_left_state(21, 20).is_err());
    }

    #[test]
    fn fermi_equilibrium_is_stationary() {
        let (m, bath) = setup();
        let eq = solve_mu(8.0, 5.0, m.energies()).unwrap();
        let state = eq.state(m.energies());
        assert!((n_left(&state) - 4.0).abs() < 1e-10);
        for b in [0.0, 0.5] {
            let d = rhs_fermi(&state, &m, &bath.table, CouplingSpec::new(b).unwrap(), 0.0).unwrap();
            let worst = d.levels.iter().map(Herm2::max_abs).fold(0.0, f64::max);
            assert!(worst < 1e-12, "b = {b}: {worst}");
        }
    }
}
