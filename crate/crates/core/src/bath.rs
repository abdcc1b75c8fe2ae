//! Thermal bath: transition rates between doublets, thermal averages and
//! the calibration of the coupling `q` to a target rate ratio `Q`.

use std::f64::consts::PI;
use std::io::{self, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::output::sig17;
use crate::well::WellModel;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BathSpec {
    pub temperature: f64,
    /// Coupling strength `q`.
    pub coupling: f64,
    /// Mode speed `v`, sets `k_n = |ΔE|/v`.
    pub mode_speed: f64,
}

impl BathSpec {
    pub fn new(temperature: f64, coupling: f64) -> Self {
        BathSpec { temperature, coupling, mode_speed: 1.0 }
    }

    pub fn with_coupling(self, coupling: f64) -> Self {
        BathSpec { coupling, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::invalid("temperature", format!("must be positive, got {}", self.temperature)));
        }
        if !(self.coupling.is_finite() && self.coupling >= 0.0) {
            return Err(Error::invalid("coupling_q", format!("must be non-negative, got {}", self.coupling)));
        }
        if !(self.mode_speed.is_finite() && self.mode_speed > 0.0) {
            return Err(Error::invalid("mode_speed", format!("must be positive, got {}", self.mode_speed)));
        }
        Ok(())
    }
}

/// Rate for a transition from energy `e_from` to `e_to` with dipole element `x`.
///
/// Upward transitions carry the Bose factor `n_B`, downward ones `n_B + 1`.
/// Degenerate pairs are assigned zero.
pub fn rate(e_from: f64, e_to: f64, x: f64, bath: &BathSpec) -> f64 {
    let delta = e_to - e_from;
    if delta == 0.0 || x == 0.0 || bath.coupling == 0.0 {
        return 0.0;
    }
    let k = delta.abs() / bath.mode_speed;
    let c = bath.coupling * k * x;
    let occupation = if delta > 0.0 {
        1.0 / (delta / bath.temperature).exp_m1()
    } else {
        -1.0 / (delta / bath.temperature).exp_m1()
    };
    2.0 * PI * c * c * occupation
}

/// Table of rates `Γ[i, j]` for level `i → j`, with row sums as the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct RateTable {
    energies: Vec<f64>,
    gamma: DMatrix<f64>,
    loss: Vec<f64>,
}

impl RateTable {
    pub fn build(bath: &BathSpec, model: &WellModel) -> Result<Self> {
        bath.validate()?;
        let e = model.energies();
        let x = model.dipole();
        let n = e.len();
        let gamma = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { rate(e[i], e[j], x[(i, j)], bath) });
        Self::from_matrix(e.to_vec(), gamma)
    }

    /// Wraps an explicit rate matrix. Negative or non-finite entries and a
    /// non-zero diagonal are rejected.
    pub fn from_matrix(energies: Vec<f64>, gamma: DMatrix<f64>) -> Result<Self> {
        let n = energies.len();
        if gamma.nrows() != n || gamma.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: gamma.nrows() });
        }
        for i in 0..n {
            if gamma[(i, i)] != 0.0 {
                return Err(Error::invalid("gamma", format!("diagonal entry {i} must be zero")));
            }
        }
        if gamma.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::invalid("gamma", "entries must be finite and non-negative"));
        }
        let loss = (0..n).map(|i| gamma.row(i).sum()).collect();
        Ok(RateTable { energies, gamma, loss })
    }

    pub fn n_levels(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    /// `Γ(E_i → E_j)`.
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.gamma[(i, j)]
    }

    /// `Σ_j Γ(E_i → E_j)`.
    pub fn loss(&self) -> &[f64] {
        &self.loss
    }

    /// Table with every rate multiplied by `factor` (e.g. `(q'/q)²`).
    pub fn scaled(&self, factor: f64) -> Self {
        let gamma = &self.gamma * factor;
        let loss = self.loss.iter().map(|l| l * factor).collect();
        RateTable { energies: self.energies.clone(), gamma, loss }
    }

    /// Largest relative violation of `Γ(j→i) = e^{(E_j − E_i)/T} Γ(i→j)`.
    pub fn detailed_balance_defect(&self, temperature: f64) -> f64 {
        let n = self.n_levels();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                let forward = self.gamma[(i, j)];
                let back = self.gamma[(j, i)];
                let expected = ((self.energies[j] - self.energies[i]) / temperature).exp() * forward;
                let scale = back.abs().max(expected.abs());
                if scale > 0.0 {
                    worst = worst.max((back - expected).abs() / scale);
                }
            }
        }
        worst
    }

    /// Classical rate equations `dn_i/dt = Σ_j (n_j Γ_ji − n_i Γ_ij)`.
    pub fn classical_rhs(&self, n: &[f64]) -> Vec<f64> {
        (0..self.n_levels())
            .map(|i| {
                let gain: f64 = (0..self.n_levels()).map(|j| n[j] * self.gamma[(j, i)]).sum();
                gain - n[i] * self.loss[i]
            })
            .collect()
    }

    /// Writes `level,energy,gamma_to_1,…` with one row per source level.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.n_levels();
        write!(w, "level,energy")?;
        for j in 1..=n {
            write!(w, ",gamma_to_{j}")?;
        }
        writeln!(w)?;
        for i in 0..n {
            write!(w, "{},{}", i + 1, sig17(self.energies[i]))?;
            for j in 0..n {
                write!(w, ",{}", sig17(self.gamma[(i, j)]))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Normalised Boltzmann weights `p_i ∝ e^{−E_i/T}`.
pub fn boltzmann_weights(energies: &[f64], temperature: f64) -> Vec<f64> {
    let e0 = energies.iter().cloned().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = energies.iter().map(|e| (-(e - e0) / temperature).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Boltzmann-weighted `⟨Γ⟩` and `⟨g⟩`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThermalAverages {
    pub gamma: f64,
    pub g: f64,
}

impl ThermalAverages {
    pub fn ratio(&self) -> f64 {
        self.gamma / self.g
    }
}

pub fn thermal_averages(table: &RateTable, splittings: &[f64], temperature: f64) -> Result<ThermalAverages> {
    if splittings.len() != table.n_levels() {
        return Err(Error::DimensionMismatch { expected: table.n_levels(), found: splittings.len() });
    }
    let p = boltzmann_weights(table.energies(), temperature);
    let gamma = p.iter().zip(table.loss()).map(|(p, l)| p * l).sum();
    let g = p.iter().zip(splittings).map(|(p, g)| p * g).sum();
    Ok(ThermalAverages { gamma, g })
}

/// Coupling `q` that gives `⟨Γ⟩/⟨g⟩ = target` at temperature `T`.
pub fn coupling_for_ratio(target: f64, model: &WellModel, temperature: f64, mode_speed: f64) -> Result<f64> {
    if !(target.is_finite() && target >= 0.0) {
        return Err(Error::invalid("q_ratio", format!("must be non-negative, got {target}")));
    }
    if target == 0.0 {
        return Ok(0.0);
    }
    let unit = BathSpec { temperature, coupling: 1.0, mode_speed };
    let table = RateTable::build(&unit, model)?;
    let avg = thermal_averages(&table, model.splittings(), temperature)?;
    if !(avg.gamma > 0.0) {
        return Err(Error::DegenerateSpectrum);
    }
    Ok((target * avg.g / avg.gamma).sqrt())
}

/// Calibrated bath together with its rate table and thermal averages.
#[derive(Clone, Debug)]
pub struct CalibratedBath {
    pub spec: BathSpec,
    pub table: RateTable,
    pub averages: ThermalAverages,
}

impl CalibratedBath {
    /// Bath at an explicit coupling.
    pub fn with_coupling(model: &WellModel, spec: BathSpec) -> Result<Self> {
        let table = RateTable::build(&spec, model)?;
        let averages = thermal_averages(&table, model.splittings(), spec.temperature)?;
        Ok(CalibratedBath { spec, table, averages })
    }

    /// Bath whose coupling is solved from the rate ratio `Q`.
    pub fn for_ratio(model: &WellModel, temperature: f64, target: f64) -> Result<Self> {
        let q = coupling_for_ratio(target, model, temperature, 1.0)?;
        Self::with_coupling(model, BathSpec::new(temperature, q))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::well::WellSpec;

    fn model() -> WellModel {
        WellModel::new(WellSpec::default()).unwrap()
    }

    #[test]
    fn zero_coupling_gives_zero_rates() {
        let t = RateTable::build(&BathSpec::new(5.0, 0.0), &model()).unwrap();
        assert!(t.gamma().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn parity_forbidden_rates_vanish() {
        let t = RateTable::build(&BathSpec::new(5.0, 1.0), &model()).unwrap();
        assert_eq!(t.rate(0, 2), 0.0);
        assert!(t.rate(0, 1) > 0.0);
    }

    #[test]
    fn downward_rate_formula() {
        let m = model();
        let x12 = m.dipole()[(0, 1)];
        let q = 0.3;
        let t = RateTable::build(&BathSpec::new(5.0, q), &m).unwrap();
        let expected = 2.0 * PI * (q * 3.0).powi(2) * x12 * x12 / (1.0 - (-3.0f64 / 5.0).exp());
        assert!((t.rate(1, 0) - expected).abs() < 1e-14 * expected);
    }

    #[test]
    fn single_level_table_is_empty() {
        let m = WellModel::new(WellSpec::default().with_levels(1)).unwrap();
        let t = RateTable::build(&BathSpec::new(5.0, 1.0), &m).unwrap();
        assert_eq!(t.gamma()[(0, 0)], 0.0);
        assert_eq!(t.loss(), &[0.0]);
    }

    #[test]
    fn loss_is_row_sum() {
        let t = RateTable::build(&BathSpec::new(2.0, 0.7), &model()).unwrap();
        for i in 0..t.n_levels() {
            let s: f64 = (0..t.n_levels()).map(|j| t.rate(i, j)).sum();
            assert!((t.loss()[i] - s).abs() <= 1e-15 * s.max(1e-300));
        }
    }

    #[test]
    fn ratio_scaling_is_square_root() {
        let m = model();
        let q1 = coupling_for_ratio(10.0, &m, 5.0, 1.0).unwrap();
        let q2 = coupling_for_ratio(20.0, &m, 5.0, 1.0).unwrap();
        assert!((q2 / q1 - 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(coupling_for_ratio(0.0, &m, 5.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn calibration_hits_target() {
        let m = model();
        for target in [1e-3, 1.0, 1e3] {
            let bath = CalibratedBath::for_ratio(&m, 5.0, target).unwrap();
            assert!((bath.averages.ratio() / target - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_splitting_average() {
        let m = model();
        let t = RateTable::build(&BathSpec::new(5.0, 1.0), &m).unwrap();
        let g = vec![0.25; m.n_levels()];
        let avg = thermal_averages(&t, &g, 5.0).unwrap();
        assert!((avg.g - 0.25).abs() < 1e-15);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let m = WellModel::new(WellSpec::default().with_levels(3)).unwrap();
        let t = RateTable::build(&BathSpec::new(5.0, 1.0), &m).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "level,energy,gamma_to_1,gamma_to_2,gamma_to_3");
        assert_eq!(lines.len(), 4);
    }
}
