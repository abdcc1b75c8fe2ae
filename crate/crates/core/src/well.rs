//! Double square well: single-well ladder, tunneling splittings, dipole
//! elements and the time-dependent bias.
//!
//! Units: ħ = 1 and the ground state of one isolated well of width `W`
//! (infinite walls) has energy 1, so `ħ²/2m = (W/π)²`. The well occupies
//! `[-h - W, h + W]` with infinite outer walls and a central barrier of
//! height `U₀` on `[-h, h]`.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Geometry of the symmetric double well.
#[derive(Clone, Debug, PartialEq)]
pub struct WellSpec {
    /// Number of vertical levels (doublets) kept in the model.
    pub n_levels: usize,
    /// Width of one side well, in units of `a`.
    pub well_width: f64,
    /// Half width of the central barrier, in units of `a`.
    pub barrier_half_width: f64,
    /// Barrier height `U₀` in units of the single-well ground energy.
    pub barrier_height: f64,
    pub bias: Option<BiasSchedule>,
}

impl Default for WellSpec {
    /// Walls at ±8a, a 2a barrier and twenty bound doublets.
    fn default() -> Self {
        WellSpec { n_levels: 20, well_width: 7.0, barrier_half_width: 1.0, barrier_height: 420.0, bias: None }
    }
}

/// Symmetric and antisymmetric energies of one doublet.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Doublet {
    pub symmetric: f64,
    pub antisymmetric: f64,
}

impl Doublet {
    pub fn center(&self) -> f64 {
        0.5 * (self.symmetric + self.antisymmetric)
    }

    /// Half the doublet gap.
    pub fn splitting(&self) -> f64 {
        0.5 * (self.antisymmetric - self.symmetric)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Parity {
    Even,
    Odd,
}

impl Parity {
    fn name(self) -> &'static str {
        match self {
            Parity::Even => "even",
            Parity::Odd => "odd",
        }
    }
}

impl WellSpec {
    pub fn with_levels(mut self, n_levels: usize) -> Self {
        self.n_levels = n_levels;
        self
    }

    pub fn with_barrier_height(mut self, barrier_height: f64) -> Self {
        self.barrier_height = barrier_height;
        self
    }

    pub fn with_bias(mut self, bias: BiasSchedule) -> Self {
        self.bias = Some(bias);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_levels == 0 {
            return Err(Error::invalid("n_levels", "need at least one level"));
        }
        for (name, v) in [
            ("well_width", self.well_width),
            ("barrier_half_width", self.barrier_half_width),
            ("barrier_height", self.barrier_height),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("must be positive and finite, got {v}")));
            }
        }
        if let Some(bias) = &self.bias {
            bias.validate_shape()?;
        }
        Ok(())
    }

    /// `ħ²/2m` in the chosen units.
    pub fn kinetic_scale(&self) -> f64 {
        (self.well_width / PI).powi(2)
    }

    /// Doublet centres of the infinite-well approximation: `E_i = i²`.
    pub fn single_well_levels(&self) -> Vec<f64> {
        (1..=self.n_levels).map(|i| (i * i) as f64).collect()
    }

    /// Exact doublet energies from the even/odd matching conditions.
    pub fn doublets(&self) -> Result<Vec<Doublet>> {
        self.validate()?;
        (1..=self.n_levels)
            .map(|level| {
                Ok(Doublet {
                    symmetric: self.matching_root(level, Parity::Even)?,
                    antisymmetric: self.matching_root(level, Parity::Odd)?,
                })
            })
            .collect()
    }

    /// `g(E_i)`, half the gap of each doublet.
    pub fn tunneling_splittings(&self) -> Result<Vec<f64>> {
        Ok(self.doublets()?.iter().map(Doublet::splitting).collect())
    }

    /// Number of doublets whose both members lie below the barrier.
    pub fn bound_doublet_count(&self) -> usize {
        let probe = WellSpec { n_levels: 1, ..self.clone() };
        (1..)
            .take_while(|&level| probe.matching_root(level, Parity::Even).is_ok()
                && probe.matching_root(level, Parity::Odd).is_ok())
            .count()
    }

    /// Position matrix elements between infinite-well states of width `W`,
    /// origin at the well centre.
    pub fn dipole_matrix(&self) -> DMatrix<f64> {
        let n = self.n_levels;
        DMatrix::from_fn(n, n, |r, c| dipole_element(r + 1, c + 1, self.well_width))
    }

    // Matching at x = h between sin(k(h + W − x)) in the side well and
    // cosh/sinh(κx) under the barrier:
    //   even: k cos(kW) + κ tanh(κh) sin(kW) = 0
    //   odd:  k cos(kW) tanh(κh)/κ + sin(kW) = 0
    // Each doublet has both roots in kW ∈ ((i − ½)π, iπ).
    fn matching_condition(&self, k: f64, parity: Parity) -> f64 {
        let s = self.kinetic_scale();
        let kappa = ((self.barrier_height - s * k * k).max(0.0) / s).sqrt();
        let h = self.barrier_half_width;
        let (sin, cos) = (k * self.well_width).sin_cos();
        match parity {
            Parity::Even => k * cos + kappa * (kappa * h).tanh() * sin,
            Parity::Odd => {
                let tanh_over_kappa = if kappa * h < 1e-8 { h } else { (kappa * h).tanh() / kappa };
                k * cos * tanh_over_kappa + sin
            }
        }
    }

    fn matching_root(&self, level: usize, parity: Parity) -> Result<f64> {
        let s = self.kinetic_scale();
        let w = self.well_width;
        let k_barrier = (self.barrier_height / s).sqrt();
        let mut lo = (level as f64 - 0.5) * PI / w;
        let mut hi = level as f64 * PI / w;
        if lo >= k_barrier {
            return Err(Error::UnboundLevel { level, barrier: self.barrier_height });
        }
        let clipped = hi > k_barrier;
        if clipped {
            hi = k_barrier;
        }
        let mut f_lo = self.matching_condition(lo, parity);
        let f_hi = self.matching_condition(hi, parity);
        if f_lo == 0.0 {
            return Ok(s * lo * lo);
        }
        if f_hi == 0.0 {
            return Ok(s * hi * hi);
        }
        if f_lo.signum() == f_hi.signum() {
            return Err(if clipped {
                Error::UnboundLevel { level, barrier: self.barrier_height }
            } else {
                Error::RootNotBracketed { level, parity: parity.name() }
            });
        }
        // Bisect down to adjacent doubles.
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let f_mid = self.matching_condition(mid, parity);
            if f_mid == 0.0 {
                return Ok(s * mid * mid);
            }
            if f_mid.signum() == f_lo.signum() {
                lo = mid;
                f_lo = f_mid;
            } else {
                hi = mid;
            }
        }
        let k = 0.5 * (lo + hi);
        let energy = s * k * k;
        if energy >= self.barrier_height {
            return Err(Error::UnboundLevel { level, barrier: self.barrier_height });
        }
        Ok(energy)
    }
}

/// `⟨j|x|k⟩` for the infinite well of width `width` (1-based indices).
pub fn dipole_element(j: usize, k: usize, width: f64) -> f64 {
    if j == k || (j + k) % 2 == 0 {
        return 0.0;
    }
    let (jf, kf) = (j as f64, k as f64);
    -8.0 * width * jf * kf / (PI * PI * (jf * jf - kf * kf).powi(2))
}

/// Cubic bias ramp `ε(t)` that reverses sign around `t_zero`.
///
/// `ε(t) = −ε₀ · clamp(((t − t_zero)/(t_span/2))³, −1, 1)`, so the bias
/// starts at `+ε₀`, crosses zero at `t_zero` and saturates at `−ε₀`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiasSchedule {
    pub amplitude: f64,
    pub t_zero: f64,
    pub t_span: f64,
}

/// Separation-of-scales check for a bias amplitude.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiasLimits {
    /// Required `ε₀ / max g` over the low-lying levels.
    pub dominance: f64,
    /// Allowed `ε₀ / min ΔE`.
    pub gap_fraction: f64,
    /// Number of low-lying levels the bias must dominate.
    pub low_levels: usize,
}

impl Default for BiasLimits {
    fn default() -> Self {
        BiasLimits { dominance: 10.0, gap_fraction: 0.1, low_levels: 6 }
    }
}

impl BiasSchedule {
    /// Ramp centred in `[0, t_span]`.
    pub fn centered(amplitude: f64, t_span: f64) -> Self {
        BiasSchedule { amplitude, t_zero: 0.5 * t_span, t_span }
    }

    pub fn at(&self, t: f64) -> f64 {
        let s = (t - self.t_zero) / (0.5 * self.t_span);
        -self.amplitude * (s * s * s).clamp(-1.0, 1.0)
    }

    /// End of the ramp, where `ε = −ε₀` is first reached.
    pub fn ramp_end(&self) -> f64 {
        self.t_zero + 0.5 * self.t_span
    }

    fn validate_shape(&self) -> Result<()> {
        if !(self.amplitude.is_finite() && self.amplitude > 0.0) {
            return Err(Error::invalid("bias_amplitude", format!("must be positive, got {}", self.amplitude)));
        }
        if !(self.t_span.is_finite() && self.t_span > 0.0) {
            return Err(Error::invalid("bias_span", format!("must be positive, got {}", self.t_span)));
        }
        if self.t_zero < 0.5 * self.t_span {
            return Err(Error::invalid("bias_t_zero", "ramp must start at or after t = 0 so that ε(0) = +ε₀"));
        }
        Ok(())
    }

    /// Checks `ε₀ ≫ g` on the low-lying levels and `ε₀ ≪ ΔE`.
    pub fn check_scales(&self, model: &WellModel, limits: &BiasLimits) -> Result<()> {
        let low = limits.low_levels.clamp(1, model.n_levels());
        let g_max = model.splittings()[..low].iter().cloned().fold(0.0, f64::max);
        if self.amplitude < limits.dominance * g_max {
            return Err(Error::invalid(
                "bias_amplitude",
                format!("{:e} is below {} × max g = {:e}", self.amplitude, limits.dominance, g_max),
            ));
        }
        if let Some(gap) = model.min_spacing() {
            if self.amplitude > limits.gap_fraction * gap {
                return Err(Error::invalid(
                    "bias_amplitude",
                    format!("{:e} exceeds {} × min ΔE = {:e}", self.amplitude, limits.gap_fraction, gap),
                ));
            }
        }
        Ok(())
    }
}

/// Precomputed spectrum of a validated [`WellSpec`]. Immutable.
#[derive(Clone, Debug)]
pub struct WellModel {
    spec: WellSpec,
    energies: Vec<f64>,
    splittings: Vec<f64>,
    dipole: DMatrix<f64>,
}

impl WellModel {
    pub fn new(spec: WellSpec) -> Result<Self> {
        let splittings = spec.tunneling_splittings()?;
        let energies = spec.single_well_levels();
        let dipole = spec.dipole_matrix();
        Ok(WellModel { spec, energies, splittings, dipole })
    }

    /// Builds a model from explicit tables, bypassing the well geometry.
    pub fn from_tables(energies: Vec<f64>, splittings: Vec<f64>, dipole: DMatrix<f64>) -> Result<Self> {
        let n = energies.len();
        if n == 0 {
            return Err(Error::invalid("n_levels", "need at least one level"));
        }
        if splittings.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: splittings.len() });
        }
        if dipole.nrows() != n || dipole.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: dipole.nrows() });
        }
        let spec = WellSpec { n_levels: n, ..WellSpec::default() };
        Ok(WellModel { spec, energies, splittings, dipole })
    }

    pub fn spec(&self) -> &WellSpec {
        &self.spec
    }

    pub fn n_levels(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn splittings(&self) -> &[f64] {
        &self.splittings
    }

    pub fn dipole(&self) -> &DMatrix<f64> {
        &self.dipole
    }

    pub fn bias(&self) -> Option<&BiasSchedule> {
        self.spec.bias.as_ref()
    }

    /// Replaces the bias schedule, keeping the spectrum.
    pub fn with_bias(mut self, bias: Option<BiasSchedule>) -> Result<Self> {
        if let Some(b) = &bias {
            b.validate_shape()?;
        }
        self.spec.bias = bias;
        Ok(self)
    }

    /// `ε(t)`, zero without a schedule.
    pub fn epsilon(&self, t: f64) -> f64 {
        self.spec.bias.as_ref().map_or(0.0, |b| b.at(t))
    }

    /// Smallest spacing between neighbouring doublet centres.
    pub fn min_spacing(&self) -> Option<f64> {
        self.energies.windows(2).map(|w| w[1] - w[0]).reduce(f64::min)
    }
}
