//! Time stepping shared by all master equations, and a dense
//! matrix-exponential propagator for linear systems.
//!
//! Classical RK4 at fixed step, adaptive Dormand–Prince 5(4), and adaptive
//! Rosenbrock 2(3) for stiff ladders where the bath rates exceed the slow
//! tunneling frequencies by many orders. Linear systems can also be sampled
//! exactly with `e^{LΔt}`, or with the exponential midpoint rule when the
//! generator drifts slowly in time.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A first-order real ODE system `dy/dt = f(t, y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);

    /// True when `f(t, y) = M y` for a fixed matrix `M`. Enables Jacobian
    /// reuse in the implicit stepper.
    fn is_linear_autonomous(&self) -> bool {
        false
    }

    /// True when `f(t, y) = M(t) y`.
    fn is_linear(&self) -> bool {
        self.is_linear_autonomous()
    }

    /// Writes `∂f/∂y` at `(t, y)` into `jac` and returns true, or returns
    /// false to request a finite-difference Jacobian.
    fn jacobian(&self, _t: f64, _y: &[f64], _jac: &mut DMatrix<f64>) -> bool {
        false
    }

    /// Weights `w` with `w · f(t, y) = 0` for every `y`. The matrix
    /// exponential methods keep `w · y` fixed to round-off when given one.
    fn conserved_weights(&self) -> Option<Vec<f64>> {
        None
    }
}

impl<S: OdeSystem + ?Sized> OdeSystem for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        (**self).rhs(t, y, dy)
    }
    fn is_linear_autonomous(&self) -> bool {
        (**self).is_linear_autonomous()
    }
    fn is_linear(&self) -> bool {
        (**self).is_linear()
    }
    fn jacobian(&self, t: f64, y: &[f64], jac: &mut DMatrix<f64>) -> bool {
        (**self).jacobian(t, y, jac)
    }
    fn conserved_weights(&self) -> Option<Vec<f64>> {
        (**self).conserved_weights()
    }
}

/// Closure-backed system.
pub struct FnSystem<F> {
    dim: usize,
    f: F,
    linear_autonomous: bool,
}

impl<F: Fn(f64, &[f64], &mut [f64])> FnSystem<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnSystem { dim, f, linear_autonomous: false }
    }

    pub fn linear_autonomous(mut self) -> Self {
        self.linear_autonomous = true;
        self
    }
}

impl<F: Fn(f64, &[f64], &mut [f64])> OdeSystem for FnSystem<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        (self.f)(t, y, dy)
    }
    fn is_linear_autonomous(&self) -> bool {
        self.linear_autonomous
    }
}

/// What a flat state vector encodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// `n` real numbers without further structure.
    Plain(usize),
    /// Per level a Hermitian 2×2 block, 4 reals each.
    Ladder(usize),
    /// Two-particle Bloch field in the σ₂/σ₃ sector, `(2n)²` reals.
    PairReduced(usize),
    /// Full two-particle Bloch field, `(4n)²` reals.
    PairFull(usize),
}

impl Layout {
    pub fn dim(&self) -> usize {
        match *self {
            Layout::Plain(n) => n,
            Layout::Ladder(n) => 4 * n,
            Layout::PairReduced(n) => 4 * n * n,
            Layout::PairFull(n) => 16 * n * n,
        }
    }
}

/// Contiguous real state with its layout.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatState {
    layout: Layout,
    data: Vec<f64>,
}

impl FlatState {
    pub fn new(layout: Layout, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.dim() {
            return Err(Error::DimensionMismatch { expected: layout.dim(), found: data.len() });
        }
        Ok(FlatState { layout, data })
    }

    pub fn zeros(layout: Layout) -> Self {
        FlatState { layout, data: vec![0.0; layout.dim()] }
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Checks that the state has the expected layout.
    pub fn expect(&self, layout: Layout) -> Result<()> {
        if self.layout != layout {
            return Err(Error::LayoutMismatch { expected: format!("{layout:?}"), found: format!("{:?}", self.layout) });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    Rk4 { dt: f64 },
    DormandPrince { rel_tol: f64, abs_tol: f64 },
    Rosenbrock { rel_tol: f64, abs_tol: f64 },
    /// Exact sampling of a linear autonomous system with `e^{LΔt}`.
    Exponential,
    /// `y ← e^{L(t + h/2) h} y` at fixed step, for linear systems.
    ExponentialMidpoint { dt: f64 },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Rk4 { .. } => "rk4",
            Method::DormandPrince { .. } => "dopri5",
            Method::Rosenbrock { .. } => "rosenbrock23",
            Method::Exponential => "expm",
            Method::ExponentialMidpoint { .. } => "expm_midpoint",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepperConfig {
    pub method: Method,
    pub t_max: f64,
    /// Time between recorded samples. The final time is always recorded.
    pub sample_interval: f64,
    pub max_steps: usize,
    /// Smallest permitted adaptive step, as a fraction of `t_max`.
    pub min_step_fraction: f64,
}

impl StepperConfig {
    pub fn new(method: Method, t_max: f64, samples: usize) -> Self {
        StepperConfig {
            method,
            t_max,
            sample_interval: t_max / samples.max(1) as f64,
            max_steps: 50_000_000,
            min_step_fraction: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_max.is_finite() && self.t_max > 0.0) {
            return Err(Error::invalid("t_max", format!("must be positive, got {}", self.t_max)));
        }
        if !(self.sample_interval.is_finite() && self.sample_interval > 0.0) {
            return Err(Error::invalid("sample_interval", "must be positive"));
        }
        match self.method {
            Method::Rk4 { dt } | Method::ExponentialMidpoint { dt } => {
                if !(dt.is_finite() && dt > 0.0) {
                    return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
                }
            }
            Method::DormandPrince { rel_tol, abs_tol } | Method::Rosenbrock { rel_tol, abs_tol } => {
                if !(rel_tol > 0.0 && abs_tol > 0.0) {
                    return Err(Error::invalid("rel_tol", "tolerances must be positive"));
                }
            }
            Method::Exponential => {}
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    pub factorizations: usize,
}

/// Sampled solution.
#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub stats: Stats,
}

impl Solution {
    pub fn last(&self) -> &[f64] {
        self.y.last().expect("solution has at least the initial sample")
    }
}

/// Integrates `sys` from `t = 0` with initial value `y0`.
pub fn integrate<S: OdeSystem>(sys: &S, y0: &[f64], cfg: &StepperConfig) -> Result<Solution> {
    cfg.validate()?;
    if y0.len() != sys.dim() {
        return Err(Error::DimensionMismatch { expected: sys.dim(), found: y0.len() });
    }
    let mut out = Solution { t: vec![0.0], y: vec![y0.to_vec()], stats: Stats::default() };
    match cfg.method {
        Method::Rk4 { dt } => rk4_run(sys, y0, cfg, dt, &mut out)?,
        Method::DormandPrince { rel_tol, abs_tol } => {
            let mut stepper = Dopri::new(sys.dim());
            adaptive_run(sys, y0, cfg, rel_tol, abs_tol, &mut stepper, &mut out)?
        }
        Method::Rosenbrock { rel_tol, abs_tol } => {
            let mut stepper = Rosenbrock::new(sys);
            adaptive_run(sys, y0, cfg, rel_tol, abs_tol, &mut stepper, &mut out)?
        }
        Method::Exponential => exponential_run(sys, y0, cfg, &mut out)?,
        Method::ExponentialMidpoint { dt } => midpoint_run(sys, y0, cfg, dt, &mut out)?,
    }
    Ok(out)
}

fn generator_at<S: OdeSystem>(sys: &S, t: f64, y: &[f64], l: &mut DMatrix<f64>, col: &mut [f64], stats: &mut Stats) {
    if sys.jacobian(t, y, l) {
        return;
    }
    let n = sys.dim();
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        sys.rhs(t, &e, col);
        e[j] = 0.0;
        l.set_column(j, &DVector::from_column_slice(col));
    }
    stats.rhs_evals += n;
}

fn midpoint_run<S: OdeSystem>(sys: &S, y0: &[f64], cfg: &StepperConfig, dt: f64, out: &mut Solution) -> Result<()> {
    if !sys.is_linear() {
        return Err(Error::NonLinearRhs { defect: f64::NAN });
    }
    let defect = linearity_defect(sys, 0.0);
    if defect > 1e-10 {
        return Err(Error::NonLinearRhs { defect });
    }
    let n = sys.dim();
    let mut l = DMatrix::zeros(n, n);
    let mut col = vec![0.0; n];
    let weights = sys.conserved_weights();
    let mut y = DVector::from_column_slice(y0);
    let mut t = 0.0;
    for target in sample_times(cfg) {
        let steps = ((target - t) / dt - 1e-9).ceil().max(1.0) as usize;
        let h = (target - t) / steps as f64;
        for s in 0..steps {
            if out.stats.accepted >= cfg.max_steps {
                return Err(Error::TooManySteps { t, max_steps: cfg.max_steps });
            }
            generator_at(sys, t + (s as f64 + 0.5) * h, y.as_slice(), &mut l, &mut col, &mut out.stats);
            let mut p = expm(&(&l * h));
            if let Some(w) = &weights {
                restore_invariant(&mut p, w);
            }
            y = p * y;
            out.stats.accepted += 1;
            out.stats.factorizations += 1;
        }
        t = target;
        check_finite(y.as_slice(), t)?;
        out.t.push(t);
        out.y.push(y.as_slice().to_vec());
    }
    Ok(())
}

fn exponential_run<S: OdeSystem>(sys: &S, y0: &[f64], cfg: &StepperConfig, out: &mut Solution) -> Result<()> {
    if !sys.is_linear_autonomous() {
        return Err(Error::NonLinearRhs { defect: f64::NAN });
    }
    let n = sys.dim();
    let mut l = DMatrix::zeros(n, n);
    if !sys.jacobian(0.0, y0, &mut l) {
        l = liouvillian_matrix(sys, 0.0)?;
    }
    out.stats.rhs_evals += n;
    let mut cache: Option<(f64, DMatrix<f64>)> = None;
    let mut y = DVector::from_column_slice(y0);
    let mut t = 0.0;
    for ts in sample_times(cfg) {
        let dt = ts - t;
        let reuse = matches!(&cache, Some((h, _)) if (h - dt).abs() <= 1e-9 * dt);
        if !reuse {
            let mut p = expm(&(&l * dt));
            if let Some(w) = sys.conserved_weights() {
                restore_invariant(&mut p, &w);
            }
            cache = Some((dt, p));
            out.stats.factorizations += 1;
        }
        y = &cache.as_ref().expect("propagator cached").1 * y;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t: ts });
        }
        out.stats.accepted += 1;
        out.t.push(ts);
        out.y.push(y.as_slice().to_vec());
        t = ts;
    }
    Ok(())
}

/// Convenience wrapper taking and returning [`FlatState`]s.
pub fn integrate_flat<S: OdeSystem>(sys: &S, initial: &FlatState, cfg: &StepperConfig) -> Result<(Vec<f64>, Vec<FlatState>)> {
    let sol = integrate(sys, initial.as_slice(), cfg)?;
    let layout = initial.layout();
    let states = sol.y.into_iter().map(|data| FlatState { layout, data }).collect();
    Ok((sol.t, states))
}

fn sample_times(cfg: &StepperConfig) -> Vec<f64> {
    let n = (cfg.t_max / cfg.sample_interval - 1e-9).ceil().max(1.0) as usize;
    let mut ts: Vec<f64> = (1..n).map(|k| k as f64 * cfg.sample_interval).collect();
    ts.push(cfg.t_max);
    ts
}

fn axpy(out: &mut [f64], y: &[f64], h: f64, terms: &[(f64, &[f64])]) {
    for i in 0..out.len() {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        out[i] = y[i] + h * acc;
    }
}

fn check_finite(y: &[f64], t: f64) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { t })
    }
}

fn rk4_run<S: OdeSystem>(sys: &S, y0: &[f64], cfg: &StepperConfig, dt: f64, out: &mut Solution) -> Result<()> {
    let n = y0.len();
    let mut y = y0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut t = 0.0;
    for target in sample_times(cfg) {
        let steps = ((target - t) / dt - 1e-9).ceil().max(1.0) as usize;
        let h = (target - t) / steps as f64;
        for s in 0..steps {
            if out.stats.accepted >= cfg.max_steps {
                return Err(Error::TooManySteps { t, max_steps: cfg.max_steps });
            }
            let t0 = t + s as f64 * h;
            sys.rhs(t0, &y, &mut k1);
            axpy(&mut tmp, &y, 0.5 * h, &[(1.0, &k1)]);
            sys.rhs(t0 + 0.5 * h, &tmp, &mut k2);
            axpy(&mut tmp, &y, 0.5 * h, &[(1.0, &k2)]);
            sys.rhs(t0 + 0.5 * h, &tmp, &mut k3);
            axpy(&mut tmp, &y, h, &[(1.0, &k3)]);
            sys.rhs(t0 + h, &tmp, &mut k4);
            for i in 0..n {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            out.stats.accepted += 1;
            out.stats.rhs_evals += 4;
        }
        t = target;
        check_finite(&y, t)?;
        out.t.push(t);
        out.y.push(y.clone());
    }
    Ok(())
}

/// One trial step of an embedded pair.
trait Embedded {
    /// Order of the error estimate, for the step-size exponent.
    fn error_order(&self) -> f64;
    /// Attempts a step of size `h` from `(t, y)` with `f0 = f(t, y)`.
    /// Writes the proposal to `y_new`, `f(t + h, y_new)` to `f_new` and the
    /// local error estimate to `err`.
    #[allow(clippy::too_many_arguments)]
    fn step<S: OdeSystem>(
        &mut self,
        sys: &S,
        t: f64,
        y: &[f64],
        f0: &[f64],
        h: f64,
        y_new: &mut [f64],
        f_new: &mut [f64],
        err: &mut [f64],
        stats: &mut Stats,
    ) -> Result<()>;
    /// Called after an accepted step.
    fn accepted(&mut self) {}
}

fn error_norm(err: &[f64], y: &[f64], y_new: &[f64], rel_tol: f64, abs_tol: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..err.len() {
        let sc = abs_tol + rel_tol * y[i].abs().max(y_new[i].abs());
        acc += (err[i] / sc).powi(2);
    }
    (acc / err.len().max(1) as f64).sqrt()
}

fn initial_step<S: OdeSystem>(sys: &S, y: &[f64], f0: &[f64], order: f64, rel_tol: f64, abs_tol: f64, t_end: f64, stats: &mut Stats) -> f64 {
    let n = y.len();
    let sc: Vec<f64> = y.iter().map(|v| abs_tol + rel_tol * v.abs()).collect();
    let rms = |v: &[f64]| (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n.max(1) as f64).sqrt();
    let d0 = rms(y);
    let d1 = rms(f0);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 * t_end } else { 0.01 * d0 / d1 };
    if !h0.is_finite() {
        h0 = 1e-6 * t_end;
    }
    h0 = h0.min(t_end);
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
    let mut f1 = vec![0.0; n];
    sys.rhs(h0, &y1, &mut f1);
    stats.rhs_evals += 1;
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if !d2.is_finite() {
        h0
    } else if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6 * t_end)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / order)
    };
    (100.0 * h0).min(h1).min(t_end)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_run<S: OdeSystem, E: Embedded>(
    sys: &S,
    y0: &[f64],
    cfg: &StepperConfig,
    rel_tol: f64,
    abs_tol: f64,
    stepper: &mut E,
    out: &mut Solution,
) -> Result<()> {
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut f0 = vec![0.0; n];
    sys.rhs(0.0, &y, &mut f0);
    out.stats.rhs_evals += 1;
    let (mut y_new, mut f_new, mut err) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let order = stepper.error_order();
    let mut h = initial_step(sys, &y, &f0, order, rel_tol, abs_tol, cfg.t_max, &mut out.stats);
    let h_min = cfg.min_step_fraction * cfg.t_max;
    let mut t = 0.0;
    for target in sample_times(cfg) {
        while t < target {
            if out.stats.accepted + out.stats.rejected >= cfg.max_steps {
                return Err(Error::TooManySteps { t, max_steps: cfg.max_steps });
            }
            let remaining = target - t;
            let last = h >= remaining * (1.0 - 1e-12);
            let h_try = if last { remaining } else { h };
            stepper.step(sys, t, &y, &f0, h_try, &mut y_new, &mut f_new, &mut err, &mut out.stats)?;
            let e = error_norm(&err, &y, &y_new, rel_tol, abs_tol);
            let e_ok = e.is_finite();
            let factor = if !e_ok {
                0.1
            } else if e == 0.0 {
                5.0
            } else {
                (0.9 * e.powf(-1.0 / order)).clamp(0.2, 5.0)
            };
            if e_ok && e <= 1.0 {
                t = if last { target } else { t + h_try };
                std::mem::swap(&mut y, &mut y_new);
                std::mem::swap(&mut f0, &mut f_new);
                stepper.accepted();
                out.stats.accepted += 1;
                // A truncated final step says nothing about the natural size.
                if !last || h_try >= h {
                    h = h_try * factor;
                }
            } else {
                out.stats.rejected += 1;
                h = h_try * factor.min(0.9);
                if !(h >= h_min) {
                    return Err(Error::StepUnderflow { t, dt: h });
                }
            }
        }
        check_finite(&y, t)?;
        out.t.push(t);
        out.y.push(y.clone());
    }
    Ok(())
}

struct Dopri {
    k: [Vec<f64>; 6],
    tmp: Vec<f64>,
}

impl Dopri {
    const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    const B: [f64; 6] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0];
    // Difference between the fifth- and fourth-order weights; last entry multiplies f(t + h, y_new).
    const E: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];

    fn new(n: usize) -> Self {
        Dopri { k: std::array::from_fn(|_| vec![0.0; n]), tmp: vec![0.0; n] }
    }
}

impl Embedded for Dopri {
    fn error_order(&self) -> f64 {
        5.0
    }

    fn step<S: OdeSystem>(
        &mut self,
        sys: &S,
        t: f64,
        y: &[f64],
        f0: &[f64],
        h: f64,
        y_new: &mut [f64],
        f_new: &mut [f64],
        err: &mut [f64],
        stats: &mut Stats,
    ) -> Result<()> {
        let [k1, k2, k3, k4, k5, k6] = &mut self.k;
        let tmp = &mut self.tmp;
        k1.copy_from_slice(f0);
        axpy(tmp, y, h, &[(1.0 / 5.0, k1)]);
        sys.rhs(t + Self::C[0] * h, tmp, k2);
        axpy(tmp, y, h, &[(3.0 / 40.0, k1), (9.0 / 40.0, k2)]);
        sys.rhs(t + Self::C[1] * h, tmp, k3);
        axpy(tmp, y, h, &[(44.0 / 45.0, k1), (-56.0 / 15.0, k2), (32.0 / 9.0, k3)]);
        sys.rhs(t + Self::C[2] * h, tmp, k4);
        axpy(
            tmp,
            y,
            h,
            &[(19372.0 / 6561.0, k1), (-25360.0 / 2187.0, k2), (64448.0 / 6561.0, k3), (-212.0 / 729.0, k4)],
        );
        sys.rhs(t + Self::C[3] * h, tmp, k5);
        axpy(
            tmp,
            y,
            h,
            &[
                (9017.0 / 3168.0, k1),
                (-355.0 / 33.0, k2),
                (46732.0 / 5247.0, k3),
                (49.0 / 176.0, k4),
                (-5103.0 / 18656.0, k5),
            ],
        );
        sys.rhs(t + Self::C[4] * h, tmp, k6);
        let b = Self::B;
        axpy(y_new, y, h, &[(b[0], k1), (b[2], k3), (b[3], k4), (b[4], k5), (b[5], k6)]);
        sys.rhs(t + Self::C[5] * h, y_new, f_new);
        stats.rhs_evals += 6;
        let e = Self::E;
        for i in 0..y.len() {
            err[i] = h
                * (e[0] * k1[i] + e[2] * k3[i] + e[3] * k4[i] + e[4] * k5[i] + e[5] * k6[i] + e[6] * f_new[i]);
        }
        Ok(())
    }
}

/// Linearly implicit L-stable 2(3) pair with a finite-difference Jacobian.
struct Rosenbrock {
    jac: DMatrix<f64>,
    jac_fresh: bool,
    constant_jac: bool,
    lu: Option<(f64, nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>)>,
    dfdt: Vec<f64>,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    f1: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rosenbrock {
    const D: f64 = 0.292_893_218_813_452_5; // 1 / (2 + √2)
    const E32: f64 = 7.414_213_562_373_095; // 6 + √2

    fn new<S: OdeSystem>(sys: &S) -> Self {
        let n = sys.dim();
        Rosenbrock {
            jac: DMatrix::zeros(n, n),
            jac_fresh: false,
            constant_jac: sys.is_linear_autonomous(),
            lu: None,
            dfdt: vec![0.0; n],
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            f1: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    fn refresh_jacobian<S: OdeSystem>(&mut self, sys: &S, t: f64, y: &[f64], f0: &[f64], h: f64, stats: &mut Stats) {
        let n = y.len();
        if self.constant_jac {
            // f = M y, so columns are images of unit vectors.
            let mut e = vec![0.0; n];
            for j in 0..n {
                e[j] = 1.0;
                sys.rhs(t, &e, &mut self.tmp);
                e[j] = 0.0;
                self.jac.set_column(j, &DVector::from_column_slice(&self.tmp));
            }
            self.dfdt.iter_mut().for_each(|v| *v = 0.0);
            stats.rhs_evals += n;
        } else {
            let sqrt_eps = f64::EPSILON.sqrt();
            if !sys.jacobian(t, y, &mut self.jac) {
                let mut yp = y.to_vec();
                for j in 0..n {
                    let dy = sqrt_eps * y[j].abs().max(1e-8);
                    yp[j] = y[j] + dy;
                    sys.rhs(t, &yp, &mut self.tmp);
                    yp[j] = y[j];
                    for i in 0..n {
                        self.jac[(i, j)] = (self.tmp[i] - f0[i]) / dy;
                    }
                }
                stats.rhs_evals += n;
            }
            let dt = sqrt_eps * t.abs().max(h.abs());
            sys.rhs(t + dt, y, &mut self.tmp);
            for i in 0..n {
                self.dfdt[i] = (self.tmp[i] - f0[i]) / dt;
            }
            stats.rhs_evals += 1;
        }
        self.jac_fresh = true;
        self.lu = None;
    }

    fn solve(&self, rhs: &mut [f64]) {
        let (_, lu) = self.lu.as_ref().expect("factorised before solve");
        let mut b = DVector::from_column_slice(rhs);
        lu.solve_mut(&mut b);
        rhs.copy_from_slice(b.as_slice());
    }
}

impl Embedded for Rosenbrock {
    fn error_order(&self) -> f64 {
        3.0
    }

    fn step<S: OdeSystem>(
        &mut self,
        sys: &S,
        t: f64,
        y: &[f64],
        f0: &[f64],
        h: f64,
        y_new: &mut [f64],
        f_new: &mut [f64],
        err: &mut [f64],
        stats: &mut Stats,
    ) -> Result<()> {
        let n = y.len();
        if !self.jac_fresh {
            self.refresh_jacobian(sys, t, y, f0, h, stats);
        }
        if self.lu.as_ref().is_none_or(|(hh, _)| *hh != h) {
            let w = DMatrix::identity(n, n) - &self.jac * (h * Self::D);
            let lu = w.lu();
            if !lu.is_invertible() {
                return Err(Error::StepUnderflow { t, dt: h });
            }
            self.lu = Some((h, lu));
            stats.factorizations += 1;
        }
        let hd = h * Self::D;
        for i in 0..n {
            self.k1[i] = f0[i] + hd * self.dfdt[i];
        }
        let mut k1 = std::mem::take(&mut self.k1);
        self.solve(&mut k1);
        axpy(&mut self.tmp, y, 0.5 * h, &[(1.0, &k1)]);
        let mut f1 = std::mem::take(&mut self.f1);
        sys.rhs(t + 0.5 * h, &self.tmp, &mut f1);
        let mut k2 = std::mem::take(&mut self.k2);
        for i in 0..n {
            k2[i] = f1[i] - k1[i];
        }
        self.solve(&mut k2);
        for i in 0..n {
            k2[i] += k1[i];
            y_new[i] = y[i] + h * k2[i];
        }
        sys.rhs(t + h, y_new, f_new);
        let mut k3 = std::mem::take(&mut self.k3);
        for i in 0..n {
            k3[i] = f_new[i] - Self::E32 * (k2[i] - f1[i]) - 2.0 * (k1[i] - f0[i]) + hd * self.dfdt[i];
        }
        self.solve(&mut k3);
        for i in 0..n {
            err[i] = h / 6.0 * (k1[i] - 2.0 * k2[i] + k3[i]);
        }
        stats.rhs_evals += 2;
        self.k1 = k1;
        self.k2 = k2;
        self.k3 = k3;
        self.f1 = f1;
        Ok(())
    }

    fn accepted(&mut self) {
        if !self.constant_jac {
            self.jac_fresh = false;
        }
    }
}

/// Dense generator of a linear system at time `t`, column by column.
///
/// Fails with [`Error::NonLinearRhs`] if `f(αx + βy) ≠ αf(x) + βf(y)` on a
/// deterministic pseudo-random probe.
pub fn liouvillian_matrix<S: OdeSystem>(sys: &S, t: f64) -> Result<DMatrix<f64>> {
    let n = sys.dim();
    let mut m = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        sys.rhs(t, &e, &mut col);
        e[j] = 0.0;
        m.set_column(j, &DVector::from_column_slice(&col));
    }
    let defect = linearity_defect(sys, t);
    if defect > 1e-10 {
        return Err(Error::NonLinearRhs { defect });
    }
    Ok(m)
}

/// Relative defect of the linearity probe.
pub fn linearity_defect<S: OdeSystem>(sys: &S, t: f64) -> f64 {
    let n = sys.dim();
    let mut seed = 0x9e37_79b9_7f4a_7c15u64;
    let mut next = || {
        seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((seed >> 11) as f64 / (1u64 << 53) as f64) - 0.5
    };
    let x: Vec<f64> = (0..n).map(|_| next()).collect();
    let y: Vec<f64> = (0..n).map(|_| next()).collect();
    let (alpha, beta) = (1.7, -0.6);
    let z: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + beta * b).collect();
    let (mut fx, mut fy, mut fz) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    sys.rhs(t, &x, &mut fx);
    sys.rhs(t, &y, &mut fy);
    sys.rhs(t, &z, &mut fz);
    let mut scale = 0.0f64;
    let mut worst = 0.0f64;
    for i in 0..n {
        let lin = alpha * fx[i] + beta * fy[i];
        scale = scale.max(lin.abs()).max(fz[i].abs());
        worst = worst.max((fz[i] - lin).abs());
    }
    if scale == 0.0 { worst } else { worst / scale }
}

/// Matrix exponential by scaling and squaring with a degree-13 Padé approximant.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA13: f64 = 5.371920351148152;
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    let norm1 = (0..n).map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let s = if norm1 > THETA13 { (norm1 / THETA13).log2().ceil() as i32 } else { 0 };
    let a = a / 2f64.powi(s);
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * B[13] + &a4 * B[11] + &a2 * B[9]) + &a6 * B[7] + &a4 * B[5] + &a2 * B[3] + &id * B[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * B[12] + &a4 * B[10] + &a2 * B[8]) + &a6 * B[6] + &a4 * B[4] + &a2 * B[2] + &id * B[0];
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).expect("Padé denominator is invertible after scaling");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Smallest change to the propagator `P` that gives `wᵀP = wᵀ` exactly.
/// Scaling and squaring loses this to round-off on stiff generators.
fn restore_invariant(p: &mut DMatrix<f64>, w: &[f64]) {
    let w = DVector::from_column_slice(w);
    let defect = w.transpose() - w.transpose() * &*p;
    *p += &w * defect / w.norm_squared();
}

/// Propagates a linear autonomous system with `exp(M Δt)` at the sample grid.
pub fn propagate_expm(m: &DMatrix<f64>, y0: &[f64], times: &[f64]) -> Vec<Vec<f64>> {
    let x0 = DVector::from_column_slice(y0);
    times.iter().map(|&t| (expm(&(m * t)) * &x0).as_slice().to_vec()).collect()
}
