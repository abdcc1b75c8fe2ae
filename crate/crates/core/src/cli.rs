//! Scenario runner behind the `wellbath` binary.
//!
//! A [`RunConfig`] is resolved from defaults, an optional `key = value`
//! file and command-line flags, in that order of precedence. Each scenario
//! writes one or more CSV files into the output directory, each with a
//! `.meta` sidecar holding every resolved parameter.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::analysis::dominant_frequency;
use crate::bath::{BathSpec, CalibratedBath};
use crate::error::Error as ModelError;
use crate::fermi::{half_filled_left_state, solve_mu, solve_mu_with_degeneracy, FermiEnsemble, FermiRun};
use crate::integrator::{Method, StepperConfig};
use crate::linalg::C64;
use crate::output::{sidecar_path, sig17, Trajectory};
use crate::pair::{run_general, run_reduced, thermal_bell_field, BellKind, PairGeneral, PairReduced, PairRun};
use crate::single::{collision_toy, Collision, CouplingSpec, DensityLadder, SingleParticle, SingleRun, TwoLevel};
use crate::well::{BiasLimits, BiasSchedule, WellModel, WellSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    Fig1,
    Fig2,
    Fermi,
    Bias,
    PairX33,
    PairEf,
    CollisionDemo,
    Sweep,
    Rates,
}

impl Scenario {
    pub const ALL: [Scenario; 9] = [
        Scenario::Fig1,
        Scenario::Fig2,
        Scenario::Fermi,
        Scenario::Bias,
        Scenario::PairX33,
        Scenario::PairEf,
        Scenario::CollisionDemo,
        Scenario::Sweep,
        Scenario::Rates,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Fig1 => "fig1",
            Scenario::Fig2 => "fig2",
            Scenario::Fermi => "fermi",
            Scenario::Bias => "bias",
            Scenario::PairX33 => "pair_x33",
            Scenario::PairEf => "pair_ef",
            Scenario::CollisionDemo => "collision_demo",
            Scenario::Sweep => "sweep",
            Scenario::Rates => "rates",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Scenario::ALL.into_iter().find(|k| k.name() == s)
    }

    fn is_pair(&self) -> bool {
        matches!(self, Scenario::PairX33 | Scenario::PairEf)
    }
}

/// Where a resolved value came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Default,
    File,
    Flag,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::File => "file",
            Source::Flag => "flag",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodChoice {
    /// Per scenario: `rosenbrock` for single-particle runs, `expm` for the
    /// pair, `expm_midpoint` under a bias, `split` or `rosenbrock` for the
    /// blocked ensemble.
    Auto,
    Rosenbrock,
    Dopri,
    Rk4,
    Expm,
    ExpmMidpoint,
    Split,
}

impl MethodChoice {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "auto" => MethodChoice::Auto,
            "rosenbrock" | "rosenbrock23" => MethodChoice::Rosenbrock,
            "dopri" | "dopri5" => MethodChoice::Dopri,
            "rk4" => MethodChoice::Rk4,
            "expm" => MethodChoice::Expm,
            "expm_midpoint" => MethodChoice::ExpmMidpoint,
            "split" => MethodChoice::Split,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            MethodChoice::Auto => "auto",
            MethodChoice::Rosenbrock => "rosenbrock",
            MethodChoice::Dopri => "dopri",
            MethodChoice::Rk4 => "rk4",
            MethodChoice::Expm => "expm",
            MethodChoice::ExpmMidpoint => "expm_midpoint",
            MethodChoice::Split => "split",
        }
    }
}

/// Recognised configuration keys. Flags use the same names with `-`.
pub const KEYS: &[&str] = &[
    "scenario",
    "temperature",
    "q_ratio",
    "coupling_q",
    "b",
    "levels",
    "t_max",
    "dt",
    "rel_tol",
    "method",
    "samples",
    "bell",
    "bias_amplitude",
    "bias_span",
    "particles",
    "q_grid",
    "b_grid",
    "out",
];

pub const FIG1_Q_GRID: [f64; 7] = [0.001, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0];
pub const PAIR_Q_GRID: [f64; 4] = [0.0005, 0.05, 5.0, 500.0];
/// Coupling ratios of the weak, moderate and strong ensemble runs.
pub const REGIME_RATIOS: [(&str, f64); 3] = [("weak", 1e-3), ("moderate", 1.0), ("strong", 1e3)];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown key `{key}`{}", line.map(|l| format!(" on line {l}")).unwrap_or_default())]
    UnknownKey { key: String, line: Option<usize> },
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
}

impl ConfigError {
    fn invalid(key: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid { key: key.to_string(), message: message.into() }
    }

    /// The key the error is about, if any.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownKey { key, .. } | ConfigError::Invalid { key, .. } => Some(key),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl RunError {
    /// 2 for configuration problems, 3 for a collapsed adaptive step, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Model(ModelError::StepUnderflow { .. }) => 3,
            RunError::Model(ModelError::InvalidParameter { .. } | ModelError::OutOfRange { .. }) => 2,
            _ => 1,
        }
    }
}

/// Fully resolved run parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub temperature: f64,
    pub q_ratio: Option<f64>,
    pub coupling_q: Option<f64>,
    pub b: f64,
    pub levels: Option<usize>,
    pub t_max: Option<f64>,
    pub dt: Option<f64>,
    pub rel_tol: Option<f64>,
    pub method: MethodChoice,
    pub samples: usize,
    pub bell: BellKind,
    pub bias_amplitude: f64,
    pub bias_span: f64,
    pub particles: f64,
    pub q_grid: Option<Vec<f64>>,
    pub b_grid: Option<Vec<f64>>,
    pub out: PathBuf,
    provenance: BTreeMap<&'static str, Source>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: Scenario::Fig1,
            temperature: 5.0,
            q_ratio: None,
            coupling_q: None,
            b: 0.0,
            levels: None,
            t_max: None,
            dt: None,
            rel_tol: None,
            method: MethodChoice::Auto,
            samples: 2000,
            bell: BellKind::PhiPlus,
            bias_amplitude: 5e-7,
            bias_span: 1e11,
            particles: 8.0,
            q_grid: None,
            b_grid: None,
            out: PathBuf::from("out"),
            provenance: KEYS.iter().map(|k| (*k, Source::Default)).collect(),
        }
    }
}

fn canonical_key(key: &str) -> Option<&'static str> {
    let k = key.trim().trim_start_matches("--").replace('-', "_");
    KEYS.iter().copied().find(|c| *c == k)
}

fn parse_f64(key: &str, v: &str) -> Result<f64, ConfigError> {
    let x: f64 = v.trim().parse().map_err(|_| ConfigError::invalid(key, format!("`{v}` is not a number")))?;
    if !x.is_finite() {
        return Err(ConfigError::invalid(key, "must be finite"));
    }
    Ok(x)
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    let items: Vec<f64> = v
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| parse_f64(key, s))
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(ConfigError::invalid(key, "empty list"));
    }
    Ok(items)
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn parse_config_text(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((k, v)) = content.split_once('=') else {
            return Err(ConfigError::Parse { line, message: format!("expected `key = value`, found `{content}`") });
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Parse { line, message: "missing key".into() });
        }
        if v.is_empty() {
            return Err(ConfigError::Parse { line, message: format!("missing value for `{k}`") });
        }
        out.push((line, k.to_string(), v.to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn source(&self, key: &str) -> Source {
        canonical_key(key).and_then(|k| self.provenance.get(k).copied()).unwrap_or(Source::Default)
    }

    pub fn provenance(&self) -> impl Iterator<Item = (&'static str, Source)> + '_ {
        self.provenance.iter().map(|(k, s)| (*k, *s))
    }

    /// Applies one raw entry. The key must already be canonical.
    fn set(&mut self, key: &'static str, value: &str, source: Source) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "scenario" => {
                self.scenario = Scenario::parse(v).ok_or_else(|| {
                    let names: Vec<&str> = Scenario::ALL.iter().map(|s| s.name()).collect();
                    ConfigError::invalid(key, format!("`{v}` is not one of {}", names.join(", ")))
                })?
            }
            "temperature" => self.temperature = parse_f64(key, v)?,
            "q_ratio" => self.q_ratio = Some(parse_f64(key, v)?),
            "coupling_q" => self.coupling_q = Some(parse_f64(key, v)?),
            "b" => self.b = parse_f64(key, v)?,
            "levels" => {
                self.levels = Some(v.parse().map_err(|_| ConfigError::invalid(key, format!("`{v}` is not a level count")))?)
            }
            "t_max" => self.t_max = Some(parse_f64(key, v)?),
            "dt" => self.dt = Some(parse_f64(key, v)?),
            "rel_tol" => self.rel_tol = Some(parse_f64(key, v)?),
            "method" => {
                self.method = MethodChoice::parse(v).ok_or_else(|| ConfigError::invalid(key, format!("unknown method `{v}`")))?
            }
            "samples" => {
                self.samples = v.parse().map_err(|_| ConfigError::invalid(key, format!("`{v}` is not a sample count")))?
            }
            "bell" => self.bell = BellKind::parse(v).ok_or_else(|| ConfigError::invalid(key, format!("unknown Bell state `{v}`")))?,
            "bias_amplitude" => self.bias_amplitude = parse_f64(key, v)?,
            "bias_span" => self.bias_span = parse_f64(key, v)?,
            "particles" => self.particles = parse_f64(key, v)?,
            "q_grid" => self.q_grid = Some(parse_list(key, v)?),
            "b_grid" => self.b_grid = Some(parse_list(key, v)?),
            "out" => self.out = PathBuf::from(v),
            _ => unreachable!("key list and setter disagree on `{key}`"),
        }
        self.provenance.insert(key, source);
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::invalid(key, format!("must be positive, got {x}")))
            }
        };
        positive("temperature", self.temperature)?;
        if self.b.abs() > 1.0 {
            return Err(ConfigError::invalid("b", format!("|b| must not exceed 1, got {}", self.b)));
        }
        if self.q_ratio.is_some() && self.coupling_q.is_some() {
            return Err(ConfigError::invalid("coupling_q", "set exactly one of q_ratio and coupling_q"));
        }
        if let Some(q) = self.q_ratio {
            positive("q_ratio", q)?;
        }
        if let Some(q) = self.coupling_q {
            if !(q >= 0.0) {
                return Err(ConfigError::invalid("coupling_q", format!("must be non-negative, got {q}")));
            }
        }
        if let Some(n) = self.levels {
            let max = WellSpec::default().n_levels;
            if n == 0 || n > max {
                return Err(ConfigError::invalid("levels", format!("must lie in 1..={max}, got {n}")));
            }
        }
        if let Some(t) = self.t_max {
            positive("t_max", t)?;
        }
        if let Some(dt) = self.dt {
            positive("dt", dt)?;
        }
        if let Some(tol) = self.rel_tol {
            if !(tol > 0.0 && tol < 1.0) {
                return Err(ConfigError::invalid("rel_tol", format!("must lie in (0, 1), got {tol}")));
            }
        }
        if self.samples < 2 {
            return Err(ConfigError::invalid("samples", "need at least 2 samples"));
        }
        positive("bias_amplitude", self.bias_amplitude)?;
        positive("bias_span", self.bias_span)?;
        positive("particles", self.particles)?;
        if let Some(grid) = &self.q_grid {
            for q in grid {
                positive("q_grid", *q)?;
            }
        }
        if let Some(grid) = &self.b_grid {
            if let Some(b) = grid.iter().find(|b| b.abs() > 1.0) {
                return Err(ConfigError::invalid("b_grid", format!("|b| must not exceed 1, got {b}")));
            }
        }
        let method_ok = match (self.scenario, self.method) {
            (_, MethodChoice::Auto) => true,
            (Scenario::Fermi, MethodChoice::Expm | MethodChoice::ExpmMidpoint) => false,
            (Scenario::Fermi, _) => true,
            (_, MethodChoice::Split) => false,
            _ => true,
        };
        if !method_ok {
            return Err(ConfigError::invalid(
                "method",
                format!("`{}` does not apply to scenario {}", self.method.name(), self.scenario.name()),
            ));
        }
        Ok(())
    }

    /// Level count, with the scenario default when unset.
    pub fn resolved_levels(&self) -> usize {
        self.levels.unwrap_or(if self.scenario.is_pair() { 8 } else { WellSpec::default().n_levels })
    }

    /// Stepper for a scenario whose automatic choice is `auto`.
    fn stepper(&self, auto: Method, t_max: f64) -> Method {
        let tol = self.rel_tol.unwrap_or(1e-8);
        let dt = self.dt.unwrap_or(t_max / (10 * self.samples) as f64);
        match self.method {
            MethodChoice::Auto => auto,
            MethodChoice::Rosenbrock => Method::Rosenbrock { rel_tol: tol, abs_tol: tol * 1e-3 },
            MethodChoice::Dopri => Method::DormandPrince { rel_tol: tol, abs_tol: tol * 1e-3 },
            MethodChoice::Rk4 => Method::Rk4 { dt },
            MethodChoice::Expm => Method::Exponential,
            MethodChoice::ExpmMidpoint | MethodChoice::Split => Method::ExponentialMidpoint { dt },
        }
    }

    fn describe(&self, tr: &mut Trajectory) {
        tr.meta("scenario", self.scenario.name());
        tr.meta("temperature", sig17(self.temperature));
        tr.meta("levels", self.resolved_levels());
        tr.meta("samples", self.samples);
        for (k, s) in self.provenance() {
            tr.meta(&format!("source.{k}"), s);
        }
    }
}

/// Resolves a configuration from optional file text and `(key, value)` flags.
pub fn load_config(file_text: Option<&str>, flags: &[(String, String)]) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    if let Some(text) = file_text {
        for (line, k, v) in parse_config_text(text)? {
            let key = canonical_key(&k).ok_or(ConfigError::UnknownKey { key: k.clone(), line: Some(line) })?;
            cfg.set(key, &v, Source::File).map_err(|e| match e {
                ConfigError::Invalid { key, message } => ConfigError::Parse { line, message: format!("`{key}`: {message}") },
                other => other,
            })?;
        }
    }
    for (k, v) in flags {
        let key = canonical_key(k).ok_or(ConfigError::UnknownKey { key: k.clone(), line: None })?;
        // A flag for one coupling form replaces a file value of the other.
        match key {
            "q_ratio" if cfg.source("coupling_q") == Source::File => {
                cfg.coupling_q = None;
                cfg.provenance.insert("coupling_q", Source::Default);
            }
            "coupling_q" if cfg.source("q_ratio") == Source::File => {
                cfg.q_ratio = None;
                cfg.provenance.insert("q_ratio", Source::Default);
            }
            _ => {}
        }
        cfg.set(key, v, Source::Flag)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Reads `path` and resolves it together with `flags`.
pub fn load_config_file(path: Option<&Path>, flags: &[(String, String)]) -> Result<RunConfig, ConfigError> {
    let text = match path {
        Some(p) => Some(fs::read_to_string(p).map_err(|e| ConfigError::Io { path: p.display().to_string(), message: e.to_string() })?),
        None => None,
    };
    load_config(text.as_deref(), flags)
}

/// Bath for one run, calibrated to `Q` or set directly by `q`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Coupling {
    Ratio(f64),
    Direct(f64),
}

impl Coupling {
    fn label(&self) -> String {
        match self {
            Coupling::Ratio(q) => format!("Q{q}"),
            Coupling::Direct(q) => format!("q{q}"),
        }
    }

    fn calibrate(&self, model: &WellModel, temperature: f64) -> Result<CalibratedBath, ModelError> {
        match *self {
            Coupling::Ratio(target) => CalibratedBath::for_ratio(model, temperature, target),
            Coupling::Direct(q) => CalibratedBath::with_coupling(model, BathSpec::new(temperature, q)),
        }
    }
}

fn bath_meta(tr: &mut Trajectory, bath: &CalibratedBath) {
    tr.meta("coupling_q", sig17(bath.spec.coupling));
    tr.meta("q_ratio", sig17(bath.averages.ratio()));
    tr.meta("mean_g", sig17(bath.averages.g));
    tr.meta("mean_gamma", sig17(bath.averages.gamma));
}

fn write_text(path: &Path, body: &str, meta: &[(String, String)]) -> io::Result<()> {
    fs::write(path, body)?;
    let mut w = BufWriter::new(fs::File::create(sidecar_path(path))?);
    for (k, v) in meta {
        writeln!(w, "{k} = {v}")?;
    }
    w.flush()
}

/// Runs the configured scenario and returns the CSV files written.
pub fn run(cfg: &RunConfig) -> Result<Vec<PathBuf>, RunError> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out)?;
    match cfg.scenario {
        Scenario::Fig1 | Scenario::Fig2 => run_single_grid(cfg),
        Scenario::Fermi => run_fermi(cfg),
        Scenario::Bias => run_bias(cfg),
        Scenario::PairX33 | Scenario::PairEf => run_pair(cfg),
        Scenario::CollisionDemo => run_collision(cfg),
        Scenario::Sweep => run_sweep(cfg),
        Scenario::Rates => run_rates(cfg),
    }
}

fn couplings(cfg: &RunConfig, default_grid: &[f64]) -> Vec<Coupling> {
    if let Some(q) = cfg.coupling_q {
        vec![Coupling::Direct(q)]
    } else if let Some(q) = cfg.q_ratio {
        vec![Coupling::Ratio(q)]
    } else {
        cfg.q_grid.clone().unwrap_or_else(|| default_grid.to_vec()).into_iter().map(Coupling::Ratio).collect()
    }
}

fn model(cfg: &RunConfig) -> Result<WellModel, ModelError> {
    WellModel::new(WellSpec::default().with_levels(cfg.resolved_levels()))
}

/// Five averaged periods `5·2π/⟨2g⟩`.
pub fn five_periods(mean_g: f64) -> f64 {
    5.0 * PI / mean_g
}

/// One thermal-left single-particle run with the configured stepper.
pub fn single_run(cfg: &RunConfig, model: &WellModel, bath: &CalibratedBath, b: f64) -> Result<(SingleRun, Trajectory), RunError> {
    let t_max = cfg.t_max.unwrap_or_else(|| five_periods(bath.averages.g));
    let coupling = CouplingSpec::new(b)?;
    let sys = SingleParticle::new(model, &bath.table, coupling)?;
    let tol = cfg.rel_tol.unwrap_or(1e-8);
    let method = cfg.stepper(Method::Rosenbrock { rel_tol: tol, abs_tol: tol * 1e-3 }, t_max);
    let run = sys.run(&DensityLadder::thermal_left(model.energies(), cfg.temperature), &StepperConfig::new(method, t_max, cfg.samples))?;
    let mut tr = run.trajectory();
    cfg.describe(&mut tr);
    tr.meta("b", sig17(b));
    bath_meta(&mut tr, bath);
    tr.meta("t_max", sig17(t_max));
    tr.meta("method", method.name());
    tr.meta("initial_entropy", sig17(run.entropy()[0]));
    tr.meta("max_trace_defect", sig17(run.max_trace_defect()));
    Ok((run, tr))
}

fn run_single_grid(cfg: &RunConfig) -> Result<Vec<PathBuf>, RunError> {
    let model = model(cfg)?;
    let mut written = Vec::new();
    for c in couplings(cfg, &FIG1_Q_GRID) {
        let bath = c.calibrate(&model, cfg.temperature)?;
        let (_, tr) = single_run(cfg, &model, &bath, cfg.b)?;
        let path = cfg.out.join(format!("{}_{}.csv", cfg.scenario.name(), c.label()));
        tr.save(&path)?;
        written.push(path);
    }
    Ok(written)
}

fn run_sweep(cfg: &RunConfig) -> Result<Vec<PathBuf>, RunError> {
    let model = model(cfg)?;
    let qs = couplings(cfg, &FIG1_Q_GRID);
    let bs = cfg.b_grid.clone().unwrap_or_else(|| vec![cfg.b]);
    let points: Vec<(Coupling, f64)> = qs.iter().flat_map(|q| bs.iter().map(move |b| (*q, *b))).collect();
    let results: Vec<Result<(PathBuf, Vec<f64>), RunError>> = points
        .par_iter()
        .map(|(c, b)| {
            let bath = c.calibrate(&model, cfg.temperature)?;
            let (run, tr) = single_run(cfg, &model, &bath, *b)?;
            let path = cfg.out.join(format!("sweep_{}_b{}.csv", c.label(), b));
            tr.save(&path)?;
            let p = run.p_left();
            let s = run.entropy();
            let w = dominant_frequency(&run.t, &p, 16).unwrap_or(f64::NAN);
            let row = vec![
                bath.averages.ratio(),
                bath.spec.coupling,
                *b,
                *p.last().expect("samples"),
                p.iter().cloned().fold(f64::INFINITY, f64::min),
                *s.last().expect("samples"),
                w,
            ];
            Ok((path, row))
        })
        .collect();
    let mut summary = Trajectory::new(&["q_ratio", "coupling_q", "b", "final_p_left", "min_p_left", "final_entropy", "frequency"]);
    cfg.describe(&mut summary);
    let mut written = Vec::new();
    for r in results {
        let (path, row) = r?;
        written.push(path);
        summary.push(row);
    }
    let path = cfg.out.join("sweep_summary.csv");
    summary.save(&path)?;
    written.push(path);
    Ok(written)
}

/// Coupling of the moderate regime; weak and strong scale `q` from it.
fn moderate_bath(cfg: &RunConfig, model: &WellModel) -> Result<CalibratedBath, ModelError> {
    match cfg.coupling_q {
        Some(q) => CalibratedBath::with_coupling(model, BathSpec::new(cfg.temperature, q)),
        None => CalibratedBath::for_ratio(model, cfg.temperature, cfg.q_ratio.unwrap_or(1.0)),
    }
}

/// One run of the blocked ensemble from the half-filled left well.
pub fn fermi_run(cfg: &RunConfig, model: &WellModel, bath: &CalibratedBath, t_max: f64) -> Result<(FermiRun, String), RunError> {
    let n_occ = (2.0 * cfg.particles).round() as usize;
    let initial = half_filled_left_state(n_occ, model.n_levels())?;
    let sys = FermiEnsemble::new(model, &bath.table, CouplingSpec::new(cfg.b)?)?;
    let max_loss = bath.table.loss().iter().cloned().fold(0.0, f64::max);
    let tol = cfg.rel_tol.unwrap_or(1e-6);
    let stiff = bath.averages.ratio() > 10.0;
    let method = match cfg.method {
        MethodChoice::Auto if stiff => MethodChoice::Rosenbrock,
        MethodChoice::Auto => MethodChoice::Split,
        m => m,
    };
    let run = match method {
        MethodChoice::Split => {
            let dt = cfg.dt.unwrap_or_else(|| (0.04 / max_loss).min(t_max / cfg.samples as f64));
            sys.run_split(&initial, t_max, cfg.samples, dt)?
        }
        MethodChoice::Rosenbrock => sys.run(
            &initial,
            &StepperConfig::new(Method::Rosenbrock { rel_tol: tol, abs_tol: tol * 1e-2 }, t_max, cfg.samples),
        )?,
        _ => sys.run(&initial, &StepperConfig::new(cfg.stepper(Method::Exponential, t_max), t_max, cfg.samples))?,
    };
    Ok((run, method.name().to_string()))
}

fn run_fermi(cfg: &RunConfig) -> Result<Vec<PathBuf>, RunError> {
    let model = model(cfg)?;
    let levels = model.n_levels();
    if 2.0 * cfg.particles > levels as f64 {
        return Err(ConfigError::invalid("particles", format!("{} particles need {} left levels, have {levels}", cfg.particles, 2.0 * cfg.particles)).into());
    }
    let eq = solve_mu(cfg.particles, cfg.temperature, model.energies())?;
    let eq1 = solve_mu_with_degeneracy(cfg.particles, cfg.temperature, model.energies(), 1.0)?;
    let w_f = eq.weighted_frequency(model.energies(), model.splittings());
    let w_1 = eq1.weighted_frequency(model.energies(), model.splittings());
    let moderate = moderate_bath(cfg, &model)?;
    let mut written = Vec::new();
    for (label, ratio) in REGIME_RATIOS {
        let bath = CalibratedBath::with_coupling(&model, BathSpec::new(cfg.temperature, moderate.spec.coupling * ratio))?;
        let t_max = cfg.t_max.unwrap_or(if label == "strong" { 10.0 * PI / w_1 } else { 60.0 * PI / w_f });
        let (run, method) = fermi_run(cfg, &model, &bath, t_max)?;
        let mut tr = run.trajectory();
        cfg.describe(&mut tr);
        tr.meta("b", sig17(cfg.b));
        tr.meta("regime", label);
        tr.meta("coupling_ratio", sig17(ratio));
        bath_meta(&mut tr, &bath);
        tr.meta("particles", sig17(cfg.particles));
        tr.meta("mu", sig17(eq.mu));
        tr.meta("mu_single_mode", sig17(eq1.mu));
        tr.meta("fermi_frequency", sig17(w_f));
        tr.meta("fermi_frequency_single_mode", sig17(w_1));
        tr.meta("t_max", sig17(t_max));
        tr.meta("method", method);
        tr.meta("max_number_defect", sig17(run.max_number_defect()));
        let path = cfg.out.join(format!("fermi_{label}.csv"));
        tr.save(&path)?;
        let final_path = cfg.out.join(format!("fermi_{label}_final.csv"));
        write_text(&final_path, &run.final_distribution_csv(model.energies()), &tr.metadata)?;
        written.push(path);
        written.push(final_path);
    }
    Ok(written)
}

/// Single-particle run through the bias reversal at one coupling.
pub fn bias_run(cfg: &RunConfig, model: &WellModel, bath: &CalibratedBath) -> Result<(SingleRun, Trajectory), RunError> {
    let schedule = BiasSchedule::centered(cfg.bias_amplitude, cfg.bias_span);
    schedule.check_scales(model, &BiasLimits::default())?;
    let biased = model.clone().with_bias(Some(schedule))?;
    let t_max = cfg.t_max.unwrap_or(schedule.ramp_end());
    let dt = cfg.dt.unwrap_or(cfg.bias_span / 2000.0);
    let method = match cfg.method {
        MethodChoice::Auto => Method::ExponentialMidpoint { dt },
        _ => cfg.stepper(Method::ExponentialMidpoint { dt }, t_max),
    };
    let sys = SingleParticle::new(&biased, &bath.table, CouplingSpec::new(cfg.b)?)?;
    let run = sys.run(&DensityLadder::thermal_left(model.energies(), cfg.temperature), &StepperConfig::new(method, t_max, cfg.samples))?;
    let mut tr = run.trajectory();
    cfg.describe(&mut tr);
    tr.meta("b", sig17(cfg.b));
    bath_meta(&mut tr, bath);
    tr.meta("bias_amplitude", sig17(schedule.amplitude));
    tr.meta("bias_t_zero", sig17(schedule.t_zero));
    tr.meta("bias_span", sig17(schedule.t_span));
    tr.meta("t_max", sig17(t_max));
    tr.meta("method", method.name());
    if let Method::ExponentialMidpoint { dt } | Method::Rk4 { dt } = method {
        tr.meta("dt", sig17(dt));
    }
    Ok((run, tr))
}

fn run_bias(cfg: &RunConfig) -> Result<Vec<PathBuf>, RunError> {
    let model = model(cfg)?;
    let moderate = moderate_bath(cfg, &model)?;
    let mut written = Vec::new();
    for (label, ratio) in [("none", 0.0), ("moderate", 1.0), ("strong", 1e3)] {
        let bath = CalibratedBath::with_coupling(&model, BathSpec::new(cfg.temperature, moderate.spec.coupling * ratio))
            .or_else(|_| zero_bath(&model, cfg.temperature))?;
        let (_, mut tr) = bias_run(cfg, &model, &bath)?;
        tr.meta("regime", label);
        let path = cfg.out.join(format!("bias_{label}.csv"));
        tr.save(&path)?;
        written.push(path);
    }
    Ok(written)
}

/// `q = 0`: rates vanish, the averages keep the thermal `⟨g⟩`.
fn zero_bath(model: &WellModel, temperature: f64) -> Result<CalibratedBath, ModelError> {
    let mut bath = CalibratedBath::with_coupling(model, BathSpec::new(temperature, 1.0))?;
    bath.table = bath.table.scaled(0.0);
    bath.spec = bath.spec.with_coupling(0.0);
    bath.averages.gamma = 0.0;
    Ok(bath)
}

/// One pair run from a thermal Bell state. `b = 0` uses the reduced equation.
pub fn pair_run(cfg: &RunConfig, model: &WellModel, bath: &CalibratedBath) -> Result<(PairRun, Trajectory), RunError> {
    let t_max = cfg.t_max.unwrap_or_else(|| five_periods(bath.averages.g));
    let method = cfg.stepper(Method::Exponential, t_max);
    let initial = thermal_bell_field(cfg.bell, model.energies(), cfg.temperature);
    let step = StepperConfig::new(method, t_max, cfg.samples);
    let (run, equation) = if cfg.b == 0.0 {
        (run_reduced(&PairReduced::new(model, &bath.table)?, &initial, &step)?, "reduced")
    } else {
        let c = CouplingSpec::new(cfg.b)?;
        (run_general(&PairGeneral::new(model, &bath.table, c, c)?, &initial, &step)?, "general")
    };
    let mut tr = run.trajectory()?;
    cfg.describe(&mut tr);
    tr.meta("b", sig17(cfg.b));
    bath_meta(&mut tr, bath);
    tr.meta("bell", cfg.bell.name());
    tr.meta("equation", equation);
    tr.meta("t_max", sig17(t_max));
    tr.meta("method", method.name());
    Ok((run, tr))
}

fn run_pair(cfg: &RunConfig) -> Result<Vec<PathBuf>, RunError> {
    let model = model(cfg)?;
    let mut written = Vec::new();
    for c in couplings(cfg, &PAIR_Q_GRID) {
        let bath = c.calibrate(&model, cfg.temperature)?;
        let (_, tr) = pair_run(cfg, &model, &bath)?;
        let path = cfg.out.join(format!("{}_{}_{}.csv", cfg.scenario.name(), cfg.bell.name(), c.label()));
        tr.save(&path)?;
        written.push(path);
    }
    Ok(written)
}

fn run_collision(cfg: &RunConfig) -> Result<Vec<PathBuf>, RunError> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let inputs = [
        (C64::new(1.0, 0.0), C64::new(0.0, 0.0)),
        (C64::new(h, 0.0), C64::new(h, 0.0)),
        (C64::new(h, 0.0), C64::new(0.0, h)),
        (C64::new(0.6, 0.0), C64::new(0.0, -0.8)),
    ];
    let mut tr = Trajectory::new(&["c1_re", "c1_im", "c2_re", "c2_im", "b", "rho_ll", "rho_rr", "rho_lr_re", "rho_lr_im", "purity"]);
    cfg.describe(&mut tr);
    for (c1, c2) in inputs {
        for (kind, b) in [(Collision::SideBlind, 0.0), (Collision::SideSensing, 1.0)] {
            let r = collision_toy(c1, c2, kind)?;
            tr.push(vec![c1.re, c1.im, c2.re, c2.im, b, r.ll, r.rr, r.lr_re, r.lr_im, r.purity()]);
        }
    }
    let path = cfg.out.join("collision_demo.csv");
    tr.save(&path)?;

    // Dephasing of one level with an injected rate, sampled against the closed form.
    let b = if cfg.source("b") == Source::Default { 1.0 } else { cfg.b };
    let system = TwoLevel { g: 1.0, b, gamma: 0.05 };
    let t_max = cfg.t_max.unwrap_or(20.0 * PI);
    let rho0 = crate::linalg::Herm2::projector(C64::new(h, 0.0), C64::new(h, 0.0));
    let tol = cfg.rel_tol.unwrap_or(1e-10);
    let sol = crate::integrator::integrate(
        &system,
        &rho0.to_array(),
        &StepperConfig::new(cfg.stepper(Method::DormandPrince { rel_tol: tol, abs_tol: tol * 1e-2 }, t_max), t_max, cfg.samples),
    )?;
    let mut dec = Trajectory::new(&["t", "coherence", "coherence_closed_form", "p_left", "p_left_closed_form"]);
    cfg.describe(&mut dec);
    dec.meta("b", sig17(b));
    dec.meta("g", sig17(system.g));
    dec.meta("gamma", sig17(system.gamma));
    dec.meta("dephasing_rate", sig17(system.dephasing_rate()));
    for (t, y) in sol.t.iter().zip(&sol.y) {
        let num = crate::linalg::Herm2::from_slice(y);
        let exact = system.closed_form(&rho0, *t);
        dec.push(vec![*t, num.lr().norm(), exact.lr().norm(), num.ll, exact.ll]);
    }
    let dec_path = cfg.out.join("collision_demo_dephasing.csv");
    dec.save(&dec_path)?;
    Ok(vec![path, dec_path])
}

fn run_rates(cfg: &RunConfig) -> Result<Vec<PathBuf>, RunError> {
    let model = model(cfg)?;
    let c = couplings(cfg, &[1.0])[0];
    let bath = c.calibrate(&model, cfg.temperature)?;
    let mut body = Vec::new();
    bath.table.write_csv(&mut body)?;
    let mut tr = Trajectory::default();
    cfg.describe(&mut tr);
    bath_meta(&mut tr, &bath);
    tr.meta("detailed_balance_defect", sig17(bath.table.detailed_balance_defect(cfg.temperature)));
    let path = cfg.out.join(format!("rates_{}.csv", c.label()));
    write_text(&path, &String::from_utf8(body).expect("csv is utf-8"), &tr.metadata)?;
    Ok(vec![path])
}
