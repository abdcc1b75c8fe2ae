use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("doublet {level} is not bound below the barrier (U0 = {barrier})")]
    UnboundLevel { level: usize, barrier: f64 },

    #[error("could not bracket the {parity} root of doublet {level}")]
    RootNotBracketed { level: usize, parity: &'static str },

    #[error("thermal average of the bath rates vanishes at unit coupling")]
    DegenerateSpectrum,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("adaptive step fell to {dt:e} at t = {t:e}")]
    StepUnderflow { t: f64, dt: f64 },

    #[error("step budget of {max_steps} exhausted at t = {t:e}")]
    TooManySteps { t: f64, max_steps: usize },

    #[error("state became non-finite at t = {t:e}")]
    NonFinite { t: f64 },

    #[error("right-hand side failed the linearity probe (defect {defect:e})")]
    NonLinearRhs { defect: f64 },

    #[error("amplitudes are not normalised: |c1|^2 + |c2|^2 = {norm}")]
    NonNormalized { norm: f64 },

    #[error("not a density matrix: {0}")]
    NotADensityMatrix(String),

    #[error("value {value} outside [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("particle number {target} infeasible for {levels} levels (need 0 < N < {max})")]
    Infeasible { target: f64, levels: usize, max: f64 },

    #[error("state layout mismatch: expected {expected}, found {found}")]
    LayoutMismatch { expected: String, found: String },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }

    /// True for failures of the time stepper itself.
    pub fn is_integrator_failure(&self) -> bool {
        matches!(self, Error::StepUnderflow { .. } | Error::TooManySteps { .. } | Error::NonFinite { .. })
    }
}
