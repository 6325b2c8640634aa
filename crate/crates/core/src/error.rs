use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-positive rate: {name} = {value}")]
    NonPositiveRate { name: &'static str, value: f64 },
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("inconsistent geometry: delta_omega * L = {product}, expected pi * c = {expected}")]
    InconsistentGeometry { product: f64, expected: f64 },
    #[error("fiber geometry missing: supply fiber_length or delta_omega")]
    MissingGeometry,
    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("basis mismatch between state vectors")]
    BasisMismatch,

    #[error("mixing angle formula exceeds 1 inside the support (sin theta = {value})")]
    UnphysicalMixing { value: f64 },
    #[error("amplitude below threshold at t = {t}")]
    ZeroAmplitude { t: f64 },

    #[error("detuning too small: delta' = {delta_prime}, need >= {required}")]
    DetuningTooSmall { delta_prime: f64, required: f64 },
    #[error("effective coupling requires delta >= {required}, got {delta}")]
    EffectiveCouplingInvalid { delta: f64, required: f64 },

    #[error("step size underflow at t = {t} (dt = {dt})")]
    StepUnderflow { t: f64, dt: f64 },
    #[error("non-finite amplitude at t = {t}")]
    NonFiniteAmplitude { t: f64 },
    #[error("invalid time interval [{t0}, {t1}]")]
    InvalidInterval { t0: f64, t1: f64 },
    #[error("initial state not normalized: norm^2 = {norm2}")]
    NotNormalized { norm2: f64 },

    #[error("eigenbranch tracking lost at t = {t} (overlap {overlap})")]
    TrackingLost { t: f64, overlap: f64 },

    #[error("envelope support {support} exceeds delay line capacity {capacity}")]
    BufferOverrun { support: f64, capacity: f64 },
    #[error("regime mismatch: operation needs the {expected} regime, parameters classify as {found}")]
    RegimeMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("grid mismatch: {0}")]
    GridMismatch(&'static str),

    #[error("probability out of range: {name} = {value}")]
    ProbabilityOutOfRange { name: &'static str, value: f64 },
    #[error("invalid density matrix: {0}")]
    InvalidState(&'static str),
    #[error("input amplitudes not normalized: sum |alpha|^2 = {norm2}")]
    UnnormalizedInput { norm2: f64 },

    #[error("adiabaticity breakdown: leakage {leakage} exceeds {limit}")]
    AdiabaticityBreakdown { leakage: f64, limit: f64 },
    #[error("target phase not bracketed in [{lo}, {hi}]")]
    NoBracket { lo: f64, hi: f64 },
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
}
