use thiserror::Error;

/// Every failure mode of the library. Predicate failures (a matching that
/// does not exist, a tower check that misses its ε) are reported values,
/// not errors; this enum covers contract violations and pipeline aborts.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("no admissible sample size for {boxes} boxes (need n >= {needed})")]
    NoAdmissibleSize { boxes: usize, needed: usize },

    #[error("invariant measure of this map is not known in closed form")]
    UnknownInvariantMeasure,

    #[error("map is not flagged minimal")]
    NotMinimal,

    #[error("power iteration did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("cannot combine scalar functions with different precompositions")]
    IncompatibleComposition,

    #[error("tower coverage {achieved:.6} does not exceed the target {target:.6} within the halving budget")]
    TowerCoverage { achieved: f64, target: f64 },

    #[error("orbit arithmetic undecidable at float precision (value {0:e})")]
    Undecidable(f64),

    #[error("stage {stage}: no matching below threshold {threshold:e} (best achievable bottleneck {bottleneck:e})")]
    NoMatching { stage: usize, threshold: f64, bottleneck: f64 },

    #[error("winding aliasing: sample step {step:.4} turns is too large")]
    Aliasing { step: f64 },

    #[error("loop is not closed: endpoints differ by {gap:e}")]
    NotClosed { gap: f64 },

    #[error("winding residue {residue:.4} exceeds tolerance")]
    WindingResidue { residue: f64 },

    #[error("integer overflow in exact matrix arithmetic")]
    Overflow,

    #[error("induced map moves the dimension summand: {0}")]
    MovesDimensionSummand(String),

    #[error("matrix is singular over the rationals")]
    Singular,

    #[error("io: {0}")]
    Io(String),

    #[error("parse: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
