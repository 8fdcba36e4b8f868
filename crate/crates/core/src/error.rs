use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value: {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("pair state lies on the diagonal")]
    Diagonal,
    #[error("shift sequence has odd length {0}")]
    OddShiftLength(usize),
    #[error("point is not in the antipodal set (deviation {0:e})")]
    NotAntipodal(f64),
    #[error("singular Jacobian (|det| = {0:e})")]
    Singular(f64),
    #[error("query lies outside the certified ball (distance {distance:e}, radius {radius:e})")]
    OutsideCertifiedBall { distance: f64, radius: f64 },
    #[error("Newton iteration did not converge (residual {0:e})")]
    NoConvergence(f64),
    #[error("time {t} exceeds the certified reach time {limit:e}")]
    ReachTime { t: f64, limit: f64 },
    #[error("separation {separation:e} is below the planner minimum {minimum:e}")]
    SeparationTooSmall { separation: f64, minimum: f64 },
    #[error("planner exhausted {0} half steps without closing the target")]
    PlannerStalled(usize),
    #[error("grid size {0} must be a power of two and at least 8")]
    GridSize(usize),
    #[error("field is not mean-zero (mean {0:e})")]
    NotMeanZero(f64),
    #[error("field has no non-zero modes")]
    ZeroField,
    #[error("decay fit needs at least two positive points, got {0}")]
    DegenerateFit(usize),
    #[error("path integration failed: {0}")]
    Integration(String),
    #[error("multi-precision: {0}")]
    Precision(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn finite(name: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(name))
    }
}

pub(crate) fn positive(name: &'static str, v: f64) -> Result<f64> {
    finite(name, v)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(invalid(name, format!("must be positive, got {v}")))
    }
}
