use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite value for `{0}`")]
    NonFinite(&'static str),

    #[error("terminated network is singular (termination closes an unstable loop)")]
    SingularNetwork,

    #[error("alignment of both users requires independently tunable coefficients")]
    BothAlignmentUnsupported,

    #[error("angle {angle_deg}° is outside the {side} half-space")]
    WrongHalfSpace { angle_deg: f64, side: &'static str },

    #[error("{}", match line { Some(l) => format!("config line {l}: {message}"), None => format!("config: {message}") })]
    Config { line: Option<usize>, message: String },

    #[error("report has no entry for `{0}`")]
    MissingTraceEntry(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("sweep point {index} (x = {x}): {source}")]
    SweepPoint {
        index: usize,
        x: f64,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(value: f64, name: &'static str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(name))
    }
}

pub(crate) fn ensure_positive(value: f64, name: &'static str) -> Result<f64> {
    ensure_finite(value, name)?;
    if value > 0.0 {
        Ok(value)
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: format!("must be positive, got {value}"),
        })
    }
}

pub(crate) fn ensure_nonnegative(value: f64, name: &'static str) -> Result<f64> {
    ensure_finite(value, name)?;
    if value >= 0.0 {
        Ok(value)
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: format!("must be nonnegative, got {value}"),
        })
    }
}
