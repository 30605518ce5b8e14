use serde::Serialize;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CtrError>;

#[derive(Debug, Error)]
pub enum CtrError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{what} = {value} outside domain [{lo}, {hi}]")]
    OutOfDomain {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("polynomial fit failed: {0}")]
    FitFailure(String),

    #[error("no sign change on [{lo}, {hi}] (f = {f_lo}, {f_hi})")]
    NoBracket { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("target unreachable: {reason} (nearest achievable radial distance {nearest_radius:.4} mm)")]
    Unreachable { reason: String, nearest_radius: f64 },

    #[error("degenerate fiducial configuration: {0}")]
    DegenerateRegistration(String),

    #[error("configuration invalid: {} violation(s)", .0.len())]
    Config(Vec<ConfigIssue>),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

impl CtrError {
    /// Stable machine-readable code used by the CLI's error JSON.
    pub fn code(&self) -> &'static str {
        match self {
            CtrError::InvalidInput(_) => "E_INVALID_INPUT",
            CtrError::OutOfDomain { .. } => "E_DOMAIN",
            CtrError::FitFailure(_) => "E_FIT",
            CtrError::NoBracket { .. } => "E_NUMERIC",
            CtrError::Unreachable { .. } => "E_UNREACHABLE",
            CtrError::DegenerateRegistration(_) => "E_REGISTRATION",
            CtrError::Config(_) => "E_CONFIG",
            CtrError::Io { .. } => "E_IO",
            CtrError::Parse { .. } => "E_PARSE",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CtrError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(path: impl AsRef<std::path::Path>, message: impl ToString) -> Self {
        CtrError::Parse {
            path: path.as_ref().display().to_string(),
            message: message.to_string(),
        }
    }
}

/// One configuration invariant violation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigIssue {
    pub code: &'static str,
    pub field: String,
    pub message: String,
}

/// Accepts `value` within `[lo, hi]` up to a round-off slack and returns it
/// clamped into the closed interval.
pub(crate) fn check_domain(what: &'static str, value: f64, lo: f64, hi: f64) -> Result<f64> {
    let slack = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
    if value.is_nan() || value < lo - slack || value > hi + slack {
        Err(CtrError::OutOfDomain { what, value, lo, hi })
    } else {
        Ok(value.clamp(lo, hi))
    }
}
