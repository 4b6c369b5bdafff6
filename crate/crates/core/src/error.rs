//! Error type shared by all modules.

use alloc::string::String;
use core::fmt;

/// Failure modes of the library. Each variant carries a human-readable
/// diagnostic; shape errors name the offending operation and dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Array dimensions do not agree.
    Shape(String),
    /// A value is outside its mathematical domain (e.g. non-positive step
    /// size, action outside the action space).
    Domain(String),
    /// An index is out of range (e.g. timestep beyond the episode table).
    Range(String),
    /// Inconsistent or invalid configuration.
    Config(String),
    /// Non-finite values were produced; the message names the parameter
    /// paths involved when known.
    Numeric(String),
    /// An operation was called before its prerequisite state was cached.
    State(String),
    /// A structural invariant was violated (e.g. building an LTI kernel
    /// from token-varying parameters).
    InvariantViolation(String),
    /// Not enough data points to fit or estimate.
    InsufficientData(String),
    /// The requested mode is not supported for this configuration.
    Unsupported(String),
    /// Internal inconsistency that indicates a bug.
    Internal(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Domain(m) => write!(f, "domain error: {m}"),
            Error::Range(m) => write!(f, "range error: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Numeric(m) => write!(f, "numeric error: {m}"),
            Error::State(m) => write!(f, "state error: {m}"),
            Error::InvariantViolation(m) => write!(f, "invariant violation: {m}"),
            Error::InsufficientData(m) => write!(f, "insufficient data: {m}"),
            Error::Unsupported(m) => write!(f, "unsupported mode: {m}"),
            Error::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

macro_rules! err_ctor {
    ($fn_name:ident, $variant:ident) => {
        impl Error {
            pub fn $fn_name(msg: impl fmt::Display) -> Self {
                Error::$variant(alloc::format!("{msg}"))
            }
        }
    };
}

err_ctor!(shape, Shape);
err_ctor!(domain, Domain);
err_ctor!(range, Range);
err_ctor!(config, Config);
err_ctor!(numeric, Numeric);
err_ctor!(state, State);
err_ctor!(invariant, InvariantViolation);
err_ctor!(insufficient, InsufficientData);
err_ctor!(unsupported, Unsupported);
err_ctor!(internal, Internal);
