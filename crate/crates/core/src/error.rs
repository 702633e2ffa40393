use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Failure classes shared by every module of the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A caller broke a precondition (mismatched lengths, wrong loss kind, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Input is well-formed but outside the function's domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// A non-finite value appeared during computation.
    #[error("numeric error at {node}: {detail}")]
    Numeric { node: String, detail: String },
    /// Invalid experiment, model or dataset configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// A computation graph could not be built.
    #[error("construction error: {0}")]
    Construction(String),
}

impl Error {
    /// Stable, machine-parsable code for the error class.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Contract(_) => "E_CONTRACT",
            Error::Domain(_) => "E_DOMAIN",
            Error::Numeric { .. } => "E_NUMERIC",
            Error::Config(_) => "E_CONFIG",
            Error::Construction(_) => "E_CONSTRUCTION",
        }
    }
}

macro_rules! contract {
    ($($arg:tt)*) => { $crate::error::Error::Contract(alloc::format!($($arg)*)) };
}
macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(alloc::format!($($arg)*)) };
}
pub(crate) use config_err;
pub(crate) use contract;
