use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A physical parameter is outside its admissible range.
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    /// Operation applied outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("resonator denominator is singular (|1 - xy e^-iphi| = {modulus:e})")]
    Singular { modulus: f64 },

    #[error("spectrum point {index}: {source}")]
    AtIndex {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("no resonance dip below the off-resonant baseline")]
    NoDip,

    #[error("dip is ambiguous: found {crossings} half-depth crossings")]
    AmbiguousDip { crossings: usize },

    #[error("phase is indeterminate: s2^2 + s3^2 = {0:e} is below tolerance")]
    IndeterminatePhase(f64),

    #[error("expected count {expected:e} per bin exceeds the cap of {cap:e}")]
    CountOverflow { expected: f64, cap: f64 },

    #[error("inconsistent spectra: joint residual {joint:e} is far above the separate fits ({separate:e})")]
    InconsistentSpectra { joint: f64, separate: f64 },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn at(index: usize, err: Error) -> Self {
        Error::AtIndex {
            index,
            source: Box::new(err),
        }
    }

    /// True when the error stems from bad user input rather than numerics or I/O.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::InvalidParameter { .. }
            | Error::Config(_)
            | Error::Format(_)
            | Error::Json(_) => true,
            Error::Csv(e) => !e.is_io_error(),
            Error::AtIndex { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::Csv(e) => e.is_io_error(),
            Error::AtIndex { source, .. } => source.is_io(),
            _ => false,
        }
    }
}
