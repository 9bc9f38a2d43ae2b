use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("identifiability error: {0}")]
    Identifiability(String),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    /// Factorization failed even after jitter; `condition` is the squared
    /// ratio of the largest to smallest Cholesky pivot seen before failure.
    #[error("numerical failure: {message} (condition estimate {condition:.3e})")]
    Numerical { message: String, condition: f64 },

    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),
}

impl Error {
    /// True for errors raised by violated estimator preconditions, as opposed
    /// to numerical breakdown.
    pub fn is_precondition(&self) -> bool {
        !matches!(self, Error::Numerical { .. })
    }
}

pub(crate) fn check_unit_interval(what: &str, t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} = {t} lies outside [0, 1]")))
    }
}
