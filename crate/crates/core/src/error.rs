use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("distortion {d} is at or above d_max = {d_max}")]
    DistortionTooLarge { d: f64, d_max: f64 },
    #[error("{what} did not converge (residual {residual:e})")]
    Convergence { what: &'static str, residual: f64 },
    #[error("inconsistent inputs: {0}")]
    Consistency(String),
    #[error("could not bracket {what}: {detail}")]
    Bracketing { what: &'static str, detail: String },
    #[error("Monte Carlo error bar too wide with {samples} samples; about {required} needed")]
    InsufficientSamples { samples: usize, required: usize },
    #[error("blocklength {n} too small for the rate formula (epsilon_n = {epsilon_n})")]
    BlocklengthTooSmall { n: usize, epsilon_n: f64 },
    #[error("slope unavailable: {0}")]
    SlopeUnavailable(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    /// True for errors caused by bad inputs rather than by a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::DistortionTooLarge { .. }
                | Error::Consistency(_)
                | Error::Config(_)
                | Error::BlocklengthTooSmall { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
