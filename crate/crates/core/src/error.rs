use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A user-supplied parameter is out of range. `field` names the offending input.
    #[error("{field}: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("gathering law is not admissible: {0}")]
    Inadmissible(String),

    #[error("{what} = {value} lies outside {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("invalid step size dt = {0} (must be positive and finite)")]
    StepSize(f64),

    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),

    #[error("infected proportion {infected:e} still above {threshold:e} at t = {time}")]
    NotConverged {
        time: f64,
        infected: f64,
        threshold: f64,
    },

    #[error("gathering of size {size} cannot be drawn from a population of {population}")]
    GatheringTooLarge { size: u64, population: u64 },

    #[error("illegal jump from {from:?} by {amplitude:?}: state leaves the box [0, {population}]")]
    IllegalState {
        from: Vec<i64>,
        amplitude: Vec<i64>,
        population: u64,
    },

    #[error("per-capita rate {rate} exceeds declared bound {bound} at state {state:?}")]
    RateBoundExceeded {
        rate: f64,
        bound: f64,
        state: Vec<i64>,
    },

    #[error("{which} trajectory ends at t = {end}, before the requested horizon {horizon}")]
    Coverage {
        which: &'static str,
        end: f64,
        horizon: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad user input rather than a failure while computing.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. }
                | Error::Inadmissible(_)
                | Error::Domain { .. }
                | Error::StepSize(_)
                | Error::DegenerateInput(_)
                | Error::Json(_)
        )
    }
}
