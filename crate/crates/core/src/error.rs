use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A parameter lies outside the domain an operation is defined on.
    #[error("{what} out of domain: {detail}")]
    Domain { what: &'static str, detail: String },

    #[error("marble index {index} out of range for a state of {n} marbles")]
    IndexOutOfRange { index: u64, n: u64 },

    /// Explicit 2^n term expansion was requested for too many marbles.
    #[error("explicit expansion is limited to n <= {limit}, got n = {n}")]
    ExpansionTooLarge { n: u64, limit: u64 },
}

impl Error {
    pub(crate) fn domain(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            what,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
