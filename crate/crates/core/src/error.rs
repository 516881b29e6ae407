use alloc::string::String;

/// Errors reported by every fallible operation in this crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A scenario or one of its parts violates an invariant.
    #[error("invalid scenario: {0}")]
    Scenario(String),
    /// A policy table or distribution violates an invariant.
    #[error("invalid policy: {0}")]
    Policy(String),
    /// A distribution puts mass where the reference (or the other argument)
    /// has none, or a required probability is zero.
    #[error("support violation at output {index}: {detail}")]
    Support {
        /// Position of the offending output within its context.
        index: usize,
        /// Which support condition failed.
        detail: &'static str,
    },
    /// Exact enumeration would exceed the combinatorial guard.
    #[error("exact enumeration needs {count} terms (limit {limit}); use Monte Carlo")]
    Enumeration {
        /// Number of terms the enumeration would visit.
        count: u128,
        /// Largest permitted count.
        limit: u128,
    },
    /// An argument is outside the documented domain.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// The sampled trainer left the support of the reference policy.
    #[error("training diverged: {0}")]
    Diverged(String),
}

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;
