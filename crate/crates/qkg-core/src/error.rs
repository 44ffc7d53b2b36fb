//! Error type shared by all engine layers.

use thiserror::Error;

/// Errors surfaced by the exact engine.
///
/// Every variant corresponds to a contract violation that the caller can act
/// on; internal invariant breakage panics instead.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum Error {
    /// A series used variables outside the chart expected by the operation.
    #[error("chart mismatch: expected variables of {expected}, found `{found}`")]
    ChartMismatch {
        /// Description of the allowed chart.
        expected: String,
        /// The offending variable.
        found: String,
    },

    /// `q_double_factorial` is only defined for even arguments.
    #[error("double factorial requires an even argument, got {0}")]
    OddDoubleFactorial(i64),

    /// A denominator factor vanishes identically at q = 1.
    #[error("pole at q = 1 in denominator factor `{factor}`")]
    ClassicalPole {
        /// Canonical text of the vanishing factor.
        factor: String,
    },

    /// Division by an exact zero scalar or series.
    #[error("division by zero")]
    DivisionByZero,

    /// L-matrix probe extraction found a non-diagonal derivative probe.
    #[error("L-matrix extraction inconsistency: {detail}")]
    ExtractionInconsistency {
        /// Human-readable diagnosis of the failed probe check.
        detail: String,
    },

    /// A wave function of one flavor was passed to an operation pinned to
    /// another flavor.
    #[error("wave flavor mismatch: expected {expected}, found {found}")]
    FlavorMismatch {
        /// Flavor the operation is defined for.
        expected: &'static str,
        /// Flavor actually supplied.
        found: &'static str,
    },

    /// Text input could not be parsed as a series.
    #[error("parse error at byte {at}: {msg}")]
    Parse {
        /// Diagnostic message.
        msg: String,
        /// Byte offset into the input.
        at: usize,
    },

    /// The harness was asked for a suite name it does not know.
    #[error("unknown suite `{0}`")]
    UnknownSuite(String),

    /// A suite configuration value is outside the supported range.
    #[error("bad configuration: {msg}")]
    BadConfig {
        /// Diagnostic message.
        msg: String,
    },

    /// A report file did not round-trip through the canonical schema.
    #[error("malformed report at line {line}: {msg}")]
    MalformedReport {
        /// One-based line number.
        line: usize,
        /// Diagnostic message.
        msg: String,
    },
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
