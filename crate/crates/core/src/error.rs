use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::mdp::Violation;
use crate::tape::TapeKind;

/// Errors raised by the core operations.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two objects disagree on `(S, A, H)` or a buffer has the wrong length.
    ShapeMismatch { what: &'static str, expected: usize, found: usize },
    /// An MDP failed validation.
    InvalidMdp(Vec<Violation>),
    /// A policy row is not a probability vector.
    InvalidPolicy { h: usize, s: usize, sum: f64 },
    /// A tape was read past its capacity.
    TapeExhausted { tape: TapeKind, h: usize, s: usize, a: usize },
    /// An argument is outside its domain.
    InvalidArgument(String),
    /// The average logger never visits a cell the target policy needs.
    ZeroLoggerMass { h: usize, s: usize, a: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { what, expected, found } => {
                write!(f, "shape mismatch in {what}: expected {expected}, found {found}")
            }
            Error::InvalidMdp(violations) => {
                write!(f, "invalid MDP ({} violations)", violations.len())?;
                for v in violations {
                    write!(f, "; {v}")?;
                }
                Ok(())
            }
            Error::InvalidPolicy { h, s, sum } => {
                write!(f, "policy row at step {} state {s} is not a distribution (sum {sum})", h + 1)
            }
            Error::TapeExhausted { tape, h, s, a } => {
                write!(f, "{tape} tape exhausted at step {} state {s} action {a}", h + 1)
            }
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::ZeroLoggerMass { h, s, a } => write!(
                f,
                "average logger has zero mass at step {} state {s} action {a} where the target policy has mass",
                h + 1
            ),
        }
    }
}

impl core::error::Error for Error {}
