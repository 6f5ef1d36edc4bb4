//! Error type shared by the core modules.

use alloc::string::String;
use core::fmt;

/// Everything that can go wrong while building operators or problems.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A parameter is out of its documented range.
    InvalidParameter(String),
    /// Two objects that must share a shape or space do not.
    DimensionMismatch(String),
    /// The requested photon grade is above the space cutoff.
    CutoffTooSmall { requested: usize, cutoff: usize },
    /// Scheme, mode count or outcome alphabet is not supported.
    Unsupported(String),
    /// An exact algebraic identity failed numerically.
    Numerical(String),
    /// Observed statistics are incomplete or inconsistent.
    Observations(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter(m) => write!(f, "invalid parameter: {m}"),
            Error::DimensionMismatch(m) => write!(f, "dimension mismatch: {m}"),
            Error::CutoffTooSmall { requested, cutoff } => {
                write!(f, "photon grade {requested} exceeds cutoff {cutoff}")
            }
            Error::Unsupported(m) => write!(f, "unsupported: {m}"),
            Error::Numerical(m) => write!(f, "numerical failure: {m}"),
            Error::Observations(m) => write!(f, "bad observations: {m}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
