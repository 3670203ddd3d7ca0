use core::fmt;

/// Errors produced by the algorithmic core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An operation received an empty input where at least one element is required.
    Empty(&'static str),
    /// No fixed-point-free permutation exists for batches smaller than two.
    NoDerangement { n: usize },
    /// Two inputs that must be index-aligned have different lengths.
    LengthMismatch { what: &'static str, left: usize, right: usize },
    /// A loss weight or significance level is outside its valid range.
    InvalidParameter(&'static str),
    /// A discrete density vector failed validation (negative mass or sum far from 1).
    InvalidDensity(&'static str),
    /// A label value is outside `[0, n_classes)`.
    LabelOutOfRange { label: usize, n_classes: usize },
    /// Ground-truth depth contains non-positive values.
    NonPositiveDepth,
    /// A raw score or probability input is non-finite.
    NonFinite(&'static str),
    /// k-means could not produce `k` non-empty clusters after the retry budget.
    DegenerateClustering { k: usize, retries: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Empty(what) => write!(f, "{what}: empty input"),
            Error::NoDerangement { n } => {
                write!(f, "no derangement exists for batch size {n}")
            }
            Error::LengthMismatch { what, left, right } => {
                write!(f, "{what}: length mismatch ({left} vs {right})")
            }
            Error::InvalidParameter(what) => write!(f, "invalid parameter: {what}"),
            Error::InvalidDensity(what) => write!(f, "invalid density: {what}"),
            Error::LabelOutOfRange { label, n_classes } => {
                write!(f, "label {label} out of range for {n_classes} classes")
            }
            Error::NonPositiveDepth => write!(f, "ground-truth depth must be positive"),
            Error::NonFinite(what) => write!(f, "{what}: non-finite value"),
            Error::DegenerateClustering { k, retries } => {
                write!(f, "k-means degenerate for k={k} after {retries} retries")
            }
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
