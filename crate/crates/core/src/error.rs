use thiserror::Error;

/// Evaluation outside the region where the reduced metric is regular.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("conformal factor f = {value} is not positive at {point:?}")]
    NonPositiveConformalFactor { value: f64, point: [f64; 3] },
    #[error("vertical factor h = {value} is not positive at {point:?}")]
    NonPositiveVerticalFactor { value: f64, point: [f64; 3] },
    #[error("point {point:?} lies within {distance:e} of a coordinate singularity")]
    NearSingularity { distance: f64, point: [f64; 3] },
    #[error("point {point:?} lies on the Dirac string of the gauge potential")]
    GaugeString { point: [f64; 3] },
    #[error("{0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConservedError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("equal NUT charges: the confinement surface is the median plane through the origin with normal {normal:?}")]
    MedianPlane { normal: [f64; 3] },
    #[error("invalid two-center parameters: {0}")]
    InvalidTwoCenter(String),
    #[error("the construction requires a nonzero charge q")]
    ZeroCharge,
}

#[derive(Debug, Clone, Error)]
pub enum ConfigError {
    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for ConfigError {
    fn from(e: std::io::Error) -> Self {
        ConfigError::Io(e.to_string())
    }
}
