use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid array geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid scatterer ring: {0}")]
    InvalidRing(String),
    #[error("quadrature needs at least {min} nodes, got {got}")]
    QuadratureTooCoarse { min: usize, got: usize },
    #[error("scatterer at distance {distance_m:.4e} m from antenna {antenna}, within one wavelength")]
    GeometryDegenerate { antenna: usize, distance_m: f64 },
    #[error("first-order ring approximation needs S >= {ratio} R (S = {distance_m}, R = {radius_m})")]
    ApproximationDomain {
        ratio: f64,
        distance_m: f64,
        radius_m: f64,
    },
    #[error("correlation matrix is not PSD: eigenvalue {min_eigenvalue:.3e} vs max {max_eigenvalue:.3e}")]
    NotPsd {
        min_eigenvalue: f64,
        max_eigenvalue: f64,
    },
    #[error("combiner Gram matrix singular after {attempts} draws")]
    RankDeficientCombiner { attempts: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("network produced non-finite values")]
    NonFinite,
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    DivergedTraining { epoch: usize, loss: f64 },
    #[error("linear system is numerically singular")]
    SingularSystem,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("model file: {0}")]
    ModelFormat(String),
}

pub type Result<T> = std::result::Result<T, Error>;
