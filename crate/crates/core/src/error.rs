use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not skew-symmetric (max symmetric part {0:e})")]
    NotSkewSymmetric(f64),

    #[error("arc length {s} m outside [0, {length}] m")]
    OutOfDomain { s: f64, length: f64 },

    #[error("invalid robot spec: {0}")]
    InvalidSpec(String),

    #[error("tendon {tendon} offset {offset} m does not clear backbone radius {radius} m at s = {s} m")]
    OffsetInsideBackbone {
        tendon: usize,
        s: f64,
        offset: f64,
        radius: f64,
    },

    #[error("non-positive stiffness at s = {s} m")]
    SingularStiffness { s: f64 },

    #[error("tendon {tendon} has a degenerate tangent at s = {s} m")]
    ZeroTangent { tendon: usize, s: f64 },

    #[error("strain-rate system is singular at s = {s} m (condition estimate {condition:e})")]
    SingularSystem { s: f64, condition: f64 },

    #[error("shooting did not converge after {iterations} iterations (best residual {residual:e})")]
    NoConvergence { residual: f64, iterations: usize },

    #[error("solution is not converged")]
    NotConverged,

    #[error("cost scan is not unimodal ({} samples)", scan.len())]
    NonUnimodal { scan: Vec<(f64, f64)> },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("degenerate point geometry: {0}")]
    DegenerateGeometry(String),

    #[error("{dropped} of {total} samples failed to converge")]
    TooManyDrops { dropped: usize, total: usize },

    #[error("spec not found: {}", .0.display())]
    SpecNotFound(std::path::PathBuf),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
