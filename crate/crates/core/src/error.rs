use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("normal matrix is singular or not positive definite (ridge lambda = {lambda})")]
    Singular { lambda: f64 },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("point ({x}, {y}, {z}) is outside the mesh; nearest tet {nearest_tet} at distance {distance:.3e}")]
    OutsideMesh {
        x: f64,
        y: f64,
        z: f64,
        nearest_tet: usize,
        distance: f64,
    },

    #[error("eigensolver did not converge: {0}")]
    Convergence(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
