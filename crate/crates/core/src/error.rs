use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("infeasible angle: {0}")]
    Infeasible(String),
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("layer is not circumscribed about a ball (residual {residual:.3e}); out of scope")]
    NotInscribed { residual: f64 },
    #[error("mesh: {0}")]
    Mesh(String),
    #[error("grid: {0}")]
    Grid(String),
    #[error("assembly: {0}")]
    Assembly(String),
    #[error("eigensolver did not converge: {0}")]
    NotConverged(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
