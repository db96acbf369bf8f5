use crate::algebra::SkewParam;
use crate::mesh::MeshError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Mesh(#[from] MeshError),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("field has {found} dofs but the mesh needs {expected}")]
    MeshMismatch { expected: usize, found: usize },

    #[error("no load rule for boundary tag `{0}`")]
    MissingTag(String),

    #[error("loads are not equilibrated (force residual {force_residual:.3e}, torque residual {torque_residual:.3e})")]
    NotEquilibrated {
        force_residual: f64,
        torque_residual: f64,
    },

    #[error("iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error(
        "loads are incompatible: L(W^2 x / 2) = {witness_gap:.6e} > 0 for witness {witness:?}, \
         so inf F = -inf"
    )]
    IncompatibleLoads {
        witness: SkewParam,
        witness_gap: f64,
    },

    #[error("displacement is not orientation preserving (min det(I + h grad v) = {min_det:.3e})")]
    Inadmissible { min_det: f64 },

    #[error("{0}")]
    Refused(String),
}
