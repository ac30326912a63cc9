use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("face {face} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        count: usize,
    },
    #[error("mesh has no vertices")]
    EmptyMesh,
    #[error("vertices {source_vertex} and {target} lie on disconnected mesh components")]
    Disconnected { source_vertex: usize, target: usize },
    #[error("mesh has zero total area")]
    ZeroArea,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("rotation is not orthonormal (deviation {0:e})")]
    NonOrthonormal(f64),
    #[error("dual quaternion is not unit (deviation {0:e})")]
    NonUnit(f64),
    #[error("degenerate dual-quaternion blend (real-part norm {0:e})")]
    DegenerateBlend(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite gradient in parameter group `{0}`")]
    NonFiniteGradient(&'static str),
    #[error("fit diverged at iteration {iteration}: loss {loss:e} exceeded 10x the initial {initial:e} for {steps} consecutive steps")]
    Diverged {
        iteration: usize,
        loss: f64,
        initial: f64,
        steps: usize,
    },
    #[error("bad file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
