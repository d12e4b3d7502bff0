use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("face {face} has index {index} out of range (mesh has {n_vertices} vertices)")]
    FaceIndexOutOfRange {
        face: usize,
        index: usize,
        n_vertices: usize,
    },
    #[error("face {0} repeats a vertex index")]
    DegenerateFace(usize),
    #[error("face index {index} out of range ({n_faces} faces)")]
    NoSuchFace { index: usize, n_faces: usize },
    #[error("inconsistent orientation at edge ({0}, {1})")]
    InconsistentOrientation(usize, usize),
    #[error("surface is not closed: edge ({0}, {1}) has a single adjacent face")]
    OpenSurface(usize, usize),
    #[error("edge ({0}, {1}) is shared by more than two faces")]
    NonManifoldEdge(usize, usize),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported mesh format: {0}")]
    UnsupportedFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("empty mesh")]
    EmptyMesh,
    #[error("matrix is not skew-symmetric (defect {0:e})")]
    NotSkewSymmetric(f64),
    #[error("control shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value at time step {step}")]
    NonFinite { step: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}
