use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    // dump format
    #[error("bad magic bytes: expected \"SLDUMP01\"")]
    BadMagic,
    #[error("truncated payload: {0}")]
    Truncated(String),
    #[error("unsupported dtype code {0} (only 0 = float32 is supported)")]
    UnsupportedDtype(u32),
    #[error("non-finite activation at layer {layer}, token {token}, dim {dim}")]
    NonFinite {
        layer: usize,
        token: usize,
        dim: usize,
    },
    #[error("token {0} is not valid UTF-8")]
    InvalidUtf8(usize),
    #[error("invalid metadata: {0}")]
    InvalidMetadata(String),
    #[error("{0} trailing bytes after metadata")]
    TrailingBytes(usize),
    #[error("invalid dump shape: {0}")]
    Shape(String),
    #[error("layer {layer} out of range (dump has {num_snapshots} snapshots)")]
    LayerOutOfRange { layer: usize, num_snapshots: usize },

    // trees and scores
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("non-finite input value")]
    NonFiniteInput,
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("no spanning arborescence reaches node {0} from the root")]
    Unreachable(usize),
    #[error("malformed S-expression at byte {pos}: {msg}")]
    SExpr { pos: usize, msg: String },
    #[error("zero-norm row at token {0}")]
    ZeroNorm(usize),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("too few tokens: need at least {needed}, got {got}")]
    TooFewTokens { needed: usize, got: usize },
    #[error("node count mismatch: {0} vs {1}")]
    NodeCountMismatch(usize, usize),
    #[error("matrix mismatch: {0}")]
    MatrixMismatch(String),

    // clustering, mining, pruning
    #[error("invalid cluster request: {0}")]
    InvalidClusterRequest(String),
    #[error("node {0} has zero degree in the affinity graph")]
    ZeroDegree(usize),
    #[error("invalid member set: {0}")]
    InvalidMembers(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
