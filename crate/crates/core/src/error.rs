use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("class code {code} is not in nomenclature {nomenclature}")]
    UnknownCode { code: u8, nomenclature: String },
    #[error("nomenclature mismatch: expected {expected}, found {found}")]
    NomenclatureMismatch { expected: String, found: String },
    #[error("invalid nomenclature: {0}")]
    InvalidNomenclature(String),
    #[error("non-finite intensity at index {0}")]
    NonFinite(usize),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("invalid tile spec: {0}")]
    InvalidTileSpec(String),
    #[error("tile of {tile} px cannot be padded from a raster dimension of {dim} px")]
    TileLargerThanRaster { tile: usize, dim: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing output head `{0}`")]
    MissingHead(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
