use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dims: {0}")]
    InvalidDims(String),

    #[error("{p} has fewer than {d} prime factors, cannot split into {d} factors >= 2")]
    TooFewFactors { p: usize, d: usize },

    #[error("rank {rank} out of range for size {size}")]
    RankOutOfRange { rank: usize, size: usize },

    #[error("coordinate {value} out of range in dimension {dim} of order {order}")]
    CoordOutOfRange { dim: usize, value: usize, order: usize },

    #[error("dimension index {index} out of range for {d} dimensions")]
    DimOutOfRange { index: usize, d: usize },

    #[error("unit {unit} out of range, layout has {count} units")]
    UnitOutOfRange { unit: usize, count: usize },

    #[error("group size {actual} does not match expected {expected}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("region of {actual} bytes too small, {needed} bytes required")]
    RegionTooSmall { needed: usize, actual: usize },

    #[error("send and receive regions overlap")]
    Overlap,

    #[error("block specs differ between send and receive regions")]
    BlockMismatch,

    #[error("layout mismatch across group members (member {rank} disagrees)")]
    LayoutMismatch { rank: usize },

    #[error("transport failure with peer {peer}: {msg}")]
    Transport { peer: usize, msg: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
