use std::path::PathBuf;

/// Errors raised by the multiscale solver and its experiment drivers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("coarse node ({0}, {1}) lies on the domain boundary and carries no basis")]
    BoundaryCoarseNode(usize, usize),

    #[error("invalid coefficient field: {0}")]
    InvalidField(String),

    #[error("field file {path}: {msg}")]
    FieldFile { path: PathBuf, msg: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular system in {context}")]
    Singular { context: String },

    #[error("generalized eigenproblem on neighborhood {nbhd} (slab {slab}) is singular; condition estimate {condition:.3e}")]
    SingularSpectral {
        nbhd: usize,
        slab: usize,
        condition: f64,
    },

    #[error("snapshot region has {size} degrees of freedom, above the cap of {cap}")]
    RegionTooLarge { size: usize, cap: usize },

    #[error("region {0} is not nested in the source region")]
    NotNested(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("the reference solution vanishes; relative errors are undefined")]
    ZeroReference,

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than numerical failure.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::InvalidGrid(_)
                | Error::InvalidParameter(_)
                | Error::InvalidField(_)
                | Error::FieldFile { .. }
                | Error::BoundaryCoarseNode(..)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
