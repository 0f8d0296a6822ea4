use std::path::PathBuf;

/// Every failure the toolkit can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("wave vector {k:?} is incompatible with the domain: {reason}")]
    IncompatibleWave { k: Vec<i64>, reason: String },
    #[error("derivative order {order} exceeds the supported maximum {max}")]
    DerivativeOrder { order: usize, max: usize },
    #[error("magnetic flux is nonzero: component ({j},{k}) has mean {mean:e}")]
    NonzeroFlux { j: usize, k: usize, mean: f64 },
    #[error("magnetic field is not closed (dB != 0), defect {0:e}")]
    NotClosed(f64),
    #[error("unsupported order {order}: {what}")]
    UnsupportedOrder { order: usize, what: String },
    #[error("grid of {n} points per axis cannot represent wave number {k}")]
    Aliasing { n: usize, k: i64 },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("dense dimension {dim} exceeds the cap {cap}")]
    DenseCap { dim: usize, cap: usize },
    #[error("matrix is not Hermitian: max |M - M*| = {0:e}")]
    NotHermitian(f64),
    #[error("eigensolver did not converge: {0}")]
    NoConvergence(String),
    #[error("eigenvectors were not computed for this window")]
    NoEigenvectors,
    #[error("singular shifted system at {0}")]
    Singular(String),
    #[error("resolution certificate failed: {0}")]
    Resolution(String),
    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),
    #[error("integrand support is unbounded")]
    UnboundedSupport,
    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error("io error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn at_stage(self, stage: &str) -> Error {
        Error::Stage { stage: stage.to_string(), source: Box::new(self) }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Error {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Error {
        Error::Config { path: path.into(), msg: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
