use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no samples")]
    NoSamples,

    #[error("covariance needs ≥2 samples (got {0})")]
    TooFewForCovariance(usize),

    #[error("insufficient draws for {stats} statistics: need at least {needed}, got {got}")]
    InsufficientDraws {
        stats: usize,
        needed: usize,
        got: usize,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("singular statistic covariance (condition estimate {condition:.3e})")]
    SingularCovariance { condition: f64 },

    #[error("rank deficient; supply ridge_lambda (condition number {condition:.3e})")]
    RankDeficient { condition: f64 },

    #[error("statistic columns are all constant")]
    ConstantStatistics,

    #[error("expansion overflow in monomial {0}")]
    BasisOverflow(String),

    #[error("truncation region too small for prior (acceptance rate {rate:.2e})")]
    TruncationTooSmall { rate: f64 },

    #[error("no draws accepted at epsilon {epsilon}; minimum observed distance {min_distance}")]
    NoAcceptance { epsilon: f64, min_distance: f64 },

    #[error("resample joint first: marginal remap needs uniform weights")]
    NonUniformWeights,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("missing artifact {0}")]
    MissingArtifact(String),

    #[error("provenance mismatch: {0}")]
    ProvenanceMismatch(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed artifact {path}: {message}")]
    Artifact { path: String, message: String },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for failures caused by the numbers themselves (singular moments,
    /// rank deficiency, overflow, empty acceptance) rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::SingularCovariance { .. }
            | Error::RankDeficient { .. }
            | Error::ConstantStatistics
            | Error::BasisOverflow(_)
            | Error::TruncationTooSmall { .. }
            | Error::NoAcceptance { .. }
            | Error::NonFinite(_) => true,
            Error::Stage { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
