use std::path::{Path, PathBuf};

use crate::store::RunStatus;

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] vidi_core::Error),
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error("run {0} not found")]
    RunNotFound(String),
    #[error("cluster {cluster} not found in run {run_id}")]
    ClusterNotFound { run_id: String, cluster: usize },
    #[error("invalid label: {0}")]
    InvalidLabel(String),
    #[error("run {run_id} is {status:?}, expected complete")]
    RunNotComplete { run_id: String, status: RunStatus },
    #[error("asset {0} not found")]
    AssetNotFound(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
}

impl ServiceError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ServiceError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Short machine-readable kind, used in error reports and API bodies.
    pub fn kind(&self) -> &'static str {
        use vidi_core::Error as E;
        match self {
            ServiceError::Core(e) => match e {
                E::Io { .. } => "Io",
                E::ManifestParse(_) => "ManifestParse",
                E::ShapeMismatch(_) => "ShapeMismatch",
                E::BlobSizeMismatch { .. } => "BlobSizeMismatch",
                E::ClassIndexOutOfRange { .. } => "ClassIndexOutOfRange",
                E::NonFiniteActivation { .. } => "NonFiniteActivation",
                E::EmptyBaselineSet => "EmptyBaselineSet",
                E::MissingAttribution { .. } => "MissingAttribution",
                E::InconsistentShapes(_) => "InconsistentShapes",
                E::KTooLarge { .. } => "KTooLarge",
                E::EmptyInput(_) => "EmptyInput",
                E::DimensionMismatch { .. } => "DimensionMismatch",
                E::LengthMismatch { .. } => "LengthMismatch",
                E::UnknownLabel(_) => "UnknownLabel",
                E::Domain(_) => "DomainError",
                E::DuplicateId(_) => "DuplicateId",
                E::ScoreOutOfRange(_) => "ScoreOutOfRange",
                E::MissingScore(_) => "MissingScore",
                E::UnexpectedScore(_) => "UnexpectedScore",
                E::LabelScoreMismatch { .. } => "LabelScoreMismatch",
                E::Decode(_) => "Decode",
                E::ZeroSizedImage => "ZeroSizedImage",
                E::EmptyClass(_) => "EmptyClass",
                E::Encode(_) => "Encode",
            },
            ServiceError::InvalidConfig(_) => "InvalidConfig",
            ServiceError::RunNotFound(_) => "RunNotFound",
            ServiceError::ClusterNotFound { .. } => "ClusterNotFound",
            ServiceError::InvalidLabel(_) => "InvalidLabel",
            ServiceError::RunNotComplete { .. } => "RunNotComplete",
            ServiceError::AssetNotFound(_) => "AssetNotFound",
            ServiceError::Io { .. } => "Io",
            ServiceError::Json { .. } => "Json",
        }
    }
}
