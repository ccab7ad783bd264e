use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse manifest: {0}")]
    ManifestParse(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("weight blob holds {actual} bytes, manifest declares {expected}")]
    BlobSizeMismatch { expected: usize, actual: usize },
    #[error("class index {index} out of range for {classes} classes")]
    ClassIndexOutOfRange { index: usize, classes: usize },
    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },
    #[error("baseline set is empty")]
    EmptyBaselineSet,
    #[error("missing attribution for image {image_id}, class {class}")]
    MissingAttribution { image_id: String, class: String },
    #[error("inconsistent shapes: {0}")]
    InconsistentShapes(String),
    #[error("k = {k} exceeds the {available} distinct points available")]
    KTooLarge { k: usize, available: usize },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("value outside its domain: {0}")]
    Domain(String),
    #[error("duplicate image id {0:?}")]
    DuplicateId(String),
    #[error("severity score {0} outside [0, 6]")]
    ScoreOutOfRange(f64),
    #[error("record {0:?} has no severity score")]
    MissingScore(String),
    #[error("record {0:?} carries a severity score outside the severity scenario")]
    UnexpectedScore(String),
    #[error("record {image_id:?} labelled {label:?} but its score bins to {binned:?}")]
    LabelScoreMismatch {
        image_id: String,
        label: String,
        binned: String,
    },
    #[error("failed to decode image: {0}")]
    Decode(String),
    #[error("image has zero width or height")]
    ZeroSizedImage,
    #[error("class {0:?} has no records")]
    EmptyClass(String),
    #[error("failed to encode image: {0}")]
    Encode(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
