use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at layer {layer}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        layer: usize,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapesDiffer { left: Vec<usize>, right: Vec<usize> },

    #[error("invalid tensor: shape {shape:?} needs {expected} values, got {found}")]
    BadTensor {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },

    #[error("activation trace does not belong to this network (stale or foreign trace)")]
    StaleTrace,

    #[error("layer {index} ({kind}) has no parameters")]
    NotParameterized { index: usize, kind: &'static str },

    #[error("layer index {index} out of range for network with {layers} layers")]
    LayerOutOfRange { index: usize, layers: usize },

    #[error("unsupported layer {index} ({kind}) for {context}")]
    UnsupportedLayer {
        index: usize,
        kind: &'static str,
        context: String,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("bad magic in {what}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { what: String, expected: u32, found: u32 },

    #[error("unsupported {what} version {found} (this build reads version {supported})")]
    UnsupportedVersion { what: String, found: u32, supported: u32 },

    #[error("truncated {what}: expected {expected} bytes, found {actual}")]
    Truncated {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("example {index} has no object mask")]
    MissingMask { index: usize },

    #[error("dataset has a single class; no different label exists")]
    SingleClass,

    #[error("singular regression system in {0}")]
    SingularRegression(String),

    #[error("degenerate perturbation samples in {0}: every sample is identical")]
    DegenerateSamples(String),

    #[error("vanishing LRP denominator at layer {layer} with nonzero relevance")]
    VanishingDenominator { layer: usize },

    #[error("bug kind {kind} does not belong to category {category}")]
    CategoryMismatch { kind: String, category: String },

    #[error("pipeline is missing a {0}")]
    MissingComponent(String),

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {what}: {message}")]
    Parse { what: String, message: String },
}

impl Error {
    /// Short, stable identifier used in machine-readable error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } | Error::ShapesDiffer { .. } => "shape_mismatch",
            Error::BadTensor { .. } => "bad_tensor",
            Error::NonFinite(_) => "non_finite",
            Error::ClassOutOfRange { .. } => "class_out_of_range",
            Error::StaleTrace => "stale_trace",
            Error::NotParameterized { .. } => "not_parameterized",
            Error::LayerOutOfRange { .. } => "layer_out_of_range",
            Error::UnsupportedLayer { .. } => "unsupported_layer",
            Error::EmptyDataset => "empty_dataset",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::InvalidConfig(_) => "invalid_config",
            Error::BadMagic { .. } => "bad_magic",
            Error::UnsupportedVersion { .. } => "unsupported_version",
            Error::Truncated { .. } => "truncated",
            Error::CountMismatch { .. } => "count_mismatch",
            Error::MissingMask { .. } => "missing_mask",
            Error::SingleClass => "single_class",
            Error::SingularRegression(_) => "singular_regression",
            Error::DegenerateSamples(_) => "degenerate_samples",
            Error::VanishingDenominator { .. } => "vanishing_denominator",
            Error::CategoryMismatch { .. } => "category_mismatch",
            Error::MissingComponent(_) => "missing_component",
            Error::Undefined(_) => "undefined",
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
