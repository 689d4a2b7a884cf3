use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("empty file: {0}")]
    EmptyFile(PathBuf),

    #[error("label column `{0}` not found in header")]
    MissingLabelColumn(String),

    #[error("label column has a single class `{0}`; at least two are required")]
    SingleClass(String),

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("column count mismatch: expected {expected}, found {found}")]
    ColumnMismatch { expected: usize, found: usize },

    #[error("unknown label value `{0}`")]
    UnknownLabel(String),

    #[error("class `{class}` has {count} rows, fewer than the {buckets} split buckets")]
    ClassTooSmall {
        class: String,
        count: usize,
        buckets: usize,
    },

    #[error("invalid split fractions {0:?}: must be positive and sum to 1")]
    InvalidFractions((f64, f64, f64)),

    #[error("need at least 2 rows, found {0}")]
    TooFewRows(usize),

    #[error("embedding file: bad magic")]
    BadMagic,

    #[error("embedding file: unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error(
        "embedding file truncated: header declares {expected} payload bytes, file holds {found}"
    )]
    Truncated { expected: u64, found: u64 },

    #[error("embedding dimension must be positive, got {0}")]
    InvalidDim(u64),

    #[error("duplicate row_id {0}")]
    DuplicateRowId(u64),

    #[error("no embedding for row_id {0}")]
    MissingEmbedding(u64),

    #[error("embedding for row_id {row_id} has length {found}, store dim is {expected}")]
    EmbeddingDim {
        row_id: u64,
        expected: usize,
        found: usize,
    },

    #[error("refusing to write an empty embedding store")]
    EmptyStore,

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("labels contain a single class; AUC is undefined")]
    AucSingleClass,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("seed {seed}: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Stable snake_case code for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::EmptyFile(_) => "empty_file",
            Error::MissingLabelColumn(_) => "missing_label_column",
            Error::SingleClass(_) => "single_class",
            Error::InvalidSchema(_) => "invalid_schema",
            Error::ColumnMismatch { .. } => "column_mismatch",
            Error::UnknownLabel(_) => "unknown_label",
            Error::ClassTooSmall { .. } => "class_too_small",
            Error::InvalidFractions(_) => "invalid_fractions",
            Error::TooFewRows(_) => "too_few_rows",
            Error::BadMagic => "bad_magic",
            Error::UnsupportedVersion(_) => "unsupported_version",
            Error::Truncated { .. } => "truncated",
            Error::InvalidDim(_) => "invalid_dim",
            Error::DuplicateRowId(_) => "duplicate_row_id",
            Error::MissingEmbedding(_) => "missing_embedding",
            Error::EmbeddingDim { .. } => "embedding_dim",
            Error::EmptyStore => "empty_store",
            Error::Shape { .. } => "shape",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::AucSingleClass => "auc_single_class",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Checkpoint(_) => "checkpoint",
            Error::Seed { source, .. } => source.kind(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
