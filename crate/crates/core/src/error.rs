//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // concept vocabulary
    #[error("build_vocabulary: duplicate concept ({crop}, {condition})")]
    DuplicateConcept { crop: String, condition: String },
    #[error("build_vocabulary: invalid concept: {0}")]
    InvalidConcept(String),
    #[error("render_caption: concept {crop}/{condition} has no description for long-context mode")]
    MissingDescription { crop: String, condition: String },

    // datasets
    #[error("dataset is empty: {0}")]
    EmptySpec(String),
    #[error("split_dataset: class {class_id} has {available} samples, need at least {required}")]
    InsufficientSamples {
        class_id: usize,
        available: usize,
        required: usize,
    },
    #[error("{}:{line}: parse error: {message}", path.display())]
    ParseError {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("load_manifest: sample {sample_id} references concept {concept_id} but K = {k}")]
    DanglingReference {
        sample_id: u64,
        concept_id: usize,
        k: usize,
    },

    // encoders
    #[error("encoder: invalid config: {0}")]
    InvalidConfig(String),
    #[error("{0}: non-finite input")]
    NonFiniteInput(&'static str),
    #[error("{0}: cannot l2-normalize a zero vector (row {1})")]
    NormalizationDegenerate(&'static str, usize),
    #[error("forward_text: sequence {0} contains only padding")]
    MeanOfEmptySet(usize),
    #[error("{op}: shape mismatch: {detail}")]
    ShapeError { op: &'static str, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    // soft targets and sampler
    #[error("build_soft_label_matrix: invalid smoothing alpha={alpha}, beta={beta}")]
    InvalidSmoothing { alpha: f64, beta: f64 },
    #[error("build_soft_label_matrix: class {0} appears twice in the batch")]
    DuplicateClassInBatch(usize),
    #[error("sample_batches: batch size {batch_size} exceeds {classes} distinct classes")]
    BatchTooLarge { batch_size: usize, classes: usize },

    // loss
    #[error("similarity_matrix: temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("soft_infonce: targets are not row-stochastic (row {row}: {detail})")]
    InvalidTargets { row: usize, detail: String },

    // optimisation
    #[error("adamw_step: non-finite gradient")]
    NonFiniteGradient,

    // evaluation
    #[error("zero_shot_classify: no classes")]
    EmptyClassSet,
    #[error("recall_at_k: empty set")]
    EmptySet,
    #[error("linear_probe: class {0} absent from the training pool")]
    MissingClass(usize),
    #[error("silhouette: needs at least two groups, got {0}")]
    UndefinedSilhouette(usize),

    // configuration
    #[error("config: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeError {
            op,
            detail: detail.into(),
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            Config(_) | InvalidConfig(_) | InvalidSmoothing { .. } | InvalidTemperature(_)
            | BatchTooLarge { .. } => 2,
            DuplicateConcept { .. }
            | InvalidConcept(_)
            | MissingDescription { .. }
            | EmptySpec(_)
            | InsufficientSamples { .. }
            | ParseError { .. }
            | DanglingReference { .. }
            | Checkpoint(_)
            | MeanOfEmptySet(_)
            | DuplicateClassInBatch(_)
            | EmptyClassSet
            | EmptySet
            | MissingClass(_)
            | UndefinedSilhouette(_)
            | Io { .. } => 3,
            NonFiniteInput(_)
            | NormalizationDegenerate(..)
            | ShapeError { .. }
            | InvalidTargets { .. }
            | NonFiniteGradient => 4,
        }
    }
}
