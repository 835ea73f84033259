use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,
    #[error("no row observes every modality; the complete pattern is required")]
    MissingFullPattern,
    #[error("a pattern mask must observe at least one modality")]
    EmptyMask,
    #[error("mask width mismatch: expected {expected} modalities, got {found}")]
    MaskWidth { expected: usize, found: usize },
    #[error("at most {max} modalities are supported, got {found}")]
    TooManyModalities { max: usize, found: usize },
    #[error("invalid pattern string {0:?}")]
    InvalidMask(String),
    #[error("the complete pattern has no augmentation term")]
    FullPatternArgument,
    #[error("pattern {0} is not among the observed patterns")]
    UnknownPattern(String),
    #[error("invalid tuning parameters: {0}")]
    InvalidAlpha(String),

    #[error("row {row} does not observe modality {modality}")]
    MissingModality { row: u64, modality: String },
    #[error("jacobian is numerically singular (condition number {cond:.3e})")]
    SingularJacobian { cond: f64 },
    #[error("root finding did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("no predictor registered for pattern {0}")]
    MissingPredictor(String),
    #[error("predictor for pattern {pattern} cannot be evaluated on a row observing {observed}")]
    MaskMismatch { pattern: String, observed: String },
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("mixture weight q must lie in [0, 1], got {0}")]
    InvalidQ(f64),
    #[error("exact conditional moments unavailable: {0}")]
    NonGaussianSpec(String),
    #[error("predictor output has dimension {found}, expected {expected}")]
    PredictorDimension { expected: usize, found: usize },
    #[error("no prediction for row {0}")]
    MissingPrediction(u64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("estimator requires the outcome-mean target")]
    NotMeanTarget,
    #[error("no unlabeled rows available")]
    NoUnlabeledRows,
    #[error("need at least {needed} complete rows, found {found}")]
    InsufficientCompleteRows { needed: usize, found: usize },
    #[error("mean jacobian of the estimating function is singular")]
    SingularA,
    #[error("tuning matrix G is singular")]
    SingularG,
    #[error("quadratic program has no free variables")]
    DegenerateProgram,
    #[error("KKT system is singular")]
    SingularKKT,
    #[error("fold split degenerate: {0}")]
    FoldDegenerate(String),
    #[error("confidence level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("{failed} of {total} replications failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("row {row}: modality {modality} is only partially observed")]
    PartialBlock { row: u64, modality: String },
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("file has no data rows")]
    EmptyFile,
    #[error("{0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            InvalidConfig(_) | InvalidLevel(_) | InvalidQ(_) | InvalidAlpha(_) | NotMeanTarget
            | TooManyModalities { .. } | InvalidMask(_) | NonGaussianSpec(_) => ErrorClass::Config,
            SingularJacobian { .. }
            | NoConvergence { .. }
            | RankDeficient
            | SingularA
            | SingularG
            | DegenerateProgram
            | SingularKKT
            | NotPositiveDefinite(_)
            | TooManyFailures { .. } => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }

    /// Stable machine-readable identifier.
    pub fn kind(&self) -> &'static str {
        use Error::*;
        match self {
            EmptyInput => "EmptyInput",
            MissingFullPattern => "MissingFullPattern",
            EmptyMask => "EmptyMask",
            MaskWidth { .. } => "MaskWidth",
            TooManyModalities { .. } => "TooManyModalities",
            InvalidMask(_) => "InvalidMask",
            FullPatternArgument => "FullPatternArgument",
            UnknownPattern(_) => "UnknownPattern",
            InvalidAlpha(_) => "InvalidAlpha",
            MissingModality { .. } => "MissingModality",
            SingularJacobian { .. } => "SingularJacobian",
            NoConvergence { .. } => "NoConvergence",
            MissingPredictor(_) => "MissingPredictor",
            MaskMismatch { .. } => "MaskMismatch",
            RankDeficient => "RankDeficient",
            InvalidQ(_) => "InvalidQ",
            NonGaussianSpec(_) => "NonGaussianSpec",
            PredictorDimension { .. } => "PredictorDimension",
            MissingPrediction(_) => "MissingPrediction",
            InsufficientData(_) => "InsufficientData",
            NotMeanTarget => "NotMeanTarget",
            NoUnlabeledRows => "NoUnlabeledRows",
            InsufficientCompleteRows { .. } => "InsufficientCompleteRows",
            SingularA => "SingularA",
            SingularG => "SingularG",
            DegenerateProgram => "DegenerateProgram",
            SingularKKT => "SingularKKT",
            FoldDegenerate(_) => "FoldDegenerate",
            InvalidLevel(_) => "InvalidLevel",
            NotPositiveDefinite(_) => "NotPositiveDefinite",
            TooManyFailures { .. } => "TooManyFailures",
            InvalidConfig(_) => "InvalidConfig",
            PartialBlock { .. } => "PartialBlock",
            UnknownColumn(_) => "UnknownColumn",
            EmptyFile => "EmptyFile",
            Parse(_) => "Parse",
            Io(_) => "Io",
        }
    }
}
