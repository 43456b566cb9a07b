//! Crate-wide error type.
//!
//! Variants are grouped by the layer that raises them; [`Error::exit_code`]
//! maps them onto the CLI's exit-code contract (1 = usage/data problem,
//! 2 = numerical failure).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    // -- formula parsing --
    #[error("empty formula")]
    EmptyFormula,
    #[error("formula syntax error: {0}")]
    Syntax(String),
    #[error("more than one proxy binding (`||`) in formula")]
    DuplicateProxy,
    #[error("variable `{0}` appears more than once in formula")]
    DuplicateName(String),

    // -- data ingestion --
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad csv header: {0}")]
    Header(String),
    #[error("cannot parse `{value}` as a number (row {row}, column {column})")]
    Parse {
        value: String,
        row: usize,
        column: String,
    },
    #[error("row {row} has {found} cells, expected {expected}")]
    RaggedRows {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("column `{0}` required by the model is not in the dataset")]
    MissingColumn(String),
    #[error("surrogate column `{0}` has missing cells")]
    IncompleteSurrogate(String),
    #[error("column `{column}` has a missing cell at row {row}; only the latent column may be incomplete")]
    IncompleteCovariate { column: String, row: usize },
    #[error("column `{column}` must be binary (0/1) but row {row} holds {value}")]
    NonBinaryLatent {
        column: String,
        row: usize,
        value: f64,
    },
    #[error("no annotated rows: the latent column `{0}` is missing everywhere")]
    NoAnnotations(String),

    // -- numerics --
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("design matrix is rank deficient (rank {rank} of {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },
    #[error(
        "separation detected: |{term}| = {value:.1} exceeds 30; the logistic fit is unbounded"
    )]
    Separation { term: String, value: f64 },
    #[error("optimizer did not converge within {0} iterations")]
    NotConverged(usize),
    #[error("objective is not finite at the supplied starting point")]
    NonFiniteObjective,
    #[error("joint likelihood is not finite at row {row}")]
    NonFiniteLikelihood { row: usize },
    #[error("observed information matrix is singular (condition estimate {condition:.3e})")]
    SingularInformation { condition: f64 },
    #[error("annotated rows contain only one class of the latent variable")]
    OneClassAnnotated,

    // -- estimators --
    #[error("too few annotated rows ({found}) for the requested fit; need more than {needed}")]
    TooFewAnnotations { found: usize, needed: usize },
    #[error("confusion rate `{0}` has a zero denominator")]
    UndefinedRate(&'static str),
    #[error("{0}")]
    UnsupportedModel(String),
    #[error("imputation model could not be fit: {0}")]
    ImputationModelFailed(Box<Error>),

    // -- simulation / study --
    #[error("noise calibration failed: {0}")]
    CalibrationFailed(String),
    #[error("no records to summarize")]
    EmptyInput,
    #[error("bad study configuration: {0}")]
    BadConfig(String),

    // -- cli --
    #[error("{0}")]
    Usage(String),
}

impl Error {
    /// Short machine-greppable code, stable across releases.
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyFormula => "E_EMPTY_FORMULA",
            Error::Syntax(_) => "E_SYNTAX",
            Error::DuplicateProxy => "E_DUPLICATE_PROXY",
            Error::DuplicateName(_) => "E_DUPLICATE_NAME",
            Error::Io { .. } => "E_IO",
            Error::Header(_) => "E_HEADER",
            Error::Parse { .. } => "E_PARSE",
            Error::RaggedRows { .. } => "E_RAGGED_ROWS",
            Error::MissingColumn(_) => "E_MISSING_COLUMN",
            Error::IncompleteSurrogate(_) => "E_INCOMPLETE_SURROGATE",
            Error::IncompleteCovariate { .. } => "E_INCOMPLETE_COVARIATE",
            Error::NonBinaryLatent { .. } => "E_NON_BINARY",
            Error::NoAnnotations(_) => "E_NO_ANNOTATIONS",
            Error::NonPositiveSigma(_) => "E_NON_POSITIVE_SIGMA",
            Error::RankDeficient { .. } => "E_RANK_DEFICIENT",
            Error::Separation { .. } => "E_SEPARATION",
            Error::NotConverged(_) => "E_NOT_CONVERGED",
            Error::NonFiniteObjective => "E_NON_FINITE_OBJECTIVE",
            Error::NonFiniteLikelihood { .. } => "E_NON_FINITE_LIKELIHOOD",
            Error::SingularInformation { .. } => "E_SINGULAR_INFORMATION",
            Error::OneClassAnnotated => "E_ONE_CLASS_ANNOTATED",
            Error::TooFewAnnotations { .. } => "E_TOO_FEW_ANNOTATIONS",
            Error::UndefinedRate(_) => "E_UNDEFINED_RATE",
            Error::UnsupportedModel(_) => "E_UNSUPPORTED_MODEL",
            Error::ImputationModelFailed(_) => "E_IMPUTATION_FAILED",
            Error::CalibrationFailed(_) => "E_CALIBRATION_FAILED",
            Error::EmptyInput => "E_EMPTY_INPUT",
            Error::BadConfig(_) => "E_BAD_CONFIG",
            Error::Usage(_) => "E_USAGE",
        }
    }

    /// CLI exit code: 1 for usage/data problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonPositiveSigma(_)
            | Error::RankDeficient { .. }
            | Error::Separation { .. }
            | Error::NotConverged(_)
            | Error::NonFiniteObjective
            | Error::NonFiniteLikelihood { .. }
            | Error::SingularInformation { .. }
            | Error::OneClassAnnotated
            | Error::UndefinedRate(_)
            | Error::ImputationModelFailed(_)
            | Error::CalibrationFailed(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
