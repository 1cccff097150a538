use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {0} has (near-)zero norm")]
    ZeroNormRow(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("k = {k} exceeds corpus size {rows}")]
    KTooLarge { k: usize, rows: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("duplicate key `{0}`")]
    DuplicateKey(String),
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("index {index} out of range for space with {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },
    #[error("cost matrix contains a non-finite entry at ({0}, {1})")]
    NonFiniteCost(usize, usize),
    #[error("sinkhorn produced a non-finite plan")]
    NumericalOverflow,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("seed size {seed} exceeds total anchors {total}")]
    SeedExceedsTotal { seed: usize, total: usize },
    #[error("seed anchor set is empty")]
    EmptySeed,
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("gradient is not finite")]
    NonFiniteGradient,
    #[error("anchor sets differ in size: {0} vs {1}")]
    AnchorCountMismatch(usize, usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("class {0} has no examples")]
    MissingClass(usize),
    #[error("degenerate data: {0}")]
    DegenerateData(&'static str),
    #[error("parse error at line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("line {line}: expected {expected} components, found {found}")]
    DimInconsistent {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("vocabularies share no keys")]
    EmptyIntersection,
    #[error("need {needed} keys, only {available} available")]
    NotEnoughKeys { needed: usize, available: usize },
    #[error("artifact version {found} is not supported (this build reads {supported})")]
    VersionMismatch { found: String, supported: String },
    #[error("corrupt artifact: {0}")]
    CorruptArtifact(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short stable identifier, used for machine-parseable CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ZeroNormRow(_) => "ZeroNormRow",
            Error::DimMismatch { .. } => "DimMismatch",
            Error::KTooLarge { .. } => "KTooLarge",
            Error::Empty(_) => "Empty",
            Error::DuplicateKey(_) => "DuplicateKey",
            Error::MissingKey(_) => "MissingKey",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::NonFiniteCost(..) => "NonFiniteCost",
            Error::NumericalOverflow => "NumericalOverflow",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::SeedExceedsTotal { .. } => "SeedExceedsTotal",
            Error::EmptySeed => "EmptySeed",
            Error::NonFiniteLoss => "NonFiniteLoss",
            Error::NonFiniteGradient => "NonFiniteGradient",
            Error::AnchorCountMismatch(..) => "AnchorCountMismatch",
            Error::LengthMismatch(..) => "LengthMismatch",
            Error::MissingClass(_) => "MissingClass",
            Error::DegenerateData(_) => "DegenerateData",
            Error::ParseError { .. } => "ParseError",
            Error::DimInconsistent { .. } => "DimInconsistent",
            Error::EmptyIntersection => "EmptyIntersection",
            Error::NotEnoughKeys { .. } => "NotEnoughKeys",
            Error::VersionMismatch { .. } => "VersionMismatch",
            Error::CorruptArtifact(_) => "CorruptArtifact",
            Error::Io(_) => "Io",
            Error::Csv(_) => "Csv",
        }
    }
}
