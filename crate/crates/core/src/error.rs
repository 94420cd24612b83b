use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid has no positive entry")]
    AllZero,
    #[error("grid entry {index} is negative ({value})")]
    NegativeEntry { index: usize, value: f64 },
    #[error("grid entry {index} is not finite")]
    NonFinite { index: usize },
    #[error("invalid grid dimensions {width}x{height}")]
    BadShape { width: usize, height: usize },
    #[error("coefficient {0} outside [0, 1]")]
    BadCoefficient(f64),
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: String, right: String },
    #[error("sample count must be at least 1")]
    ZeroCount,
    #[error("fixation set is empty")]
    EmptyFixations,
    #[error("fixation ({col}, {row}) outside {width}x{height} grid")]
    OutOfBounds {
        col: usize,
        row: usize,
        width: usize,
        height: usize,
    },
    #[error("need at least {needed} observers, got {got}")]
    TooFewObservers { needed: usize, got: usize },
    #[error("map has zero variance")]
    ZeroVariance,
    #[error("every cell is fixated; ROC has no negatives")]
    NoNegatives,
    #[error("discrepancy {0} needs fixations but none were given")]
    MissingFixations(String),
    #[error("need at least 2 realizations, got {0}")]
    TooFewRealizations(usize),
    #[error("frame {frame_id}: cached stats use discrepancy {cached}, expected {expected}")]
    StatsDiscrepancyMismatch {
        frame_id: u64,
        cached: String,
        expected: String,
    },
    #[error("discrepancy {0} is not differentiable")]
    NonDifferentiable(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("frame {0}: noise statistics missing")]
    MissingStats(u64),
    #[error("frame {0}: ground truth missing")]
    MissingTruth(u64),
    #[error("mixture specification has no components")]
    EmptySpec,
    #[error("curve needs at least 2 points")]
    TooShort,
    #[error("frame id mismatch: {0}")]
    IdMismatch(String),
    #[error("frame {frame_id}: invariant violated: {reason}")]
    InvariantViolation { frame_id: u64, reason: String },
    #[error("unknown discrepancy '{0}'")]
    UnknownDiscrepancy(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
