use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch at {layer}: expected {expected}, got {actual}")]
    DimensionMismatch {
        layer: String,
        expected: usize,
        actual: usize,
    },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("non-finite loss in batch {batch}{}", .epoch.map(|e| format!(" of epoch {e}")).unwrap_or_default())]
    NonFiniteLoss { epoch: Option<usize>, batch: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("column `{column}` has zero variance on the training split")]
    ZeroVariance { column: String },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-numeric value {value:?} at row {row}, column `{column}`")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("no penalty multiplier on record for dataset `{0}`; supply an explicit gamma")]
    UnknownDataset(String),

    #[error("calibration set of {n_cal} points is too small for alpha = {alpha}")]
    CalibrationTooSmall { n_cal: usize, alpha: f64 },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_len(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { left, right });
    }
    Ok(())
}

pub(crate) fn check_level(name: &str, value: f64) -> Result<()> {
    if !(value > 0.0 && value < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "{name} must lie in (0, 1), got {value}"
        )));
    }
    Ok(())
}
