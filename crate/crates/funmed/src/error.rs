use thiserror::Error;

/// Errors produced by dataset construction, model fitting, and the
/// simulation harness.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("evaluation time {time} outside [{t_min}, {t_max}]")]
    TimeOutOfRange { time: f64, t_min: f64, t_max: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{quantity} is not identifiable: {reason}")]
    Unidentifiable { quantity: String, reason: String },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error(
        "{failed} of {total} bootstrap replicates failed to fit; \
         consider a larger sample or a looser model"
    )]
    BootstrapFailures { failed: usize, total: usize },

    #[error("missing column '{0}' in input header")]
    MissingColumn(String),

    #[error("row {row}, column '{column}': {message}")]
    BadField {
        row: usize,
        column: String,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Wraps an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad user input rather than a failed fit.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::InvalidInput(_)
            | Error::TimeOutOfRange { .. }
            | Error::DimensionMismatch(_)
            | Error::Unidentifiable { .. }
            | Error::MissingColumn(_)
            | Error::BadField { .. }
            | Error::Io(_)
            | Error::Csv(_) => true,
            Error::Stage { source, .. } => source.is_input_error(),
            Error::FitFailure(_) | Error::BootstrapFailures { .. } => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
