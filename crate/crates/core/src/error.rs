use std::io;

use thiserror::Error;

/// Errors raised by studies, trials and storage backends.
#[derive(Debug, Error)]
pub enum Error {
    #[error("value {value} is outside the domain of {distribution}")]
    Domain { distribution: String, value: String },

    #[error("parameter {name:?} was already suggested with {existing}, got {requested}")]
    DistributionMismatch {
        name: String,
        existing: String,
        requested: String,
    },

    #[error("step {step} was already reported for trial {trial_id}")]
    DuplicateStep { trial_id: u64, step: u64 },

    #[error("parameter {name:?} is already set on trial {trial_id}")]
    DuplicateParam { trial_id: u64, name: String },

    #[error("trial {trial_id} cannot move from {from} to {to}")]
    IllegalTransition {
        trial_id: u64,
        from: &'static str,
        to: &'static str,
    },

    #[error("trial {0} is not running")]
    TrialNotRunning(u64),

    #[error("study has no completed trials")]
    NoCompletedTrials,

    #[error("preset does not contain parameter {0:?}")]
    MissingPresetParam(String),

    #[error("trial {trial_id} has no intermediate value at step {step}")]
    MissingIntermediate { trial_id: u64, step: u64 },

    #[error("a study named {0:?} already exists")]
    DuplicateStudy(String),

    #[error("unknown study {0}")]
    UnknownStudy(String),

    #[error("unknown trial {0}")]
    UnknownTrial(u64),

    #[error("invalid {what}: {message}")]
    Parse { what: &'static str, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("corrupt journal at line {line}: {message}")]
    CorruptJournal { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn parse(what: &'static str, message: impl Into<String>) -> Self {
        Error::Parse {
            what,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
