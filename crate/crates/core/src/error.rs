use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("slot {slot}: {present} coordinates present and {missing} missing; a hand is either fully present or fully absent")]
    MixedMissingness { slot: usize, present: usize, missing: usize },

    #[error("motion class {0} out of range 0..=9")]
    LabelOutOfRange(i64),

    #[error("{field} = {value} outside [0, 1]")]
    ScoreOutOfRange { field: &'static str, value: f64 },

    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },

    #[error("frame index {next} follows {prev} (line {line}); indices must strictly increase")]
    NonMonotonicFrameIndex { line: u64, prev: u64, next: u64 },

    #[error("label table is empty")]
    EmptyTable,

    #[error("frame {frame} precedes the first labeled frame {first_start}")]
    UnlabeledPrefix { frame: u64, first_start: u64 },

    #[error("target rate {target} fps does not divide source rate {source_fps} fps")]
    NonDivisorRate { source_fps: u32, target: u32 },

    #[error("video {0} has no frames")]
    EmptyVideo(String),

    #[error("stream has {len} frames, window needs {window}")]
    StreamTooShort { len: usize, window: usize },

    #[error("window covers {seconds:.3} s of history, budget is {budget:.3} s")]
    HistoryBudgetExceeded { seconds: f64, budget: f64 },

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("training set is empty")]
    EmptyTrainSet,

    #[error("container format version {found} is not supported (this build reads {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("corrupt model container: {0}")]
    CorruptContainer(String),

    #[error("unsatisfiable search constraints: {0}")]
    UnsatisfiableConstraints(String),

    #[error("no successful trials to narrow the space with")]
    NoSuccessfulTrials,

    #[error("trial failed: {0}")]
    TrialFailed(String),

    #[error("sequence lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("smoothing window must be odd and >= 1, got {0}")]
    EvenWindow(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable identifier, used as the machine-readable error prefix.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MixedMissingness { .. } => "mixed_missingness",
            Error::LabelOutOfRange(_) => "label_out_of_range",
            Error::ScoreOutOfRange { .. } => "score_out_of_range",
            Error::MalformedRow { .. } => "malformed_row",
            Error::NonMonotonicFrameIndex { .. } => "non_monotonic_frame_index",
            Error::EmptyTable => "empty_table",
            Error::UnlabeledPrefix { .. } => "unlabeled_prefix",
            Error::NonDivisorRate { .. } => "non_divisor_rate",
            Error::EmptyVideo(_) => "empty_video",
            Error::StreamTooShort { .. } => "stream_too_short",
            Error::HistoryBudgetExceeded { .. } => "history_budget_exceeded",
            Error::InvalidSpec(_) => "invalid_spec",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::EmptyTrainSet => "empty_train_set",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::CorruptContainer(_) => "corrupt_container",
            Error::UnsatisfiableConstraints(_) => "unsatisfiable_constraints",
            Error::NoSuccessfulTrials => "no_successful_trials",
            Error::TrialFailed(_) => "trial_failed",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::EvenWindow(_) => "even_window",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// Whether the error stems from bad user input (files, configs, flags)
    /// rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::MixedMissingness { .. }
                | Error::LabelOutOfRange(_)
                | Error::ScoreOutOfRange { .. }
                | Error::MalformedRow { .. }
                | Error::NonMonotonicFrameIndex { .. }
                | Error::EmptyTable
                | Error::UnlabeledPrefix { .. }
                | Error::NonDivisorRate { .. }
                | Error::InvalidSpec(_)
                | Error::VersionMismatch { .. }
                | Error::CorruptContainer(_)
                | Error::InvalidConfig(_)
                | Error::EvenWindow(_)
                | Error::HistoryBudgetExceeded { .. }
                | Error::UnsatisfiableConstraints(_)
        )
    }
}
