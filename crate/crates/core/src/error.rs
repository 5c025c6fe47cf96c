use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}:{line}: malformed record: {message}", path.display())]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate conversation id {0:?}")]
    DuplicateConversation(String),

    #[error("invalid conversation {conv_id:?}: {message}")]
    InvalidConversation { conv_id: String, message: String },

    #[error("turn index {index} out of range for conversation {conv_id:?} ({len} turns)")]
    TurnOutOfRange {
        conv_id: String,
        index: usize,
        len: usize,
    },

    #[error("turn {turn_id} of conversation {conv_id:?} has no gold passage")]
    NoGoldPassage { conv_id: String, turn_id: u32 },

    #[error("turn {turn_id} of conversation {conv_id:?} has no earlier evaluable turn")]
    NoPreviousEvaluableTurn { conv_id: String, turn_id: u32 },

    #[error("unknown passage id {0:?}")]
    UnknownPassage(String),

    #[error("duplicate passage id {0:?}")]
    DuplicatePassage(String),

    #[error("invalid passage {passage_id:?}: {message}")]
    InvalidPassage { passage_id: String, message: String },

    #[error("cannot build an index over an empty corpus")]
    EmptyCorpus,

    #[error("invalid BM25 parameters: {0}")]
    InvalidParams(String),

    #[error("gold passage list is empty")]
    EmptyGoldIds,

    #[error("index file: {0}")]
    IndexFormat(String),

    #[error("no candidates could be parsed from response{}: {raw:?}", context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    ParseEmpty { raw: String, context: Option<String> },

    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("could not parse judge verdict from {raw:?}")]
    JudgeParse { raw: String },

    #[error("replay transcript has no response for request {0}")]
    ReplayMiss(String),

    #[error("candidate references unknown turn {turn_id} of conversation {conv_id:?}")]
    UnknownTurn { conv_id: String, turn_id: u32 },

    #[error("record list for a turn is empty")]
    EmptyRecords,

    #[error("qrels are empty")]
    EmptyQrels,

    #[error("no turn class for queries: {}", .0.join(", "))]
    MissingClass(Vec<String>),

    #[error("{}:{line}: {message}", path.display())]
    RunFormat {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("invalid training config: {0}")]
    InvalidTrainConfig(String),

    #[error("config error at {field}: {message}")]
    Config { field: String, message: String },

    #[error("missing artifact {artifact}: run `{stage}` first")]
    MissingArtifact { artifact: String, stage: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// Stable machine-readable name, used in the CLI's JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MalformedRecord { .. } => "malformed_record",
            Error::DuplicateConversation(_) => "duplicate_conversation",
            Error::InvalidConversation { .. } => "invalid_conversation",
            Error::TurnOutOfRange { .. } => "turn_out_of_range",
            Error::NoGoldPassage { .. } => "no_gold_passage",
            Error::NoPreviousEvaluableTurn { .. } => "no_previous_evaluable_turn",
            Error::UnknownPassage(_) => "unknown_passage",
            Error::DuplicatePassage(_) => "duplicate_passage",
            Error::InvalidPassage { .. } => "invalid_passage",
            Error::EmptyCorpus => "empty_corpus",
            Error::InvalidParams(_) => "invalid_params",
            Error::EmptyGoldIds => "empty_gold_ids",
            Error::IndexFormat(_) => "index_format",
            Error::ParseEmpty { .. } => "parse_empty",
            Error::Transport { .. } => "transport",
            Error::JudgeParse { .. } => "judge_parse",
            Error::ReplayMiss(_) => "replay_miss",
            Error::UnknownTurn { .. } => "unknown_turn",
            Error::EmptyRecords => "empty_records",
            Error::EmptyQrels => "empty_qrels",
            Error::MissingClass(_) => "missing_class",
            Error::RunFormat { .. } => "run_format",
            Error::EmptyDataset => "empty_dataset",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::InvalidTrainConfig(_) => "invalid_train_config",
            Error::Config { .. } => "config",
            Error::MissingArtifact { .. } => "missing_artifact",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
