use replayroi_core::config::ConfigError;
use replayroi_core::estimator::EstimatorError;
use replayroi_core::history::HistoryError;
use replayroi_core::ledger::LedgerError;
use replayroi_core::session::SessionError;
use serde::Serialize;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;
pub const EXIT_BLOCKED: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("{0}")]
    Usage(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Internal(String),
}

/// Coarse classes shared by exit codes and HTTP statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    User,
    Internal,
    Blocked,
    Conflict,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io { context: context.into(), source }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            CliError::Session(SessionError::Blocked(_) | SessionError::AwaitingClassification(_)) => {
                ErrorClass::Blocked
            }
            CliError::Session(SessionError::Ledger(e)) | CliError::Ledger(e) => ledger_class(e),
            CliError::Internal(_) => ErrorClass::Internal,
            _ => ErrorClass::User,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::User | ErrorClass::Conflict => EXIT_USER,
            ErrorClass::Internal => EXIT_INTERNAL,
            ErrorClass::Blocked => EXIT_BLOCKED,
        }
    }

    /// Stable identifier for machine consumers.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config(_) => "invalid_config",
            CliError::Session(e) => match e {
                SessionError::Blocked(_) => "blocked",
                SessionError::AwaitingClassification(_) => "awaiting_classification",
                SessionError::IncompleteBaseline(_) => "incomplete_baseline",
                SessionError::WrongPhase { .. } | SessionError::ProjectLocked => "wrong_phase",
                SessionError::Ledger(_) => "ledger",
                _ => "session",
            },
            CliError::Estimator(EstimatorError::IncompleteBaseline(_)) => "incomplete_baseline",
            CliError::Estimator(EstimatorError::NotConverged { .. }) => "not_converged",
            CliError::Estimator(_) => "estimate",
            CliError::History(_) => "history",
            CliError::Ledger(_) => "ledger",
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Internal(_) => "internal",
        }
    }
}

fn ledger_class(e: &LedgerError) -> ErrorClass {
    match e {
        LedgerError::Locked(_) => ErrorClass::Conflict,
        LedgerError::Storage(_) => ErrorClass::Internal,
        _ => ErrorClass::User,
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub error: String,
    pub code: &'static str,
    pub class: ErrorClass,
}

impl From<&CliError> for ErrorBody {
    fn from(e: &CliError) -> Self {
        ErrorBody { error: e.to_string(), code: e.code(), class: e.class() }
    }
}
