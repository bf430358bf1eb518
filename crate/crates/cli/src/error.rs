use interval_markets::MarketError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    BadArgs(String),

    #[error("trade log {path} is corrupt: {reason}")]
    LogCorrupt { path: String, reason: String },

    #[error("{path} is locked by another process (remove {lock} if it is stale)")]
    Locked { path: String, lock: String },

    #[error("unsupported snapshot format_version {0}")]
    Format(u32),
}

/// Process exit codes.
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_ENGINE: i32 = 3;
pub const EXIT_IO: i32 = 4;

fn market_error_code(e: &MarketError) -> i32 {
    match e {
        MarketError::InvalidInterval { .. }
        | MarketError::NonFiniteShares(_)
        | MarketError::InvalidLiquidity(_)
        | MarketError::Config { .. }
        | MarketError::Parse { .. } => EXIT_VALIDATION,
        _ => EXIT_ENGINE,
    }
}

/// Exit code for an error bubbled up to `main`.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::BadArgs(_) => EXIT_VALIDATION,
                CliError::LogCorrupt { .. } | CliError::Locked { .. } | CliError::Format(_) => {
                    EXIT_IO
                }
            };
        }
        if let Some(e) = cause.downcast_ref::<MarketError>() {
            return market_error_code(e);
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_ENGINE
}
