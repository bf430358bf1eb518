use thiserror::Error;

/// Errors raised by the market engines and their supporting types.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarketError {
    #[error("invalid interval [{lo}, {hi}): lower endpoint must be strictly below the upper one")]
    InvalidInterval { lo: String, hi: String },

    #[error("endpoint {endpoint} has precision {precision}, exceeding the market precision {max}")]
    EndpointTooFine {
        endpoint: String,
        precision: u32,
        max: u32,
    },

    #[error("endpoint {endpoint} has precision {precision}, deeper than the {levels} levels of the liquidity schedule")]
    PrecisionExceedsSchedule {
        endpoint: String,
        precision: u32,
        levels: u32,
    },

    #[error("share quantity {0} is not finite")]
    NonFiniteShares(f64),

    #[error("invalid liquidity: {0}")]
    InvalidLiquidity(String),

    #[error("level {level} is outside the schedule (0..={max})")]
    LevelOutOfRange { level: u32, max: u32 },

    #[error("degenerate price at level {level}: probability mass vanished numerically")]
    DegeneratePrice { level: u32 },

    #[error("incoherent market state: violation {violation:e} exceeds {tolerance:e}")]
    IncoherentState { violation: f64, tolerance: f64 },

    #[error("tree structure violation: {0}")]
    StructureViolation(String),

    #[error("degenerate belief: {0}")]
    DegenerateBelief(String),

    #[error("configuration error in `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("cannot parse `{input}` as a dyadic rational: {reason}")]
    Parse { input: String, reason: String },
}

pub type Result<T> = std::result::Result<T, MarketError>;

pub(crate) fn check_shares(s: f64) -> Result<()> {
    if s.is_finite() {
        Ok(())
    } else {
        Err(MarketError::NonFiniteShares(s))
    }
}
