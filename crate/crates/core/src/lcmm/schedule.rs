use serde::{Deserialize, Serialize};

use crate::dyadic::MAX_PRECISION;
use crate::error::{MarketError, Result};

/// Per-level liquidity `b_1, b_2, ...` of a multi-resolution market.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LiquiditySchedule {
    /// `b_1..b_K`; levels beyond `K` do not exist.
    ExplicitFinite { levels: Vec<f64> },
    /// `b_k = b1 * ratio^(k-1)` for every `k >= 1`.
    GeometricTail { b1: f64, ratio: f64 },
}

impl LiquiditySchedule {
    pub fn explicit(levels: Vec<f64>) -> Result<Self> {
        let s = LiquiditySchedule::ExplicitFinite { levels };
        s.validate()?;
        Ok(s)
    }

    pub fn geometric(b1: f64, ratio: f64) -> Result<Self> {
        let s = LiquiditySchedule::GeometricTail { b1, ratio };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LiquiditySchedule::ExplicitFinite { levels } => {
                if levels.is_empty() || levels.len() > MAX_PRECISION as usize {
                    return Err(MarketError::InvalidLiquidity(format!(
                        "need between 1 and {MAX_PRECISION} levels, got {}",
                        levels.len()
                    )));
                }
                if let Some((k, b)) = levels
                    .iter()
                    .enumerate()
                    .find(|(_, b)| !(b.is_finite() && **b > 0.0))
                {
                    return Err(MarketError::InvalidLiquidity(format!(
                        "b_{} = {b} must be positive",
                        k + 1
                    )));
                }
            }
            LiquiditySchedule::GeometricTail { b1, ratio } => {
                if !(b1.is_finite() && *b1 > 0.0) {
                    return Err(MarketError::InvalidLiquidity(format!(
                        "b1 = {b1} must be positive"
                    )));
                }
                if !(*ratio > 0.0 && *ratio < 1.0) {
                    return Err(MarketError::InvalidLiquidity(format!(
                        "ratio = {ratio} must lie in (0, 1)"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Deepest level, or `None` for an unbounded schedule.
    pub fn max_level(&self) -> Option<u32> {
        match self {
            LiquiditySchedule::ExplicitFinite { levels } => Some(levels.len() as u32),
            LiquiditySchedule::GeometricTail { .. } => None,
        }
    }

    /// `b_k` for `k >= 1`.
    pub fn b(&self, k: u32) -> Result<f64> {
        match self {
            LiquiditySchedule::ExplicitFinite { levels } => {
                if k == 0 || k as usize > levels.len() {
                    return Err(MarketError::LevelOutOfRange {
                        level: k,
                        max: levels.len() as u32,
                    });
                }
                Ok(levels[k as usize - 1])
            }
            LiquiditySchedule::GeometricTail { b1, ratio } => {
                if k == 0 {
                    return Err(MarketError::LevelOutOfRange {
                        level: 0,
                        max: u32::MAX,
                    });
                }
                Ok(b1 * ratio.powi(k as i32 - 1))
            }
        }
    }

    /// `B_l = sum over k > l of b_k`.
    pub fn cumulative_liquidity(&self, level: u32) -> Result<f64> {
        match self {
            LiquiditySchedule::ExplicitFinite { levels } => {
                if level as usize > levels.len() {
                    return Err(MarketError::LevelOutOfRange {
                        level,
                        max: levels.len() as u32,
                    });
                }
                Ok(levels[level as usize..].iter().sum())
            }
            LiquiditySchedule::GeometricTail { b1, ratio } => {
                Ok(b1 * ratio.powi(level as i32) / (1.0 - ratio))
            }
        }
    }

    /// `(sum over k of k * b_k) * log 2`.
    pub fn loss_bound(&self) -> f64 {
        let weighted = match self {
            LiquiditySchedule::ExplicitFinite { levels } => levels
                .iter()
                .enumerate()
                .map(|(i, b)| (i + 1) as f64 * b)
                .sum::<f64>(),
            LiquiditySchedule::GeometricTail { b1, ratio } => b1 / ((1.0 - ratio) * (1.0 - ratio)),
        };
        weighted * std::f64::consts::LN_2
    }
}
