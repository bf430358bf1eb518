use std::f64::consts::LN_2;

use crate::error::{MarketError, Result};
use crate::lcmm::{LcmmTree, LiquiditySchedule};
use crate::lmsr_tree::LmsrTree;
use crate::MarketMaker;

/// Liquidity placed on unfunded levels of a split market, as a fraction of the budget.
pub const UNFUNDED_FRACTION: f64 = 1e-9;

/// Which market maker a simulation runs against, under a worst-case-loss budget.
#[derive(Clone, Debug, PartialEq)]
pub enum MarketSpec {
    /// LMSR whose endpoints are rounded to `k` bits, `b = B / (k log 2)`.
    LmsrAtPrecision(u32),
    /// Multi-resolution market with budget fraction `f` at each listed level,
    /// `b_k = f B / (k log 2)`.
    LcmmSplit(Vec<(u32, f64)>),
}

impl MarketSpec {
    pub fn validate(&self, max_bits: u32) -> Result<()> {
        let bad = |reason: String| MarketError::Config {
            key: "markets".into(),
            reason,
        };
        match self {
            MarketSpec::LmsrAtPrecision(k) => {
                if *k == 0 || *k > max_bits {
                    return Err(bad(format!("precision {k} must lie in 1..={max_bits}")));
                }
            }
            MarketSpec::LcmmSplit(split) => {
                if split.is_empty() {
                    return Err(bad("empty budget split".into()));
                }
                for (i, (k, f)) in split.iter().enumerate() {
                    if *k == 0 || *k > max_bits {
                        return Err(bad(format!("level {k} must lie in 1..={max_bits}")));
                    }
                    if !(f.is_finite() && *f > 0.0) {
                        return Err(bad(format!("fraction {f} at level {k} must be positive")));
                    }
                    if split[..i].iter().any(|(j, _)| j == k) {
                        return Err(bad(format!("level {k} listed twice")));
                    }
                }
                let total: f64 = split.iter().map(|(_, f)| f).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(bad(format!("fractions sum to {total}, not 1")));
                }
            }
        }
        Ok(())
    }

    /// Precision candidate endpoints are rounded to.
    pub fn precision(&self) -> u32 {
        match self {
            MarketSpec::LmsrAtPrecision(k) => *k,
            MarketSpec::LcmmSplit(split) => split.iter().map(|(k, _)| *k).max().unwrap_or(0),
        }
    }

    /// Short name used in CSV output, e.g. `lmsr4` or `lcmm4:0.5+8:0.5`.
    pub fn label(&self) -> String {
        match self {
            MarketSpec::LmsrAtPrecision(k) => format!("lmsr{k}"),
            MarketSpec::LcmmSplit(split) => {
                let parts: Vec<String> = split.iter().map(|(k, f)| format!("{k}:{f}")).collect();
                format!("lcmm{}", parts.join("+"))
            }
        }
    }

    /// Fresh market maker with worst-case loss `budget`.
    pub fn build(&self, budget: f64) -> Result<Box<dyn MarketMaker>> {
        if !(budget.is_finite() && budget > 0.0) {
            return Err(MarketError::Config {
                key: "budget".into(),
                reason: format!("{budget} must be positive"),
            });
        }
        match self {
            MarketSpec::LmsrAtPrecision(k) => {
                Ok(Box::new(LmsrTree::new(budget / (*k as f64 * LN_2))?))
            }
            MarketSpec::LcmmSplit(split) => {
                let depth = self.precision();
                let mut levels = vec![UNFUNDED_FRACTION * budget; depth as usize];
                for (k, f) in split {
                    levels[*k as usize - 1] = f * budget / (*k as f64 * LN_2);
                }
                Ok(Box::new(LcmmTree::new(LiquiditySchedule::explicit(
                    levels,
                )?)?))
            }
        }
    }

    /// Parses `lmsr:4` or `lcmm:4=0.5,8=0.5`.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |reason: &str| MarketError::Config {
            key: "markets".into(),
            reason: format!("`{text}`: {reason}"),
        };
        let (kind, rest) = text
            .trim()
            .split_once(':')
            .ok_or_else(|| bad("expected kind:parameters"))?;
        match kind.trim() {
            "lmsr" => rest
                .trim()
                .parse()
                .map(MarketSpec::LmsrAtPrecision)
                .map_err(|_| bad("bad precision")),
            "lcmm" => rest
                .split(',')
                .map(|part| {
                    let (k, f) = part
                        .split_once('=')
                        .ok_or_else(|| bad("expected level=fraction"))?;
                    let k = k.trim().parse().map_err(|_| bad("bad level"))?;
                    let f = f.trim().parse().map_err(|_| bad("bad fraction"))?;
                    Ok((k, f))
                })
                .collect::<Result<Vec<_>>>()
                .map(MarketSpec::LcmmSplit),
            _ => Err(bad("unknown market kind")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_is_loss_bound() {
        let budget = 3.0;
        for spec in [
            MarketSpec::LmsrAtPrecision(4),
            MarketSpec::LmsrAtPrecision(8),
            MarketSpec::LcmmSplit(vec![(4, 0.5), (8, 0.5)]),
        ] {
            let m = spec.build(budget).unwrap();
            let bound = match spec {
                MarketSpec::LmsrAtPrecision(k) => {
                    crate::lmsr_tree::loss_bound_at_precision(budget / (k as f64 * LN_2), k)
                }
                _ => m.loss_bound(),
            };
            assert!((bound - budget).abs() < 1e-6, "{spec:?}: {bound}");
        }
    }

    #[test]
    fn parse_round_trip() {
        let s = MarketSpec::parse("lcmm: 4=0.5, 8=0.5").unwrap();
        assert_eq!(s, MarketSpec::LcmmSplit(vec![(4, 0.5), (8, 0.5)]));
        assert_eq!(s.label(), "lcmm4:0.5+8:0.5");
        assert_eq!(
            MarketSpec::parse("lmsr:8").unwrap(),
            MarketSpec::LmsrAtPrecision(8)
        );
        assert!(MarketSpec::parse("cda:4").is_err());
        assert!(MarketSpec::LcmmSplit(vec![(4, 0.5), (8, 0.4)])
            .validate(10)
            .is_err());
        assert!(MarketSpec::LmsrAtPrecision(11).validate(10).is_err());
    }
}
