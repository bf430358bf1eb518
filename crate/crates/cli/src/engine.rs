use interval_markets::dense::MAX_DENSE_PRECISION;
use interval_markets::lcmm::LcmmNodeRecord;
use interval_markets::lmsr_tree::{loss_bound_at_precision, LmsrNodeRecord};
use interval_markets::{
    DenseLmsr, Interval, LcmmTree, LiquiditySchedule, LmsrTree, MarketError, MarketMaker,
    MAX_PRECISION,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const FORMAT_VERSION: u32 = 1;

/// Engine type and its liquidity parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "snake_case")]
pub enum EngineSpec {
    /// `precision` caps endpoint precision and sets the loss bound `b * precision * log 2`.
    LmsrTree {
        b: f64,
        precision: u32,
    },
    Lcmm {
        schedule: LiquiditySchedule,
    },
    Dense {
        b: f64,
        k: u32,
    },
}

impl EngineSpec {
    /// Name used in trade records.
    pub fn name(&self) -> &'static str {
        match self {
            EngineSpec::LmsrTree { .. } => "lmsr_tree",
            EngineSpec::Lcmm { .. } => "lcmm",
            EngineSpec::Dense { .. } => "dense",
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        match self {
            EngineSpec::LmsrTree { precision, .. }
                if *precision == 0 || *precision > MAX_PRECISION =>
            {
                Err(
                    CliError::BadArgs(format!("--K {precision} must lie in 1..={MAX_PRECISION}"))
                        .into(),
                )
            }
            EngineSpec::Dense { k, .. } if *k == 0 || *k > MAX_DENSE_PRECISION => {
                Err(CliError::BadArgs(format!(
                    "--K {k} exceeds the dense oracle cap of {MAX_DENSE_PRECISION}"
                ))
                .into())
            }
            EngineSpec::Lcmm { schedule } => Ok(schedule.validate()?),
            _ => Ok(()),
        }
    }
}

/// A live market of any engine type.
pub enum Engine {
    LmsrTree { tree: LmsrTree, precision: u32 },
    Lcmm(LcmmTree),
    Dense(DenseLmsr),
}

/// Node-level contents of a snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Nodes {
    LmsrTree(Vec<LmsrNodeRecord>),
    Lcmm(Vec<LcmmNodeRecord>),
    Dense(Vec<f64>),
}

/// On-disk market state. JSON layout:
///
/// ```text
/// { "format_version": 1, "last_seq": 3,
///   "spec": { "engine": "lmsr_tree", "b": 1.0, "precision": 10 },
///   "nodes": [ ... ] }
/// ```
///
/// `nodes` holds pre-order tree records for `lmsr_tree` and `lcmm`, and the
/// per-outcome share vector for `dense`. `last_seq` is the sequence number of
/// the last logged trade reflected in the state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub format_version: u32,
    pub last_seq: u64,
    pub spec: EngineSpec,
    pub nodes: Nodes,
}

impl Engine {
    pub fn fresh(spec: &EngineSpec) -> anyhow::Result<Self> {
        spec.validate()?;
        Ok(match spec {
            EngineSpec::LmsrTree { b, precision } => Engine::LmsrTree {
                tree: LmsrTree::new(*b)?,
                precision: *precision,
            },
            EngineSpec::Lcmm { schedule } => Engine::Lcmm(LcmmTree::new(schedule.clone())?),
            EngineSpec::Dense { b, k } => Engine::Dense(DenseLmsr::new(*b, *k)?),
        })
    }

    pub fn spec(&self) -> EngineSpec {
        match self {
            Engine::LmsrTree { tree, precision } => EngineSpec::LmsrTree {
                b: tree.liquidity(),
                precision: *precision,
            },
            Engine::Lcmm(t) => EngineSpec::Lcmm {
                schedule: t.schedule().clone(),
            },
            Engine::Dense(d) => EngineSpec::Dense {
                b: d.liquidity(),
                k: d.precision(),
            },
        }
    }

    pub fn market(&self) -> &dyn MarketMaker {
        match self {
            Engine::LmsrTree { tree, .. } => tree,
            Engine::Lcmm(t) => t,
            Engine::Dense(d) => d,
        }
    }

    /// Worst-case loss bound advertised for this market.
    pub fn loss_bound(&self) -> f64 {
        match self {
            Engine::LmsrTree { tree, precision } => {
                loss_bound_at_precision(tree.liquidity(), *precision)
            }
            other => other.market().loss_bound(),
        }
    }

    fn check(&self, interval: &Interval) -> anyhow::Result<()> {
        if let Engine::LmsrTree { precision, .. } = self {
            for e in [interval.lo(), interval.hi()] {
                if e.precision() > *precision {
                    return Err(MarketError::EndpointTooFine {
                        endpoint: e.to_string(),
                        precision: e.precision(),
                        max: *precision,
                    }
                    .into());
                }
            }
        }
        Ok(())
    }

    pub fn price(&self, interval: &Interval) -> anyhow::Result<f64> {
        self.check(interval)?;
        Ok(self.market().price(interval)?)
    }

    pub fn cost(&self, interval: &Interval, shares: f64) -> anyhow::Result<f64> {
        self.check(interval)?;
        Ok(self.market().cost(interval, shares)?)
    }

    pub fn buy(&mut self, interval: &Interval, shares: f64) -> anyhow::Result<f64> {
        self.check(interval)?;
        Ok(match self {
            Engine::LmsrTree { tree, .. } => tree.buy(interval, shares)?,
            Engine::Lcmm(t) => t.buy(interval, shares)?,
            Engine::Dense(d) => d.buy(interval, shares)?,
        })
    }

    pub fn to_snapshot(&self, last_seq: u64) -> Snapshot {
        let nodes = match self {
            Engine::LmsrTree { tree, .. } => Nodes::LmsrTree(tree.to_records()),
            Engine::Lcmm(t) => Nodes::Lcmm(t.to_records()),
            Engine::Dense(d) => Nodes::Dense(d.theta().to_vec()),
        };
        Snapshot {
            format_version: FORMAT_VERSION,
            last_seq,
            spec: self.spec(),
            nodes,
        }
    }

    pub fn from_snapshot(snap: &Snapshot) -> anyhow::Result<Self> {
        if snap.format_version != FORMAT_VERSION {
            return Err(CliError::Format(snap.format_version).into());
        }
        snap.spec.validate()?;
        // an empty node list deserializes as whichever variant comes first
        let empty = match &snap.nodes {
            Nodes::LmsrTree(v) => v.is_empty(),
            Nodes::Lcmm(v) => v.is_empty(),
            Nodes::Dense(v) => v.is_empty(),
        };
        if empty {
            return Err(MarketError::StructureViolation("snapshot has no nodes".into()).into());
        }
        let mismatch = || {
            MarketError::StructureViolation(format!(
                "node records do not match engine {}",
                snap.spec.name()
            ))
        };
        Ok(match (&snap.spec, &snap.nodes) {
            (EngineSpec::LmsrTree { b, precision }, Nodes::LmsrTree(records)) => Engine::LmsrTree {
                tree: LmsrTree::from_records(*b, records)?,
                precision: *precision,
            },
            (EngineSpec::Lcmm { schedule }, Nodes::Lcmm(records)) => {
                Engine::Lcmm(LcmmTree::from_records(schedule.clone(), records)?)
            }
            (EngineSpec::Dense { b, k }, Nodes::Dense(theta)) => {
                Engine::Dense(DenseLmsr::from_theta(*b, *k, theta.clone())?)
            }
            _ => return Err(mismatch().into()),
        })
    }
}
