//! Worst-case-loss bookkeeping shared by every engine.

use std::collections::BTreeMap;

use crate::dyadic::{Dyadic, Interval};
use crate::error::Result;
use crate::MarketMaker;

/// Ledger of executed trades and the money the market maker received for them.
#[derive(Clone, Debug, Default)]
pub struct LossAudit {
    trades: Vec<(Interval, f64)>,
    collected: f64,
    initial_cost: f64,
}

impl LossAudit {
    pub fn new(initial_cost: f64) -> Self {
        LossAudit {
            trades: Vec::new(),
            collected: 0.0,
            initial_cost,
        }
    }

    pub fn record(&mut self, interval: Interval, shares: f64, cost: f64) {
        self.trades.push((interval, shares));
        self.collected += cost;
    }

    /// Cumulative money received, in currency units.
    pub fn collected(&self) -> f64 {
        self.collected
    }

    /// Potential value `C(0)` of the engine this ledger was opened against.
    pub fn initial_cost(&self) -> f64 {
        self.initial_cost
    }

    pub fn trade_count(&self) -> usize {
        self.trades.len()
    }

    /// Total the market maker owes if `outcome` is realized.
    pub fn payout_at(&self, outcome: Dyadic) -> f64 {
        self.trades
            .iter()
            .map(|(interval, shares)| shares * interval.payout(outcome))
            .sum()
    }

    /// Realized loss (payout minus collected) at `outcome`.
    pub fn loss_at(&self, outcome: Dyadic) -> f64 {
        self.payout_at(outcome) - self.collected
    }

    /// Largest realized loss over every outcome in `[0, 1)`.
    ///
    /// Payouts are constant between consecutive traded endpoints, so it suffices
    /// to evaluate one outcome per piece. Returns the piece's left endpoint too.
    pub fn worst_case_loss(&self) -> (Dyadic, f64) {
        let mut deltas: BTreeMap<Dyadic, f64> = BTreeMap::new();
        deltas.insert(Dyadic::ZERO, 0.0);
        for (interval, shares) in &self.trades {
            *deltas.entry(interval.lo()).or_insert(0.0) += shares;
            *deltas.entry(interval.hi()).or_insert(0.0) -= shares;
        }
        let mut best = (Dyadic::ZERO, f64::NEG_INFINITY);
        for &point in deltas.keys() {
            if point.is_one() {
                break;
            }
            // exact per-piece sum avoids drift from a running prefix total
            let loss = self.loss_at(point);
            if loss > best.1 {
                best = (point, loss);
            }
        }
        best
    }
}

/// Realized loss of the audited engine at `outcome`.
pub fn audit_loss(audit: &LossAudit, outcome: Dyadic) -> f64 {
    audit.loss_at(outcome)
}

/// A market maker paired with the ledger of every trade it executed.
#[derive(Clone, Debug)]
pub struct Audited<M> {
    engine: M,
    audit: LossAudit,
}

impl<M: MarketMaker> Audited<M> {
    pub fn new(engine: M) -> Self {
        let audit = LossAudit::new(engine.initial_potential());
        Audited { engine, audit }
    }

    pub fn buy(&mut self, interval: &Interval, shares: f64) -> Result<f64> {
        let cost = self.engine.buy(interval, shares)?;
        self.audit.record(*interval, shares, cost);
        Ok(cost)
    }

    pub fn engine(&self) -> &M {
        &self.engine
    }

    pub fn audit(&self) -> &LossAudit {
        &self.audit
    }

    pub fn into_parts(self) -> (M, LossAudit) {
        (self.engine, self.audit)
    }
}
