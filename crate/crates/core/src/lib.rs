//! Automated market makers for interval securities over the outcome space `[0, 1)`.
//!
//! Two engines share one interface:
//!
//! * [`LmsrTree`]: an exact logarithmic market scoring rule whose state lives
//!   in an AVL tree annotated with shares and log-domain partial normalization
//!   constants. `price`, `cost` and `buy` run in time logarithmic in the
//!   number of distinct traded endpoints.
//! * [`LcmmTree`]: a multi-resolution linearly constrained market maker. One
//!   LMSR per dyadic level, tied together by closed-form arbitrage removal, so
//!   the worst-case loss stays bounded independently of the outcome precision.
//!
//! [`DenseLmsr`] is a brute-force complete-market LMSR used as an oracle, and
//! [`LossAudit`] tracks realized loss for any engine. The [`sim`] module hosts
//! the agent-based convergence experiments.

pub mod audit;
pub mod dense;
pub mod dyadic;
pub mod error;
pub mod lcmm;
pub mod lmsr_tree;
pub mod numeric;
pub mod sim;

pub use audit::{audit_loss, Audited, LossAudit};
pub use dense::DenseLmsr;
pub use dyadic::{Dyadic, Interval, MAX_PRECISION};
pub use error::{MarketError, Result};
pub use lcmm::{LcmmTree, LiquiditySchedule};
pub use lmsr_tree::LmsrTree;

/// Operations every market maker supports.
pub trait MarketMaker {
    /// Instantaneous price of one share of `interval`.
    fn price(&self, interval: &Interval) -> Result<f64>;

    /// What `buy(interval, shares)` would charge, without changing state.
    fn cost(&self, interval: &Interval, shares: f64) -> Result<f64>;

    /// Sells `shares` of `interval` to the caller and returns the charge.
    fn buy(&mut self, interval: &Interval, shares: f64) -> Result<f64>;

    /// Advertised worst-case loss.
    fn loss_bound(&self) -> f64;

    /// Value of the cost potential in the initial (untraded) state.
    fn initial_potential(&self) -> f64;

    /// Market probabilities of the `2^bits` equal-width bins of `[0, 1)`.
    fn distribution(&self, bits: u32) -> Vec<f64>;

    /// Node visits performed by the most recent `price`, `cost` or `buy`.
    fn last_visits(&self) -> usize;
}

/// Relaxed atomic counter so read-only queries can record instrumentation.
#[derive(Debug, Default)]
pub(crate) struct VisitCounter(std::sync::atomic::AtomicUsize);

impl VisitCounter {
    pub(crate) fn set(&self, n: usize) {
        self.0.store(n, std::sync::atomic::Ordering::Relaxed);
    }

    pub(crate) fn get(&self) -> usize {
        self.0.load(std::sync::atomic::Ordering::Relaxed)
    }
}

impl Clone for VisitCounter {
    fn clone(&self) -> Self {
        let c = VisitCounter::default();
        c.set(self.get());
        c
    }
}
