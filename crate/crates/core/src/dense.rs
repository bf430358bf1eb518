//! Complete-market LMSR over `2^K` atomic outcomes.
//!
//! Every operation touches all `N = 2^K` outcomes, so this engine only exists
//! to cross-check the tree-based engines at small `K`.

use std::cell::Cell;

use crate::dyadic::{Interval, MAX_PRECISION};
use crate::error::{check_shares, MarketError, Result};
use crate::numeric::{lmsr_cost_log, log_add_exp, log_sum_exp};
use crate::MarketMaker;

/// Largest outcome precision the dense oracle accepts.
pub const MAX_DENSE_PRECISION: u32 = 16;

#[derive(Clone, Debug)]
pub struct DenseLmsr {
    b: f64,
    k: u32,
    theta: Vec<f64>,
    visits: Cell<usize>,
}

impl DenseLmsr {
    pub fn new(b: f64, k: u32) -> Result<Self> {
        Self::from_theta(b, k, vec![0.0; 1usize << k.min(MAX_DENSE_PRECISION)])
    }

    pub fn from_theta(b: f64, k: u32, theta: Vec<f64>) -> Result<Self> {
        if !(b.is_finite() && b > 0.0) {
            return Err(MarketError::InvalidLiquidity(format!(
                "b = {b} must be positive and finite"
            )));
        }
        if !(1..=MAX_DENSE_PRECISION).contains(&k) {
            return Err(MarketError::Config {
                key: "K".into(),
                reason: format!("{k} is outside the dense oracle range 1..={MAX_DENSE_PRECISION}"),
            });
        }
        if theta.len() != 1usize << k {
            return Err(MarketError::Config {
                key: "theta".into(),
                reason: format!("expected {} entries, found {}", 1usize << k, theta.len()),
            });
        }
        if let Some(bad) = theta.iter().find(|t| !t.is_finite()) {
            return Err(MarketError::NonFiniteShares(*bad));
        }
        Ok(DenseLmsr {
            b,
            k,
            theta,
            visits: Cell::new(0),
        })
    }

    pub fn liquidity(&self) -> f64 {
        self.b
    }

    pub fn precision(&self) -> u32 {
        self.k
    }

    /// Shares held per atomic outcome.
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Price of every atomic outcome.
    pub fn outcome_prices(&self) -> Vec<f64> {
        let norm = self.log_norm(0..self.theta.len());
        self.theta
            .iter()
            .map(|t| (t / self.b - norm).exp())
            .collect()
    }

    fn index_range(&self, interval: &Interval) -> Result<std::ops::Range<usize>> {
        for endpoint in [interval.lo(), interval.hi()] {
            if endpoint.precision() > self.k {
                return Err(MarketError::EndpointTooFine {
                    endpoint: endpoint.to_string(),
                    precision: endpoint.precision(),
                    max: self.k,
                });
            }
        }
        let shift = MAX_PRECISION - self.k;
        let lo = (interval.lo().scaled() >> shift) as usize;
        let hi = (interval.hi().scaled() >> shift) as usize;
        Ok(lo..hi)
    }

    fn log_norm(&self, range: std::ops::Range<usize>) -> f64 {
        self.visits.set(self.visits.get() + range.len());
        log_sum_exp(self.theta[range].iter().map(|t| t / self.b))
    }

    fn log_complement(&self, range: &std::ops::Range<usize>) -> f64 {
        log_add_exp(
            self.log_norm(0..range.start),
            self.log_norm(range.end..self.theta.len()),
        )
    }
}

impl MarketMaker for DenseLmsr {
    fn price(&self, interval: &Interval) -> Result<f64> {
        self.visits.set(0);
        let range = self.index_range(interval)?;
        let inside = self.log_norm(range.clone());
        let total = log_add_exp(inside, self.log_complement(&range));
        Ok((inside - total).exp())
    }

    fn cost(&self, interval: &Interval, shares: f64) -> Result<f64> {
        check_shares(shares)?;
        self.visits.set(0);
        let range = self.index_range(interval)?;
        if shares == 0.0 {
            return Ok(0.0);
        }
        if interval.is_full() {
            return Ok(shares);
        }
        let inside = self.log_norm(range.clone());
        let outside = self.log_complement(&range);
        Ok(self.b * lmsr_cost_log(inside, outside, shares / self.b))
    }

    fn buy(&mut self, interval: &Interval, shares: f64) -> Result<f64> {
        let cost = self.cost(interval, shares)?;
        let range = self.index_range(interval)?;
        for t in &mut self.theta[range] {
            *t += shares;
        }
        Ok(cost)
    }

    fn loss_bound(&self) -> f64 {
        self.b * self.k as f64 * std::f64::consts::LN_2
    }

    fn initial_potential(&self) -> f64 {
        self.loss_bound()
    }

    fn distribution(&self, bits: u32) -> Vec<f64> {
        let atoms = self.outcome_prices();
        if bits <= self.k {
            let group = 1usize << (self.k - bits);
            atoms.chunks(group).map(|c| c.iter().sum()).collect()
        } else {
            let split = 1usize << (bits - self.k);
            atoms
                .iter()
                .flat_map(|p| std::iter::repeat_n(p / split as f64, split))
                .collect()
        }
    }

    fn last_visits(&self) -> usize {
        self.visits.get()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::Dyadic;
    use proptest::prelude::*;

    fn iv(lo: (u64, u32), hi: (u64, u32)) -> Interval {
        Interval::from_parts(lo, hi).unwrap()
    }

    #[test]
    fn uniform_prices() {
        let m = DenseLmsr::new(1.0, 2).unwrap();
        assert!((m.price(&iv((0, 0), (1, 2))).unwrap() - 0.25).abs() < 1e-15);
        assert!((m.price(&Interval::full()).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn price_after_single_buy() {
        let mut m = DenseLmsr::new(1.0, 2).unwrap();
        let i = iv((0, 0), (1, 2));
        m.buy(&i, 1.0).unwrap();
        let e = 1f64.exp();
        // explicit sum of exponentials with theta = (1, 0, 0, 0)
        let expected = e / (e + 3.0);
        assert!((m.price(&i).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.47537).abs() < 1e-5);
    }

    #[test]
    fn cost_examples() {
        let m = DenseLmsr::new(1.0, 2).unwrap();
        let i = iv((0, 0), (1, 2));
        assert_eq!(m.cost(&i, 0.0).unwrap(), 0.0);
        // log-sum-exp over the four outcomes before and after
        let expected = (1f64.exp() + 3.0).ln() - 4f64.ln();
        assert!((m.cost(&i, 1.0).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.35737).abs() < 1e-5);

        let half = DenseLmsr::new(1.0, 1).unwrap();
        let c = half.cost(&iv((0, 0), (1, 1)), 50.0).unwrap();
        assert!((c - 50.0 - 0.5f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn buy_examples() {
        let mut m = DenseLmsr::new(1.0, 2).unwrap();
        let i = iv((0, 0), (1, 2));
        let c = m.buy(&i, 1.0).unwrap();
        assert!((c - 0.357_374).abs() < 1e-6);
        let back = m.buy(&i, -1.0).unwrap();
        assert!((c + back).abs() < 1e-12);
        assert!((m.price(&i).unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(m.buy(&Interval::full(), 2.5).unwrap(), 2.5);
    }

    #[test]
    fn validation() {
        assert!(DenseLmsr::new(1.0, 17).is_err());
        assert!(DenseLmsr::new(0.0, 2).is_err());
        let m = DenseLmsr::new(1.0, 2).unwrap();
        let fine = iv((1, 3), (1, 1));
        assert!(matches!(
            m.price(&fine),
            Err(MarketError::EndpointTooFine { .. })
        ));
        assert!(matches!(
            m.cost(&iv((0, 0), (1, 1)), f64::NAN),
            Err(MarketError::NonFiniteShares(_))
        ));
    }

    #[test]
    fn distribution_refines_evenly() {
        let mut m = DenseLmsr::new(1.0, 2).unwrap();
        m.buy(&iv((0, 0), (1, 2)), 1.0).unwrap();
        let fine = m.distribution(3);
        assert_eq!(fine.len(), 8);
        assert!((fine[0] - fine[1]).abs() < 1e-15);
        let coarse = m.distribution(1);
        assert!((coarse.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    fn arb_trades() -> impl Strategy<Value = Vec<(u64, u64, f64)>> {
        prop::collection::vec((0u64..16, 1u64..=16, -5.0f64..5.0), 1..30)
    }

    proptest! {
        #[test]
        fn invariants_hold(trades in arb_trades()) {
            let mut m = DenseLmsr::new(0.7, 4).unwrap();
            for (a, b, s) in trades {
                let (lo, hi) = if a < b { (a, b) } else { (b.min(15), (a + 1).min(16)) };
                if lo >= hi { continue; }
                m.buy(&iv((lo, 4), (hi, 4)), s).unwrap();
            }
            let prices = m.outcome_prices();
            prop_assert!(prices.iter().all(|p| *p > 0.0));
            prop_assert!((prices.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for a in 0..16u64 {
                for b in (a + 1)..=16 {
                    let two = m.price(&iv((a, 4), (b, 4))).unwrap();
                    let upper = |x: u64| if x == 16 { 0.0 } else {
                        m.price(&Interval::upper(Dyadic::new(x, 4).unwrap()).unwrap()).unwrap()
                    };
                    prop_assert!((two - (upper(a) - upper(b))).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn cost_is_additive(s1 in -4.0f64..4.0, s2 in -4.0f64..4.0, a in 0u64..8, w in 1u64..8) {
            let hi = (a + w).min(8);
            let i = iv((a, 3), (hi, 3));
            let mut m = DenseLmsr::new(1.3, 3).unwrap();
            m.buy(&iv((1, 3), (5, 3)), 0.8).unwrap();
            let whole = m.cost(&i, s1 + s2).unwrap();
            let first = m.buy(&i, s1).unwrap();
            let second = m.cost(&i, s2).unwrap();
            prop_assert!((whole - first - second).abs() < 1e-10);
        }
    }
}
