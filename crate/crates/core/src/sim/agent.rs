use crate::dyadic::{Dyadic, Interval, MAX_PRECISION};
use crate::error::Result;
use crate::MarketMaker;

use super::rng::SplitMix64;
use super::trader::Trader;

/// Share quantities are searched on `[-SHARE_RANGE, SHARE_RANGE]`.
pub const SHARE_RANGE: f64 = 64.0;
pub const SHARE_TOLERANCE: f64 = 1e-8;
/// Rejection attempts per candidate before it is dropped.
pub const MAX_RESAMPLES: usize = 100;

const TAG_ARRIVAL: u64 = 1;
const TAG_CANDIDATES: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TradeChoice {
    pub shares: f64,
    /// Relative expected-utility gain over not trading.
    pub gain: f64,
}

/// Expected-utility gain of buying `shares` of an interval with belief mass `q`
/// at charge `cost`, relative to not trading: `1 - (q e^{-(s - c)} + (1 - q) e^c)`.
pub fn utility_gain(q: f64, shares: f64, cost: f64) -> f64 {
    1.0 - (q * (cost - shares).exp() + (1.0 - q) * cost.exp())
}

/// Upper bound on the gain of any trade of an interval priced `p` for a trader
/// with belief mass `q`: `1 - exp(-KL(p || q))`, the gain against a market
/// whose cost is linear at price `p`. Convex costs only charge more.
pub fn gain_bound(q: f64, p: f64) -> f64 {
    if !(q > 0.0 && q < 1.0) {
        return 0.0;
    }
    if !(p > 0.0 && p < 1.0) {
        return 1.0;
    }
    let kl = p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln();
    -(-kl.max(0.0)).exp_m1()
}

/// Utility-maximizing trade of `interval` for an exponential-utility trader
/// holding belief mass `q` on it.
///
/// Golden-section search over `s`; the objective is concave because the cost
/// function is convex. Returns zero shares when the best gain is at most `tol`
/// or `q` is not strictly inside `(0, 1)`.
pub fn optimal_shares(
    q: f64,
    market: &dyn MarketMaker,
    interval: &Interval,
    tol: f64,
) -> Result<TradeChoice> {
    let none = TradeChoice {
        shares: 0.0,
        gain: 0.0,
    };
    if !(q > 0.0 && q < 1.0) {
        return Ok(none);
    }
    let f = |s: f64| -> Result<f64> { Ok(utility_gain(q, s, market.cost(interval, s)?)) };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (-SHARE_RANGE, SHARE_RANGE);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while b - a > SHARE_TOLERANCE {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    let shares = 0.5 * (a + b);
    let gain = f(shares)?;
    if gain > tol {
        Ok(TradeChoice { shares, gain })
    } else {
        Ok(none)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TradeEvent {
    pub turn: u64,
    pub trader: usize,
    pub interval: Interval,
    pub shares: f64,
    pub cost: f64,
    pub gain: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    Trade(TradeEvent),
    Quiescent,
}

/// Every interval with endpoints on the `2^bits` grid.
pub fn all_intervals(bits: u32) -> Vec<Interval> {
    let n = 1u64 << bits;
    let at = |k: u64| Dyadic::new(k, bits).expect("grid point");
    (0..n)
        .flat_map(|a| (a + 1..=n).map(move |c| (a, c)))
        .map(|(a, c)| Interval::new(at(a), at(c)).expect("ordered grid points"))
        .collect()
}

/// Arrival and candidate streams of one controlled trace. Every market run on
/// the trace sees the same arrivals and the same raw uniforms per (turn, trader).
#[derive(Clone, Copy, Debug)]
pub struct TraceStreams {
    pub seed: u64,
    pub trace: u64,
}

impl TraceStreams {
    pub fn arrival(&self, turn: u64, n_traders: usize) -> usize {
        SplitMix64::derive(self.seed, &[TAG_ARRIVAL, self.trace, turn]).below(n_traders as u64)
            as usize
    }

    pub fn candidates(&self, turn: u64, trader: usize) -> SplitMix64 {
        SplitMix64::derive(
            self.seed,
            &[TAG_CANDIDATES, self.trace, turn, trader as u64],
        )
    }
}

/// Traders, their accumulated positions and one market maker.
pub struct Simulation {
    traders: Vec<Trader>,
    log_beliefs: Vec<Vec<f64>>,
    /// Wealth change of each trader in each of the `2^bits` outcome bins.
    wealth: Vec<Vec<f64>>,
    market: Box<dyn MarketMaker>,
    precision: u32,
    bits: u32,
    candidates_per_turn: usize,
    tol: f64,
    streams: TraceStreams,
    revenue: f64,
    fixed_candidates: Option<Vec<Interval>>,
}

impl Simulation {
    /// `precision` is the bit depth candidates are rounded to; positions are
    /// tracked over `2^bits` outcome bins, so `precision <= bits`.
    pub fn new(
        traders: Vec<Trader>,
        market: Box<dyn MarketMaker>,
        precision: u32,
        bits: u32,
        candidates_per_turn: usize,
        tol: f64,
        streams: TraceStreams,
    ) -> Self {
        assert!(precision <= bits && bits < MAX_PRECISION);
        let log_beliefs = traders.iter().map(|t| t.log_bin_masses(bits)).collect();
        let wealth = vec![vec![0.0; 1usize << bits]; traders.len()];
        Simulation {
            traders,
            log_beliefs,
            wealth,
            market,
            precision,
            bits,
            candidates_per_turn,
            tol,
            streams,
            revenue: 0.0,
            fixed_candidates: None,
        }
    }

    /// Every trader considers exactly `candidates` on every turn instead of
    /// drawing from their belief.
    pub fn with_candidates(mut self, candidates: Vec<Interval>) -> Self {
        self.fixed_candidates = Some(candidates);
        self
    }

    pub fn market(&self) -> &dyn MarketMaker {
        self.market.as_ref()
    }

    pub fn traders(&self) -> &[Trader] {
        &self.traders
    }

    /// Total charged by the market maker so far.
    pub fn revenue(&self) -> f64 {
        self.revenue
    }

    pub fn wealth(&self, trader: usize) -> &[f64] {
        &self.wealth[trader]
    }

    /// Expected utility `-E[exp(-W)]` of a trader under their own belief.
    pub fn expected_utility(&self, trader: usize) -> f64 {
        -self.log_beliefs[trader]
            .iter()
            .zip(&self.wealth[trader])
            .map(|(l, w)| (l - w).exp())
            .sum::<f64>()
    }

    /// Candidate intervals: two belief draws per candidate, rounded to the
    /// market precision and ordered; empty draws are resampled.
    pub fn sample_candidates(&self, trader: usize, rng: &mut SplitMix64) -> Vec<Interval> {
        if let Some(fixed) = &self.fixed_candidates {
            return fixed.clone();
        }
        let t = &self.traders[trader];
        let mut out = Vec::with_capacity(self.candidates_per_turn);
        for _ in 0..self.candidates_per_turn {
            for _ in 0..MAX_RESAMPLES {
                let x = Dyadic::round_f64(t.quantile(rng.next_f64()), self.precision);
                let y = Dyadic::round_f64(t.quantile(rng.next_f64()), self.precision);
                if x != y {
                    out.push(
                        Interval::new(x.min(y), x.max(y)).expect("ordered distinct endpoints"),
                    );
                    break;
                }
            }
        }
        out
    }

    /// Best candidate trade for `trader`: beliefs are tilted by the trader's
    /// current position, `q ∝ belief * exp(-W)`, which is exactly how the
    /// position enters exponential utility.
    pub fn best_trade(
        &self,
        trader: usize,
        candidates: &[Interval],
    ) -> Result<Option<(Interval, TradeChoice)>> {
        let tilted: Vec<f64> = self.log_beliefs[trader]
            .iter()
            .zip(&self.wealth[trader])
            .map(|(l, w)| l - w)
            .collect();
        let top = tilted.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut prefix = Vec::with_capacity(tilted.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for l in &tilted {
            acc += (l - top).exp();
            prefix.push(acc);
        }
        // searching in order of the gain bound lets most candidates be skipped
        let mut ranked = Vec::with_capacity(candidates.len());
        for (i, iv) in candidates.iter().enumerate() {
            let (lo, hi) = (self.bin_index(iv.lo()), self.bin_index(iv.hi()));
            let inside = prefix[hi] - prefix[lo];
            let outside = prefix[lo] + (acc - prefix[hi]);
            let q = inside / (inside + outside);
            let bound = gain_bound(q, self.market.price(iv)?);
            if bound > self.tol {
                ranked.push((bound, i, q));
            }
        }
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut best: Option<(usize, TradeChoice)> = None;
        for (bound, i, q) in ranked {
            if best.is_some_and(|(_, b)| bound < b.gain) {
                break;
            }
            let choice = optimal_shares(q, self.market.as_ref(), &candidates[i], self.tol)?;
            let better = match best {
                None => choice.gain > self.tol,
                Some((j, b)) => choice.gain > b.gain || (choice.gain == b.gain && i < j),
            };
            if better {
                best = Some((i, choice));
            }
        }
        Ok(best.map(|(i, c)| (candidates[i], c)))
    }

    fn bin_index(&self, x: Dyadic) -> usize {
        if x.is_one() {
            1usize << self.bits
        } else {
            (x.numerator() << (self.bits - x.precision())) as usize
        }
    }

    fn execute(
        &mut self,
        turn: u64,
        trader: usize,
        interval: Interval,
        choice: TradeChoice,
    ) -> Result<TradeEvent> {
        let cost = self.market.buy(&interval, choice.shares)?;
        let (lo, hi) = (self.bin_index(interval.lo()), self.bin_index(interval.hi()));
        for (j, w) in self.wealth[trader].iter_mut().enumerate() {
            *w -= cost;
            if (lo..hi).contains(&j) {
                *w += choice.shares;
            }
        }
        self.revenue += cost;
        Ok(TradeEvent {
            turn,
            trader,
            interval,
            shares: choice.shares,
            cost,
            gain: choice.gain,
        })
    }

    /// One turn: the arriving trader executes their best candidate. If they
    /// have none, the remaining traders are swept in order with their own
    /// candidates for this turn, and the first with a profitable trade executes
    /// it. `Quiescent` when nobody gains more than the tolerance.
    pub fn step(&mut self, turn: u64) -> Result<StepOutcome> {
        let n = self.traders.len();
        let first = self.streams.arrival(turn, n);
        for offset in 0..n {
            let trader = (first + offset) % n;
            let candidates =
                self.sample_candidates(trader, &mut self.streams.candidates(turn, trader));
            if let Some((interval, choice)) = self.best_trade(trader, &candidates)? {
                return self
                    .execute(turn, trader, interval, choice)
                    .map(StepOutcome::Trade);
            }
        }
        Ok(StepOutcome::Quiescent)
    }

    /// Whether any trader has a profitable trade among fresh candidates drawn from `rng`.
    pub fn any_profitable(&self, rng: &mut SplitMix64) -> Result<bool> {
        for trader in 0..self.traders.len() {
            let candidates = self.sample_candidates(trader, rng);
            if self.best_trade(trader, &candidates)?.is_some() {
                return Ok(true);
            }
        }
        Ok(false)
    }
}
