//! Agent-based convergence experiments.
//!
//! Exponential-utility traders with Beta beliefs trade interval securities
//! against a market maker. Price convergence is the relative entropy between
//! the traders' market-clearing distribution (their logarithmic opinion pool)
//! and the market's distribution, measured at chosen resolutions.

mod agent;
mod market;
pub mod rng;
mod trader;

use std::collections::BTreeMap;

pub use agent::{
    all_intervals, gain_bound, optimal_shares, utility_gain, Simulation, StepOutcome, TraceStreams,
    TradeChoice, TradeEvent, MAX_RESAMPLES, SHARE_RANGE, SHARE_TOLERANCE,
};
pub use market::{MarketSpec, UNFUNDED_FRACTION};
pub use trader::{clearing_price, coarsen, kl_divergence, sample_traders, Trader};

use crate::error::{MarketError, Result};
use rng::SplitMix64;

const TAG_TRADERS: u64 = 0;

/// Largest outcome precision a simulation tracks positions at.
pub const MAX_SIM_BITS: u32 = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub n_traders: usize,
    /// True signal `p` the traders observe noisily.
    pub true_signal: f64,
    /// Trader `i` observes `n_i = signal_step * i` draws.
    pub signal_step: u64,
    /// Outcome precision in bits.
    pub k: u32,
    pub candidates_per_turn: usize,
    /// Worst-case loss budget of each market maker.
    pub budget: f64,
    pub markets: Vec<MarketSpec>,
    /// Levels at which convergence is measured.
    pub levels: Vec<u32>,
    pub n_traces: usize,
    pub max_steps: u64,
    pub quiescence_tol: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_traders: 10,
            true_signal: 0.4,
            signal_step: 16,
            k: 10,
            candidates_per_turn: 50,
            budget: 1.0,
            markets: vec![
                MarketSpec::LmsrAtPrecision(4),
                MarketSpec::LmsrAtPrecision(8),
                MarketSpec::LcmmSplit(vec![(4, 0.5), (8, 0.5)]),
            ],
            levels: vec![4, 8],
            n_traces: 40,
            max_steps: 1000,
            quiescence_tol: 1e-9,
            seed: 2022,
        }
    }
}

fn config_error(key: &str, reason: impl Into<String>) -> MarketError {
    MarketError::Config {
        key: key.into(),
        reason: reason.into(),
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_traders == 0 {
            return Err(config_error("n_traders", "need at least one trader"));
        }
        if !(0.0..=1.0).contains(&self.true_signal) {
            return Err(config_error(
                "true_signal",
                format!("{} is not a probability", self.true_signal),
            ));
        }
        if self.signal_step < 2 {
            return Err(config_error("signal_step", "must be at least 2"));
        }
        if self.k == 0 || self.k > MAX_SIM_BITS {
            return Err(config_error(
                "K",
                format!("{} must lie in 1..={MAX_SIM_BITS}", self.k),
            ));
        }
        if self.candidates_per_turn == 0 {
            return Err(config_error("candidates_per_turn", "must be positive"));
        }
        if !(self.budget.is_finite() && self.budget > 0.0) {
            return Err(config_error(
                "budget",
                format!("{} must be positive", self.budget),
            ));
        }
        if self.markets.is_empty() {
            return Err(config_error("markets", "no markets configured"));
        }
        for m in &self.markets {
            m.validate(self.k)?;
        }
        if let Some(l) = self.levels.iter().find(|l| **l > self.k) {
            return Err(config_error(
                "levels",
                format!("level {l} exceeds K = {}", self.k),
            ));
        }
        if self.n_traces == 0 {
            return Err(config_error("n_traces", "must be positive"));
        }
        if self.quiescence_tol.is_nan() || self.quiescence_tol < 0.0 {
            return Err(config_error("quiescence_tol", "must be nonnegative"));
        }
        Ok(())
    }

    /// Reads `key = value` lines; `#` starts a comment. Unlisted keys keep
    /// their defaults. `markets` is a `;`-separated list of `lmsr:<k>` and
    /// `lcmm:<level>=<fraction>,...`; `levels` is comma-separated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SimConfig::default();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_error(line, "expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
                value
                    .parse()
                    .map_err(|_| config_error(key, format!("cannot parse `{value}`")))
            }
            match key {
                "n_traders" => cfg.n_traders = num(key, value)?,
                "true_signal" => cfg.true_signal = num(key, value)?,
                "signal_step" => cfg.signal_step = num(key, value)?,
                "K" | "k" => cfg.k = num(key, value)?,
                "candidates_per_turn" => cfg.candidates_per_turn = num(key, value)?,
                "budget" => cfg.budget = num(key, value)?,
                "markets" => {
                    cfg.markets = value
                        .split(';')
                        .filter(|s| !s.trim().is_empty())
                        .map(MarketSpec::parse)
                        .collect::<Result<_>>()?
                }
                "levels" => {
                    cfg.levels = value
                        .split(',')
                        .map(|v| num(key, v.trim()))
                        .collect::<Result<_>>()?
                }
                "n_traces" => cfg.n_traces = num(key, value)?,
                "max_steps" => cfg.max_steps = num(key, value)?,
                "quiescence_tol" => cfg.quiescence_tol = num(key, value)?,
                "seed" => cfg.seed = num(key, value)?,
                _ => return Err(config_error(key, "unknown key")),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// The trader population of one trace.
    pub fn traders(&self, trace: u64) -> Vec<Trader> {
        sample_traders(
            self,
            &mut SplitMix64::derive(self.seed, &[TAG_TRADERS, trace]),
        )
    }

    pub fn streams(&self, trace: u64) -> TraceStreams {
        TraceStreams {
            seed: self.seed,
            trace,
        }
    }
}

/// Convergence of one market on one trace after `step` trades.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRecord {
    pub trace: u64,
    pub market: String,
    pub step: u64,
    pub level: u32,
    /// `KL(clearing || market)` in nats.
    pub kl: f64,
    /// Total charged by the market maker.
    pub cumulative_cost: f64,
}

/// Runs one market on one trace, calling `emit` after step 0 and after every trade.
pub fn run_trace(
    cfg: &SimConfig,
    trace: u64,
    spec: &MarketSpec,
    mut emit: impl FnMut(ConvergenceRecord),
) -> Result<Simulation> {
    let traders = cfg.traders(trace);
    let clearing = clearing_price(&traders, cfg.k)?;
    let targets: Vec<(u32, Vec<f64>)> = cfg
        .levels
        .iter()
        .map(|l| (*l, coarsen(&clearing, *l)))
        .collect();
    let mut sim = Simulation::new(
        traders,
        spec.build(cfg.budget)?,
        spec.precision(),
        cfg.k,
        cfg.candidates_per_turn,
        cfg.quiescence_tol,
        cfg.streams(trace),
    );
    let label = spec.label();
    let mut record = |sim: &Simulation, step: u64| {
        for (level, target) in &targets {
            emit(ConvergenceRecord {
                trace,
                market: label.clone(),
                step,
                level: *level,
                kl: kl_divergence(target, &sim.market().distribution(*level)),
                cumulative_cost: sim.revenue(),
            });
        }
    };
    record(&sim, 0);
    for turn in 0..cfg.max_steps {
        match sim.step(turn)? {
            StepOutcome::Trade(_) => record(&sim, turn + 1),
            StepOutcome::Quiescent => break,
        }
    }
    Ok(sim)
}

/// Every trace on every configured market.
pub fn run_experiment(cfg: &SimConfig) -> Result<Vec<ConvergenceRecord>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for trace in 0..cfg.n_traces as u64 {
        for spec in &cfg.markets {
            run_trace(cfg, trace, spec, |r| out.push(r))?;
        }
    }
    Ok(out)
}

/// Mean over traces of one market at one level and step.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanPoint {
    pub market: String,
    pub level: u32,
    pub step: u64,
    pub kl: f64,
    pub cumulative_cost: f64,
}

/// Averages records over traces. A trace that went quiescent early keeps
/// contributing its final state to later steps.
pub fn mean_curves(records: &[ConvergenceRecord]) -> Vec<MeanPoint> {
    let mut series: BTreeMap<(String, u32), BTreeMap<u64, Vec<(u64, f64, f64)>>> = BTreeMap::new();
    for r in records {
        series
            .entry((r.market.clone(), r.level))
            .or_default()
            .entry(r.trace)
            .or_default()
            .push((r.step, r.kl, r.cumulative_cost));
    }
    let mut out = Vec::new();
    for ((market, level), traces) in series {
        let last = traces
            .values()
            .filter_map(|v| v.last().map(|p| p.0))
            .max()
            .unwrap_or(0);
        let mut sums = vec![(0.0, 0.0); last as usize + 1];
        for points in traces.values() {
            let mut it = points.iter().peekable();
            let mut current = (0.0, 0.0);
            for (step, sum) in sums.iter_mut().enumerate() {
                while let Some(p) = it.peek() {
                    if p.0 > step as u64 {
                        break;
                    }
                    current = (p.1, p.2);
                    it.next();
                }
                sum.0 += current.0;
                sum.1 += current.1;
            }
        }
        let n = traces.len() as f64;
        out.extend(
            sums.into_iter()
                .enumerate()
                .map(|(step, (kl, cost))| MeanPoint {
                    market: market.clone(),
                    level,
                    step: step as u64,
                    kl: kl / n,
                    cumulative_cost: cost / n,
                }),
        );
    }
    out
}
