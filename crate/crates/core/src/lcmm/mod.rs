//! Multi-resolution linearly constrained market maker (LCMM).
//!
//! Level `k` of the market is an LMSR with liquidity `b_k` over the `2^k`
//! dyadic intervals of width `2^-k`. The levels are tied together by automatic
//! arbitrage purchases `eta`, so that every node's price equals the total
//! price of its descendants at every finer level. The effective state of
//! node `z` at level `k` is
//!
//! ```text
//! theta~_z = theta_z + B_k eta_z - b_k * (sum of eta over strict ancestors of z)
//! ```
//!
//! with `B_k = b_{k+1} + b_{k+2} + ...`. Only nodes touched by a trade are
//! materialized; everything below a materialized leaf has `theta = eta = 0`.
//!
//! Prices along a search path are tracked as `(log mu, log(1 - mu))` pairs so
//! that share quantities far larger than the level liquidities neither overflow
//! nor collapse prices to exactly 0 or 1.

mod schedule;

use serde::{Deserialize, Serialize};

pub use schedule::LiquiditySchedule;

use crate::dyadic::{spread_mass, Dyadic, Interval};
use crate::error::{check_shares, MarketError, Result};
use crate::numeric::{log_add_exp, log_sum_exp};
use crate::{MarketMaker, VisitCounter};

#[derive(Clone, Debug)]
struct Node {
    lo: Dyadic,
    hi: Dyadic,
    level: u32,
    theta: f64,
    eta: f64,
    children: Option<(usize, usize)>,
}

impl Node {
    fn leaf(lo: Dyadic, hi: Dyadic, level: u32) -> Self {
        Node {
            lo,
            hi,
            level,
            theta: 0.0,
            eta: 0.0,
            children: None,
        }
    }
}

/// Persisted form of one node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LcmmNodeRecord {
    pub lo_num: u64,
    pub lo_prec: u32,
    pub hi_num: u64,
    pub hi_prec: u32,
    pub theta: f64,
    pub eta: f64,
}

/// Read-only view of a materialized node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LcmmNodeView {
    pub interval: Interval,
    pub level: u32,
    pub theta: f64,
    pub eta: f64,
    pub is_leaf: bool,
}

/// Outcome of one closed-form arbitrage removal at a node `y`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArbitrageStep {
    /// Shares of the arbitrage bundle bought, added to `eta_y`.
    pub t: f64,
    /// Price of `y` at its own level afterwards.
    pub mu_y: f64,
    /// Factor applied to every other price at the level of `y`.
    pub level_scale: f64,
    /// Price of `y` at every finer level afterwards; equals `mu_y`.
    pub mu_other: f64,
    /// Cost of the automatic purchase, summed over the affected levels.
    pub cost: f64,
}

/// Arbitrage removal between level `level` (price `mu_y`) and all finer
/// levels (common price `mu_other`) for a node at `level >= 1`.
pub fn remove_arbitrage(
    schedule: &LiquiditySchedule,
    level: u32,
    mu_y: f64,
    mu_other: f64,
) -> Result<ArbitrageStep> {
    const EPS: f64 = 1e-300;
    for mu in [mu_y, mu_other] {
        if !(mu > EPS && mu < 1.0 - EPS) {
            return Err(MarketError::DegeneratePrice { level });
        }
    }
    let b = schedule.b(level)?;
    let below = schedule.cumulative_liquidity(level)?;
    let above = schedule.cumulative_liquidity(level - 1)?;
    let t = b / above * (((1.0 - mu_y) / mu_y) * (mu_other / (1.0 - mu_other))).ln();
    let grow = (t * below / b).exp();
    let s = mu_y * grow + 1.0 - mu_y;
    let s_other = mu_other * (-t).exp() + 1.0 - mu_other;
    Ok(ArbitrageStep {
        t,
        mu_y: mu_y * grow / s,
        level_scale: 1.0 / s,
        mu_other: mu_other * (-t).exp() / s_other,
        cost: b * s.ln() + below * s_other.ln(),
    })
}

/// Position during a descent. `idx` is `None` once below the materialized tree.
#[derive(Clone, Copy, Debug)]
struct Cursor {
    idx: Option<usize>,
    lo: Dyadic,
    hi: Dyadic,
    level: u32,
}

type Key = (Dyadic, u32);

/// Pending `(d theta, d eta)` per node, keyed by `(lo, level)`.
/// A two-sided trade touches at most two root paths, so a flat list beats hashing.
#[derive(Default)]
struct Overlay(Vec<(Key, (f64, f64))>);

impl Overlay {
    fn get(&self, key: &Key) -> Option<(f64, f64)> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    fn add(&mut self, key: Key, dt: f64, de: f64) {
        match self.0.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => {
                v.0 += dt;
                v.1 += de;
            }
            None => self.0.push((key, (dt, de))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct LevelDelta {
    path: (f64, f64),
    sibling: (f64, f64),
}

/// Everything a one-sided buy would do, computed without touching the tree.
#[derive(Clone, Debug)]
struct Plan {
    alpha: Dyadic,
    cost: f64,
    root_theta: f64,
    levels: Vec<LevelDelta>,
    visits: usize,
}

impl Plan {
    fn record(&self, overlay: &mut Overlay) {
        if self.root_theta != 0.0 {
            overlay.add((Dyadic::ZERO, 0), self.root_theta, 0.0);
        }
        let mut lo = Dyadic::ZERO;
        let mut hi = Dyadic::ONE;
        for (i, d) in self.levels.iter().enumerate() {
            let level = i as u32 + 1;
            let mid = lo.midpoint(hi).expect("levels stay within 62 bits");
            let ((plo, phi), slo) = if self.alpha.bit(level) {
                ((mid, hi), lo)
            } else {
                ((lo, mid), mid)
            };
            for (key, (dt, de)) in [((plo, level), d.path), ((slo, level), d.sibling)] {
                if dt != 0.0 || de != 0.0 {
                    overlay.add(key, dt, de);
                }
            }
            lo = plo;
            hi = phi;
        }
    }
}

/// One level of the search path, as seen on the way down.
struct PathStep {
    level: u32,
    sibling_is_right: bool,
    log_mu: f64,
    log_mu_sibling: f64,
    log_outside_parent: f64,
}

const ROOT: usize = 0;

#[derive(Clone, Debug)]
pub struct LcmmTree {
    nodes: Vec<Node>,
    schedule: LiquiditySchedule,
    /// `B_0..=B_K` of a finite schedule, empty otherwise.
    cumulative: Vec<f64>,
    visits: VisitCounter,
}

impl LcmmTree {
    /// A fresh market: only the root `[0, 1)`.
    pub fn new(schedule: LiquiditySchedule) -> Result<Self> {
        schedule.validate()?;
        let cumulative = match &schedule {
            LiquiditySchedule::ExplicitFinite { levels } => (0..=levels.len())
                .map(|k| levels[k..].iter().sum())
                .collect(),
            LiquiditySchedule::GeometricTail { .. } => Vec::new(),
        };
        Ok(LcmmTree {
            nodes: vec![Node::leaf(Dyadic::ZERO, Dyadic::ONE, 0)],
            schedule,
            cumulative,
            visits: VisitCounter::default(),
        })
    }

    pub fn schedule(&self) -> &LiquiditySchedule {
        &self.schedule
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Deepest materialized level.
    pub fn depth(&self) -> u32 {
        self.nodes.iter().map(|n| n.level).max().unwrap_or(0)
    }

    /// Every materialized node in pre-order.
    pub fn nodes(&self) -> Vec<LcmmNodeView> {
        self.preorder()
            .into_iter()
            .map(|z| {
                let n = &self.nodes[z];
                LcmmNodeView {
                    interval: Interval::new(n.lo, n.hi).expect("node intervals are non-empty"),
                    level: n.level,
                    theta: n.theta,
                    eta: n.eta,
                    is_leaf: n.children.is_none(),
                }
            })
            .collect()
    }

    fn preorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![ROOT];
        while let Some(z) = stack.pop() {
            out.push(z);
            if let Some((l, r)) = self.nodes[z].children {
                stack.push(r);
                stack.push(l);
            }
        }
        out
    }

    /// `(b_k, B_k, B_{k-1})` for a level `k >= 1`.
    fn liquidity(&self, level: u32) -> Result<(f64, f64, f64)> {
        if let LiquiditySchedule::ExplicitFinite { levels } = &self.schedule {
            let k = level as usize;
            if k == 0 || k > levels.len() {
                return Err(MarketError::LevelOutOfRange {
                    level,
                    max: levels.len() as u32,
                });
            }
            return Ok((levels[k - 1], self.cumulative[k], self.cumulative[k - 1]));
        }
        Ok((
            self.schedule.b(level)?,
            self.schedule.cumulative_liquidity(level)?,
            self.schedule.cumulative_liquidity(level - 1)?,
        ))
    }

    /// `(theta + B_k eta) / b_k` for a node at level `k >= 1`.
    fn exponent(&self, level: u32, theta: f64, eta: f64) -> Result<f64> {
        let (b, big, _) = self.liquidity(level)?;
        Ok((theta + big * eta) / b)
    }

    fn state(&self, cur: &Cursor, overlay: &Overlay) -> (f64, f64) {
        let (mut theta, mut eta) = cur
            .idx
            .map_or((0.0, 0.0), |z| (self.nodes[z].theta, self.nodes[z].eta));
        if let Some((dt, de)) = overlay.get(&(cur.lo, cur.level)) {
            theta += dt;
            eta += de;
        }
        (theta, eta)
    }

    fn children_of(&self, cur: &Cursor) -> (Cursor, Cursor) {
        let mid = cur.lo.midpoint(cur.hi).expect("levels stay within 62 bits");
        let kids = cur.idx.and_then(|z| self.nodes[z].children);
        let level = cur.level + 1;
        (
            Cursor {
                idx: kids.map(|k| k.0),
                lo: cur.lo,
                hi: mid,
                level,
            },
            Cursor {
                idx: kids.map(|k| k.1),
                lo: mid,
                hi: cur.hi,
                level,
            },
        )
    }

    fn check_endpoint(&self, e: Dyadic) -> Result<()> {
        if let Some(levels) = self.schedule.max_level() {
            if e.precision() > levels && !e.is_one() {
                return Err(MarketError::PrecisionExceedsSchedule {
                    endpoint: e.to_string(),
                    precision: e.precision(),
                    levels,
                });
            }
        }
        Ok(())
    }

    /// Computes the effect of buying `s` shares of `[alpha, 1)` on top of
    /// the tree plus `overlay`.
    fn plan_upper(&self, alpha: Dyadic, s: f64, overlay: &Overlay) -> Result<Plan> {
        if alpha.is_zero() {
            // level 0 holds a single security priced 1: a pure cash transfer
            return Ok(Plan {
                alpha,
                cost: s,
                root_theta: s,
                levels: Vec::new(),
                visits: 1,
            });
        }
        let m = alpha.precision();

        let mut path = Vec::with_capacity(m as usize);
        let mut cur = Cursor {
            idx: Some(ROOT),
            lo: Dyadic::ZERO,
            hi: Dyadic::ONE,
            level: 0,
        };
        let (mut log_mu, mut log_out) = (0.0, f64::NEG_INFINITY);
        let mut visits = 1;
        for level in 1..=m {
            let (left, right) = self.children_of(&cur);
            let go_right = alpha.bit(level);
            let (next, sibling) = if go_right {
                (right, left)
            } else {
                (left, right)
            };
            let (tn, en) = self.state(&next, overlay);
            let (ts, es) = self.state(&sibling, overlay);
            let xn = self.exponent(level, tn, en)?;
            let xs = self.exponent(level, ts, es)?;
            let norm = log_add_exp(xn, xs);
            let step = PathStep {
                level,
                sibling_is_right: !go_right,
                log_mu: log_mu + (xn - norm),
                log_mu_sibling: log_mu + (xs - norm),
                log_outside_parent: log_out,
            };
            log_out = log_add_exp(log_out, step.log_mu_sibling);
            log_mu = step.log_mu;
            path.push(step);
            cur = next;
            visits += 2;
        }

        let mut levels = vec![LevelDelta::default(); m as usize];
        let mut cost = 0.0;
        // shift of the current path node's log weight at all finer levels
        let mut shift = 0.0;
        for step in path.iter().rev() {
            let level = step.level;
            let (b, below, above) = self.liquidity(level)?;
            // log weights of (path node, sibling, outside the parent): at this
            // level, and at the finer levels, which are coherent among themselves
            let mut own = [step.log_mu, step.log_mu_sibling, step.log_outside_parent];
            let mut fine = [
                step.log_mu + shift,
                step.log_mu_sibling,
                step.log_outside_parent,
            ];
            let before = log_add_exp(own[0], own[1]);
            let delta = &mut levels[level as usize - 1];

            let add_shares = |own: &mut [f64; 3], i: usize| b * shift_weight(own, i, s / b);
            let arbitrage = |own: &mut [f64; 3], fine: &mut [f64; 3], i: usize| -> (f64, f64) {
                let logit_own = own[i] - others(own, i);
                let logit_fine = fine[i] - others(fine, i);
                let t = b / above * (logit_fine - logit_own);
                let c = b * shift_weight(own, i, t * below / b) + below * shift_weight(fine, i, -t);
                (t, c)
            };

            if level == m {
                cost += add_shares(&mut own, 0);
                delta.path.0 += s;
            }
            if below > 0.0 {
                let (t, c) = arbitrage(&mut own, &mut fine, 0);
                delta.path.1 += t;
                cost += c;
            }
            if step.sibling_is_right {
                cost += add_shares(&mut own, 1);
                delta.sibling.0 += s;
                if below > 0.0 {
                    let (t, c) = arbitrage(&mut own, &mut fine, 1);
                    delta.sibling.1 += t;
                    cost += c;
                }
            }
            shift = log_add_exp(own[0], own[1]) - before;
            if !(shift.is_finite()
                && cost.is_finite()
                && delta.path.1.is_finite()
                && delta.sibling.1.is_finite())
            {
                return Err(MarketError::DegeneratePrice { level });
            }
        }
        Ok(Plan {
            alpha,
            cost,
            root_theta: 0.0,
            levels,
            visits,
        })
    }

    /// Makes the plan permanent, materializing the search path as needed.
    fn apply(&mut self, plan: &Plan) {
        self.nodes[ROOT].theta += plan.root_theta;
        let mut z = ROOT;
        for (i, d) in plan.levels.iter().enumerate() {
            let level = i as u32 + 1;
            let (l, r) = self.split(z);
            let (next, sibling) = if plan.alpha.bit(level) {
                (r, l)
            } else {
                (l, r)
            };
            let n = &mut self.nodes[next];
            n.theta += d.path.0;
            n.eta += d.path.1;
            let n = &mut self.nodes[sibling];
            n.theta += d.sibling.0;
            n.eta += d.sibling.1;
            z = next;
        }
    }

    fn split(&mut self, z: usize) -> (usize, usize) {
        if let Some(kids) = self.nodes[z].children {
            return kids;
        }
        let n = &self.nodes[z];
        let mid = n.lo.midpoint(n.hi).expect("levels stay within 62 bits");
        let (lo, hi, level) = (n.lo, n.hi, n.level + 1);
        let l = self.nodes.len();
        self.nodes.push(Node::leaf(lo, mid, level));
        self.nodes.push(Node::leaf(mid, hi, level));
        self.nodes[z].children = Some((l, l + 1));
        (l, l + 1)
    }

    /// Plans a full two-sided trade. The second leg sees the first through an overlay.
    fn plan(&self, interval: &Interval, s: f64) -> Result<(Plan, Option<Plan>)> {
        check_shares(s)?;
        self.check_endpoint(interval.lo())?;
        self.check_endpoint(interval.hi())?;
        let mut overlay = Overlay::default();
        let first = self.plan_upper(interval.lo(), s, &overlay)?;
        if interval.hi().is_one() {
            return Ok((first, None));
        }
        first.record(&mut overlay);
        let second = self.plan_upper(interval.hi(), -s, &overlay)?;
        Ok((first, Some(second)))
    }

    /// Price mass of `[lo, hi)` inside materialized node `z` whose price is `exp(log_mu)`.
    fn mass(
        &self,
        z: usize,
        log_mu: f64,
        lo: Dyadic,
        hi: Dyadic,
        visits: &mut usize,
    ) -> Result<f64> {
        *visits += 1;
        let n = &self.nodes[z];
        if n.lo == lo && n.hi == hi {
            return Ok(log_mu.exp());
        }
        let Some((l, r)) = n.children else {
            return Ok(Dyadic::distance(lo, hi) / Dyadic::distance(n.lo, n.hi) * log_mu.exp());
        };
        let level = n.level + 1;
        let xl = self.exponent(level, self.nodes[l].theta, self.nodes[l].eta)?;
        let xr = self.exponent(level, self.nodes[r].theta, self.nodes[r].eta)?;
        let norm = log_add_exp(xl, xr);
        let mid = self.nodes[r].lo;
        let left = |lo, hi, v: &mut usize| self.mass(l, log_mu + xl - norm, lo, hi, v);
        let right = |lo, hi, v: &mut usize| self.mass(r, log_mu + xr - norm, lo, hi, v);
        if hi <= mid {
            left(lo, hi, visits)
        } else if lo >= mid {
            right(lo, hi, visits)
        } else {
            Ok(left(lo, mid, visits)? + right(mid, hi, visits)?)
        }
    }

    /// Log price of every materialized node, from the coherent descent.
    fn descent_log_prices(&self) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.nodes.len()];
        for z in self.preorder() {
            if let Some((l, r)) = self.nodes[z].children {
                let level = self.nodes[z].level + 1;
                let xl = self.exponent(level, self.nodes[l].theta, self.nodes[l].eta)?;
                let xr = self.exponent(level, self.nodes[r].theta, self.nodes[r].eta)?;
                let norm = log_add_exp(xl, xr);
                out[l] = out[z] + xl - norm;
                out[r] = out[z] + xr - norm;
            }
        }
        Ok(out)
    }

    /// Direct per-level prices, independent of the descent formula.
    ///
    /// Returns, for every node, its log price in its own level's LMSR and the
    /// log of the total price of its children one level down (for leaves, of
    /// its unmaterialized children). The latter is `None` when no finer level
    /// exists.
    fn level_log_prices(&self) -> Result<Vec<(f64, Option<f64>)>> {
        let n = self.nodes.len();
        // sum of eta over ancestors-or-self, and over strict ancestors
        let mut with_self = vec![0.0; n];
        let mut strict = vec![0.0; n];
        for z in self.preorder() {
            with_self[z] = strict[z] + self.nodes[z].eta;
            if let Some((l, r)) = self.nodes[z].children {
                strict[l] = with_self[z];
                strict[r] = with_self[z];
            }
        }
        let deepest = match self.schedule.max_level() {
            Some(k) => k.min(self.depth() + 1),
            None => self.depth() + 1,
        };
        // log normalizer of every level 1..=deepest
        let mut lognorm = vec![0.0; deepest as usize + 1];
        for (k, slot) in lognorm.iter_mut().enumerate().skip(1) {
            let k = k as u32;
            let mut terms = Vec::new();
            for (z, node) in self.nodes.iter().enumerate() {
                if node.level == k {
                    terms.push(self.exponent(k, node.theta, node.eta)? - strict[z]);
                } else if node.level < k && node.children.is_none() {
                    terms.push(-with_self[z] + (k - node.level) as f64 * std::f64::consts::LN_2);
                }
            }
            *slot = log_sum_exp(terms);
        }
        let own = |z: usize| -> Result<f64> {
            let node = &self.nodes[z];
            if node.level == 0 {
                return Ok(0.0);
            }
            Ok(self.exponent(node.level, node.theta, node.eta)?
                - strict[z]
                - lognorm[node.level as usize])
        };
        let mut out = Vec::with_capacity(n);
        for z in 0..n {
            let node = &self.nodes[z];
            let finer = match node.children {
                Some((l, r)) => Some(log_add_exp(own(l)?, own(r)?)),
                None if node.level < deepest => {
                    Some(-with_self[z] + std::f64::consts::LN_2 - lognorm[node.level as usize + 1])
                }
                None => None,
            };
            out.push((own(z)?, finer));
        }
        Ok(out)
    }

    /// Largest `|mu_y - mu_children(y)|` over materialized nodes, where both
    /// prices come straight from the level LMSRs.
    pub fn coherence_violation(&self) -> Result<f64> {
        Ok(self
            .level_log_prices()?
            .into_iter()
            .filter_map(|(own, finer)| finer.map(|f| (own.exp() - f.exp()).abs()))
            .fold(0.0, f64::max))
    }

    /// Fails with `IncoherentState` if coherence is violated beyond `tolerance`.
    pub fn check_coherence(&self, tolerance: f64) -> Result<()> {
        let violation = self.coherence_violation()?;
        if violation > tolerance {
            return Err(MarketError::IncoherentState {
                violation,
                tolerance,
            });
        }
        Ok(())
    }

    /// Maintenance pass: re-derives prices from scratch and removes any
    /// residual arbitrage bottom-up. Costs `O(n^2 * depth)`; returns the
    /// violation left afterwards.
    pub fn recohere(&mut self) -> Result<f64> {
        let mut order: Vec<usize> = (0..self.nodes.len())
            .filter(|&z| self.nodes[z].level > 0)
            .collect();
        order.sort_by_key(|&z| std::cmp::Reverse(self.nodes[z].level));
        for _ in 0..64 {
            if self.coherence_violation()? <= 1e-14 {
                break;
            }
            for &z in &order {
                let level = self.nodes[z].level;
                let below = self.schedule.cumulative_liquidity(level)?;
                if below == 0.0 {
                    continue;
                }
                let (own, finer) = self.level_log_prices()?[z];
                let Some(finer) = finer else { continue };
                let logit = |l: f64| l - (-l.exp()).ln_1p();
                let b = self.schedule.b(level)?;
                let above = self.schedule.cumulative_liquidity(level - 1)?;
                let t = b / above * (logit(finer) - logit(own));
                if !t.is_finite() {
                    return Err(MarketError::DegeneratePrice { level });
                }
                self.nodes[z].eta += t;
            }
        }
        self.coherence_violation()
    }

    pub fn to_records(&self) -> Vec<LcmmNodeRecord> {
        self.preorder()
            .into_iter()
            .map(|z| {
                let n = &self.nodes[z];
                LcmmNodeRecord {
                    lo_num: n.lo.numerator(),
                    lo_prec: n.lo.precision(),
                    hi_num: n.hi.numerator(),
                    hi_prec: n.hi.precision(),
                    theta: n.theta,
                    eta: n.eta,
                }
            })
            .collect()
    }

    /// Rebuilds a tree from [`LcmmTree::to_records`] output.
    ///
    /// The midpoint structure makes the shape implicit: a node is inner
    /// exactly when the next record is its left half.
    pub fn from_records(schedule: LiquiditySchedule, records: &[LcmmNodeRecord]) -> Result<Self> {
        let mut tree = LcmmTree::new(schedule)?;
        let parsed = records
            .iter()
            .map(|r| {
                if !(r.theta.is_finite() && r.eta.is_finite()) {
                    return Err(MarketError::NonFiniteShares(if r.theta.is_finite() {
                        r.eta
                    } else {
                        r.theta
                    }));
                }
                Ok((
                    Dyadic::new(r.lo_num, r.lo_prec)?,
                    Dyadic::new(r.hi_num, r.hi_prec)?,
                    r.theta,
                    r.eta,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut cursor = 0;
        tree.nodes.clear();
        tree.read_subtree(&parsed, &mut cursor, Dyadic::ZERO, Dyadic::ONE, 0)?;
        if cursor != parsed.len() {
            return Err(MarketError::StructureViolation(format!(
                "{} trailing node records",
                parsed.len() - cursor
            )));
        }
        if let Some(k) = tree.schedule.max_level() {
            if tree.depth() > k {
                return Err(MarketError::StructureViolation(format!(
                    "tree depth {} exceeds the {k} schedule levels",
                    tree.depth()
                )));
            }
        }
        Ok(tree)
    }

    fn read_subtree(
        &mut self,
        records: &[(Dyadic, Dyadic, f64, f64)],
        cursor: &mut usize,
        lo: Dyadic,
        hi: Dyadic,
        level: u32,
    ) -> Result<usize> {
        let &(rlo, rhi, theta, eta) = records
            .get(*cursor)
            .ok_or_else(|| MarketError::StructureViolation("node list ends early".into()))?;
        if rlo != lo || rhi != hi {
            return Err(MarketError::StructureViolation(format!(
                "expected node [{lo}, {hi}), found [{rlo}, {rhi})"
            )));
        }
        *cursor += 1;
        let z = self.nodes.len();
        self.nodes.push(Node {
            theta,
            eta,
            ..Node::leaf(lo, hi, level)
        });
        let mid = lo.midpoint(hi);
        let inner = matches!((records.get(*cursor), mid), (Some(&(nlo, nhi, _, _)), Some(m)) if nlo == lo && nhi == m);
        if let (true, Some(mid)) = (inner, mid) {
            let l = self.read_subtree(records, cursor, lo, mid, level + 1)?;
            let r = self.read_subtree(records, cursor, mid, hi, level + 1)?;
            self.nodes[z].children = Some((l, r));
        }
        Ok(z)
    }
}

fn lse3(w: &[f64; 3]) -> f64 {
    log_sum_exp(w.iter().copied())
}

/// Adds `x` to log weight `i`; returns the change of the log normalizer.
fn shift_weight(w: &mut [f64; 3], i: usize, x: f64) -> f64 {
    let before = lse3(w);
    w[i] += x;
    lse3(w) - before
}

fn others(w: &[f64; 3], i: usize) -> f64 {
    match i {
        0 => log_add_exp(w[1], w[2]),
        1 => log_add_exp(w[0], w[2]),
        _ => log_add_exp(w[0], w[1]),
    }
}

impl MarketMaker for LcmmTree {
    /// Two-sided intervals are priced by splitting the descent where the
    /// endpoints separate, so no cancellation occurs.
    fn price(&self, interval: &Interval) -> Result<f64> {
        let mut visits = 0;
        let p = self.mass(ROOT, 0.0, interval.lo(), interval.hi(), &mut visits)?;
        self.visits.set(visits);
        Ok(p)
    }

    fn cost(&self, interval: &Interval, shares: f64) -> Result<f64> {
        let (first, second) = self.plan(interval, shares)?;
        self.visits
            .set(first.visits + second.as_ref().map_or(0, |p| p.visits));
        if shares == 0.0 {
            return Ok(0.0);
        }
        Ok(first.cost + second.map_or(0.0, |p| p.cost))
    }

    fn buy(&mut self, interval: &Interval, shares: f64) -> Result<f64> {
        let (first, second) = self.plan(interval, shares)?;
        if shares == 0.0 {
            self.visits.set(0);
            return Ok(0.0);
        }
        self.apply(&first);
        let mut cost = first.cost;
        let mut visits = first.visits;
        if let Some(second) = second {
            // the overlay already agrees with the applied first leg
            self.apply(&second);
            cost += second.cost;
            visits += second.visits;
        }
        self.visits.set(visits);
        Ok(cost)
    }

    fn loss_bound(&self) -> f64 {
        self.schedule.loss_bound()
    }

    fn initial_potential(&self) -> f64 {
        self.schedule.loss_bound()
    }

    fn distribution(&self, bits: u32) -> Vec<f64> {
        let mut out = vec![0.0; 1usize << bits];
        let Ok(log_mu) = self.descent_log_prices() else {
            return out;
        };
        for (z, n) in self.nodes.iter().enumerate() {
            if n.children.is_none() {
                spread_mass(&mut out, n.lo, n.hi, log_mu[z].exp(), bits);
            }
        }
        out
    }

    fn last_visits(&self) -> usize {
        self.visits.get()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(n: u64, p: u32) -> Dyadic {
        Dyadic::new(n, p).unwrap()
    }

    fn two_level() -> LcmmTree {
        LcmmTree::new(LiquiditySchedule::explicit(vec![1.0, 1.0]).unwrap()).unwrap()
    }

    #[test]
    fn fresh_prices_are_uniform() {
        let t = LcmmTree::new(LiquiditySchedule::geometric(1.0, 0.5).unwrap()).unwrap();
        assert_eq!(t.price(&Interval::upper(d(3, 3)).unwrap()).unwrap(), 0.625);
        let i = Interval::from_parts((5, 7), (3, 3)).unwrap();
        assert_eq!(t.price(&i).unwrap(), 3.0 / 8.0 - 5.0 / 128.0);
    }

    #[test]
    fn two_level_worked_example() {
        let mut t = two_level();
        let upper = Interval::upper(d(1, 1)).unwrap();
        let e = 1f64.exp();
        let quoted = t.cost(&upper, 1.0).unwrap();
        let charged = t.buy(&upper, 1.0).unwrap();
        assert_eq!(quoted, charged);
        // levels >= 1 act as one LMSR with liquidity B_0 = 2 on coherent prices
        let expected = 2.0 * ((1.0 + e.sqrt()) / 2.0).ln();
        assert!((charged - expected).abs() < 1e-15);
        let p = t.price(&upper).unwrap();
        assert!((p - 1.0 / (1.0 + (-0.5f64).exp())).abs() < 1e-15);
        assert!((p - 0.622459).abs() < 1e-6);
        let upper_node = t.nodes().into_iter().find(|n| n.interval == upper).unwrap();
        assert!((upper_node.eta + 0.5).abs() < 1e-15);
        assert!(t.coherence_violation().unwrap() < 1e-15);
    }

    #[test]
    fn linear_arbitrage_step() {
        let s = LiquiditySchedule::explicit(vec![1.0, 1.0]).unwrap();
        let e = 1f64.exp();
        let step = remove_arbitrage(&s, 1, e / (1.0 + e), 0.5).unwrap();
        assert!((step.t + 0.5).abs() < 1e-15);
        assert!((step.mu_y - step.mu_other).abs() < 1e-15);
        assert!((step.mu_y - 1.0 / (1.0 + (-0.5f64).exp())).abs() < 1e-15);

        let none = remove_arbitrage(&s, 1, 0.3, 0.3).unwrap();
        assert!(none.t.abs() < 1e-15);
        assert!(none.cost.abs() < 1e-15);

        assert!(matches!(
            remove_arbitrage(&s, 1, 0.0, 0.5),
            Err(MarketError::DegeneratePrice { level: 1 })
        ));
    }

    #[test]
    fn full_interval_is_a_cash_transfer() {
        let mut t = two_level();
        t.buy(&Interval::upper(d(1, 2)).unwrap(), 0.7).unwrap();
        let probe = Interval::upper(d(3, 4)).unwrap();
        let before = t.price(&probe).unwrap();
        assert_eq!(t.buy(&Interval::full(), 2.5).unwrap(), 2.5);
        assert_eq!(t.price(&probe).unwrap(), before);
    }

    #[test]
    fn zero_shares_do_not_materialize() {
        let mut t = two_level();
        let i = Interval::from_parts((1, 2), (3, 2)).unwrap();
        assert_eq!(t.cost(&i, 0.0).unwrap(), 0.0);
        assert_eq!(t.buy(&i, 0.0).unwrap(), 0.0);
        assert_eq!(t.node_count(), 1);
    }

    #[test]
    fn precision_beyond_schedule_is_rejected() {
        let mut t = two_level();
        let i = Interval::upper(d(1, 3)).unwrap();
        assert!(matches!(
            t.buy(&i, 1.0),
            Err(MarketError::PrecisionExceedsSchedule { .. })
        ));
        assert!(t.price(&i).is_ok());
    }

    #[test]
    fn recohere_repairs_perturbed_state() {
        let mut t =
            LcmmTree::new(LiquiditySchedule::explicit(vec![0.4, 0.3, 0.2, 0.1]).unwrap()).unwrap();
        t.buy(&Interval::from_parts((1, 2), (11, 4)).unwrap(), 1.3)
            .unwrap();
        t.buy(&Interval::upper(d(3, 3)).unwrap(), -0.6).unwrap();
        let z = t.nodes.iter().position(|n| n.level == 2).unwrap();
        t.nodes[z].eta += 0.3;
        assert!(t.coherence_violation().unwrap() > 1e-3);
        assert!(t.recohere().unwrap() < 1e-12);
    }

    #[test]
    fn records_round_trip() {
        let mut t = LcmmTree::new(LiquiditySchedule::geometric(0.5, 0.5).unwrap()).unwrap();
        t.buy(&Interval::from_parts((3, 3), (13, 4)).unwrap(), 2.0)
            .unwrap();
        t.buy(&Interval::upper(d(5, 5)).unwrap(), -1.0).unwrap();
        let back = LcmmTree::from_records(t.schedule().clone(), &t.to_records()).unwrap();
        for a in 0..32u64 {
            let i = Interval::upper(d(a, 5)).unwrap();
            assert_eq!(back.price(&i).unwrap(), t.price(&i).unwrap());
        }
        let mut broken = t.to_records();
        broken.swap(1, 2);
        assert!(LcmmTree::from_records(t.schedule().clone(), &broken).is_err());
    }
}
