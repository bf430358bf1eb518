//! Exact LMSR over `[0, 1)` backed by an AVL tree.
//!
//! Each node `z` covers `[lo_z, hi_z)` and records the bundle shares `s_z`
//! sold on that interval. The market state is `theta(omega) = sum of s_z over
//! nodes containing omega`. Every node also caches
//!
//! ```text
//! L_z = s_z / b + log(hi_z - lo_z)                 (leaf)
//! L_z = s_z / b + logsumexp(L_left, L_right)       (inner)
//! ```
//!
//! so that `exp(L_root)` is the LMSR normalizer divided by the number of
//! outcomes. Prices follow one root-to-leaf path; buys add shares to the
//! canonical cover of `[alpha, 1)`, split at most one leaf and rebalance with
//! share-preserving rotations.

use serde::{Deserialize, Serialize};

use crate::dyadic::{spread_mass, Dyadic, Interval};
use crate::error::{check_shares, MarketError, Result};
use crate::numeric::{lmsr_cost_log, log_add_exp};
use crate::{MarketMaker, VisitCounter};

/// Handle to a node inside an [`LmsrTree`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
struct Node {
    lo: Dyadic,
    hi: Dyadic,
    height: u32,
    shares: f64,
    log_partial: f64,
    children: Option<(usize, usize)>,
}

impl Node {
    fn leaf(lo: Dyadic, hi: Dyadic) -> Self {
        Node {
            lo,
            hi,
            height: 0,
            shares: 0.0,
            log_partial: Dyadic::distance(lo, hi).ln(),
            children: None,
        }
    }
}

/// Persisted form of one node. `log_partial` is never stored; it is re-derived.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmsrNodeRecord {
    pub lo_num: u64,
    pub lo_prec: u32,
    pub hi_num: u64,
    pub hi_prec: u32,
    pub shares: f64,
    pub height: u32,
}

impl LmsrNodeRecord {
    fn interval(&self) -> Result<(Dyadic, Dyadic)> {
        let lo = Dyadic::new(self.lo_num, self.lo_prec)?;
        let hi = Dyadic::new(self.hi_num, self.hi_prec)?;
        if lo >= hi {
            return Err(MarketError::StructureViolation(format!(
                "empty node [{lo}, {hi})"
            )));
        }
        Ok((lo, hi))
    }
}

#[derive(Clone, Debug)]
pub struct LmsrTree {
    nodes: Vec<Node>,
    b: f64,
    leaves: usize,
    visits: VisitCounter,
}

// The root never moves: rotations keep the rotated node in place and rewire
// its children, so the top of the tree is always slot 0.
const ROOT: usize = 0;

impl LmsrTree {
    /// A fresh market: a single leaf `[0, 1)` with no shares.
    pub fn new(b: f64) -> Result<Self> {
        if !(b.is_finite() && b > 0.0) {
            return Err(MarketError::InvalidLiquidity(format!(
                "b = {b} must be positive and finite"
            )));
        }
        Ok(LmsrTree {
            nodes: vec![Node::leaf(Dyadic::ZERO, Dyadic::ONE)],
            b,
            leaves: 1,
            visits: VisitCounter::default(),
        })
    }

    pub fn liquidity(&self) -> f64 {
        self.b
    }

    /// Number of distinct endpoint values stored in the tree.
    pub fn n_vals(&self) -> usize {
        self.leaves + 1
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn height(&self) -> u32 {
        self.nodes[ROOT].height
    }

    pub fn root(&self) -> NodeId {
        NodeId(ROOT)
    }

    pub fn children(&self, id: NodeId) -> Option<(NodeId, NodeId)> {
        self.nodes[id.0]
            .children
            .map(|(l, r)| (NodeId(l), NodeId(r)))
    }

    pub fn node_interval(&self, id: NodeId) -> Interval {
        let n = &self.nodes[id.0];
        Interval::new(n.lo, n.hi).expect("node intervals are non-empty")
    }

    pub fn node_shares(&self, id: NodeId) -> f64 {
        self.nodes[id.0].shares
    }

    pub fn node_height(&self, id: NodeId) -> u32 {
        self.nodes[id.0].height
    }

    pub fn node_log_partial(&self, id: NodeId) -> f64 {
        self.nodes[id.0].log_partial
    }

    /// Every node in pre-order.
    pub fn preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![ROOT];
        while let Some(z) = stack.pop() {
            out.push(NodeId(z));
            if let Some((l, r)) = self.nodes[z].children {
                stack.push(r);
                stack.push(l);
            }
        }
        out
    }

    fn add_shares(&mut self, z: usize, s: f64) {
        let b = self.b;
        let node = &mut self.nodes[z];
        node.shares += s;
        node.log_partial += s / b;
    }

    fn reset_inner(&mut self, z: usize) {
        let (l, r) = self.nodes[z].children.expect("reset_inner on a leaf");
        let (hl, hr) = (self.nodes[l].height, self.nodes[r].height);
        let lse = log_add_exp(self.nodes[l].log_partial, self.nodes[r].log_partial);
        let node = &mut self.nodes[z];
        node.height = 1 + hl.max(hr);
        node.log_partial = node.shares / self.b + lse;
    }

    fn inner_children(&self, z: usize, what: &str) -> Result<(usize, usize)> {
        self.nodes[z]
            .children
            .ok_or_else(|| MarketError::StructureViolation(format!("{what} is a leaf")))
    }

    /// Left rotation at `id`: `(z1, (z2, z3))` becomes `((z1, z2), z3)`.
    ///
    /// Shares of the removed right child are pushed into its children first,
    /// and the node created on the left starts empty, so the implied state is
    /// untouched. The rotated node keeps its identity and its shares.
    pub fn rotate_left(&mut self, id: NodeId) -> Result<()> {
        let z = id.0;
        let (z1, z23) = self.inner_children(z, "rotated node")?;
        let (z2, z3) = self.inner_children(z23, "right child")?;
        let moved = self.nodes[z23].shares;
        self.add_shares(z2, moved);
        self.add_shares(z3, moved);
        // slot of the removed node is reused for the new one
        let z12 = z23;
        self.nodes[z12] = Node {
            lo: self.nodes[z1].lo,
            hi: self.nodes[z2].hi,
            height: 0,
            shares: 0.0,
            log_partial: 0.0,
            children: Some((z1, z2)),
        };
        self.reset_inner(z12);
        self.nodes[z].children = Some((z12, z3));
        self.reset_inner(z);
        Ok(())
    }

    /// Mirror image of [`LmsrTree::rotate_left`].
    pub fn rotate_right(&mut self, id: NodeId) -> Result<()> {
        let z = id.0;
        let (z12, z3) = self.inner_children(z, "rotated node")?;
        let (z1, z2) = self.inner_children(z12, "left child")?;
        let moved = self.nodes[z12].shares;
        self.add_shares(z1, moved);
        self.add_shares(z2, moved);
        let z23 = z12;
        self.nodes[z23] = Node {
            lo: self.nodes[z2].lo,
            hi: self.nodes[z3].hi,
            height: 0,
            shares: 0.0,
            log_partial: 0.0,
            children: Some((z2, z3)),
        };
        self.reset_inner(z23);
        self.nodes[z].children = Some((z1, z23));
        self.reset_inner(z);
        Ok(())
    }

    fn rebalance(&mut self, z: usize) {
        let Some((l, r)) = self.nodes[z].children else {
            return;
        };
        let h = |n: usize| self.nodes[n].height as i64;
        let sub = |n: usize| self.nodes[n].children.map(|(a, b)| (h(a), h(b)));
        let balance = h(r) - h(l);
        // rotations below cannot fail: a subtree two levels taller is inner
        if balance >= 2 {
            if let Some((rl, rr)) = sub(r) {
                if rl > rr {
                    self.rotate_right(NodeId(r)).expect("inner child");
                }
            }
            self.rotate_left(NodeId(z)).expect("inner child");
        } else if balance <= -2 {
            if let Some((ll, lr)) = sub(l) {
                if lr > ll {
                    self.rotate_left(NodeId(l)).expect("inner child");
                }
            }
            self.rotate_right(NodeId(z)).expect("inner child");
        }
    }

    /// Adds `s` shares of `[alpha, 1)`; returns the number of search-path nodes.
    fn buy_upper(&mut self, alpha: Dyadic, s: f64) -> usize {
        let mut visits = 0;
        self.insert(ROOT, alpha, s, &mut visits);
        visits
    }

    fn insert(&mut self, z: usize, alpha: Dyadic, s: f64, visits: &mut usize) {
        *visits += 1;
        let (lo, hi) = (self.nodes[z].lo, self.nodes[z].hi);
        if lo == alpha {
            self.add_shares(z, s);
            return;
        }
        match self.nodes[z].children {
            None => {
                let l = self.nodes.len();
                self.nodes.push(Node::leaf(lo, alpha));
                self.nodes.push(Node::leaf(alpha, hi));
                self.nodes[z].children = Some((l, l + 1));
                self.leaves += 1;
                self.add_shares(l + 1, s);
                self.reset_inner(z);
            }
            Some((l, r)) => {
                if alpha < self.nodes[r].lo {
                    self.add_shares(r, s);
                    self.insert(l, alpha, s, visits);
                } else {
                    self.insert(r, alpha, s, visits);
                }
                self.rebalance(z);
                self.reset_inner(z);
            }
        }
    }

    /// Log probability masses inside and outside `[lo, hi)` within node `z`.
    ///
    /// `log_above` is the sum of `s/b` over the strict ancestors of `z`. Only
    /// nodes straddling an endpoint are descended into, so at most the two
    /// search paths are visited. Both sums collect positive terms only, which
    /// keeps each side's relative precision even when the other side dominates.
    fn log_split(
        &self,
        z: usize,
        log_above: f64,
        lo: Dyadic,
        hi: Dyadic,
        visits: &mut usize,
    ) -> (f64, f64) {
        *visits += 1;
        let node = &self.nodes[z];
        let log_root = self.nodes[ROOT].log_partial;
        let Some((l, r)) = node.children else {
            let total = log_above + node.log_partial - log_root;
            let (a, c) = (lo.max(node.lo), hi.min(node.hi));
            let width = Dyadic::distance(node.lo, node.hi);
            let inside = Dyadic::distance(a, c) / width;
            let outside = (Dyadic::distance(node.lo, a) + Dyadic::distance(c, node.hi)) / width;
            return (total + inside.ln(), total + outside.ln());
        };
        let below = log_above + node.shares / self.b;
        let (mut inside, mut outside) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for child in [l, r] {
            let c = &self.nodes[child];
            let (part_in, part_out) = if c.hi <= lo || c.lo >= hi {
                (f64::NEG_INFINITY, below + c.log_partial - log_root)
            } else if lo <= c.lo && c.hi <= hi {
                (below + c.log_partial - log_root, f64::NEG_INFINITY)
            } else {
                self.log_split(child, below, lo, hi, visits)
            };
            inside = log_add_exp(inside, part_in);
            outside = log_add_exp(outside, part_out);
        }
        (inside, outside)
    }

    /// Price of `[alpha, 1)` following the single search path for `alpha`.
    pub fn price_upper(&self, alpha: Dyadic) -> f64 {
        if alpha.is_one() {
            self.visits.set(0);
            return 0.0;
        }
        let log_root = self.nodes[ROOT].log_partial;
        let mut z = ROOT;
        let mut log_path = 0.0;
        let mut price = 0.0;
        let mut visits = 1;
        while self.nodes[z].lo != alpha {
            let Some((l, r)) = self.nodes[z].children else {
                break;
            };
            log_path += self.nodes[z].shares / self.b;
            if alpha < self.nodes[r].lo {
                price += (log_path + self.nodes[r].log_partial - log_root).exp();
                z = l;
            } else {
                z = r;
            }
            visits += 1;
        }
        let node = &self.nodes[z];
        let frac = Dyadic::distance(alpha, node.hi) / Dyadic::distance(node.lo, node.hi);
        self.visits.set(visits);
        price + frac * (log_path + node.log_partial - log_root).exp()
    }

    /// Log masses inside and outside `interval`.
    fn split_log_mass(&self, interval: &Interval) -> (f64, f64, usize) {
        let mut visits = 0;
        let (inside, outside) =
            self.log_split(ROOT, 0.0, interval.lo(), interval.hi(), &mut visits);
        (inside, outside, visits)
    }

    /// Rebuilds every `L_z` and height bottom-up from shares alone.
    pub fn recompute_all(&mut self) {
        let order = self.preorder();
        for id in order.into_iter().rev() {
            let z = id.0;
            if self.nodes[z].children.is_some() {
                self.reset_inner(z);
            } else {
                let n = &mut self.nodes[z];
                n.height = 0;
                n.log_partial = n.shares / self.b + Dyadic::distance(n.lo, n.hi).ln();
            }
        }
    }

    /// Full-tree check of the search, balance and normalization invariants.
    ///
    /// `tolerance` bounds the absolute error of each stored `L_z` against a
    /// recomputation from its children.
    pub fn check_invariants(&self, tolerance: f64) -> Result<()> {
        let root = &self.nodes[ROOT];
        if !root.lo.is_zero() || !root.hi.is_one() {
            return Err(MarketError::StructureViolation(
                "root does not cover [0,1)".into(),
            ));
        }
        let mut leaves = 0;
        for id in self.preorder() {
            let n = &self.nodes[id.0];
            let expected = match n.children {
                None => {
                    leaves += 1;
                    if n.height != 0 {
                        return Err(MarketError::StructureViolation(format!(
                            "leaf {} has height {}",
                            id.0, n.height
                        )));
                    }
                    n.shares / self.b + Dyadic::distance(n.lo, n.hi).ln()
                }
                Some((l, r)) => {
                    let (ln, rn) = (&self.nodes[l], &self.nodes[r]);
                    if !(n.lo == ln.lo
                        && ln.lo < ln.hi
                        && ln.hi == rn.lo
                        && rn.lo < rn.hi
                        && rn.hi == n.hi)
                    {
                        return Err(MarketError::StructureViolation(format!(
                            "node {} breaks the search property",
                            id.0
                        )));
                    }
                    if n.height != 1 + ln.height.max(rn.height) || ln.height.abs_diff(rn.height) > 1
                    {
                        return Err(MarketError::StructureViolation(format!(
                            "node {} is out of balance",
                            id.0
                        )));
                    }
                    n.shares / self.b + log_add_exp(ln.log_partial, rn.log_partial)
                }
            };
            if (expected - n.log_partial).abs() > tolerance {
                return Err(MarketError::StructureViolation(format!(
                    "node {} stores L = {} but its children give {}",
                    id.0, n.log_partial, expected
                )));
            }
        }
        if leaves != self.leaves {
            return Err(MarketError::StructureViolation("leaf count drifted".into()));
        }
        Ok(())
    }

    /// Implied shares per atomic outcome at precision `bits`.
    ///
    /// Every stored endpoint must have precision at most `bits`.
    pub fn implied_theta(&self, bits: u32) -> Result<Vec<f64>> {
        let mut theta = vec![0.0; 1usize << bits];
        let shift = crate::MAX_PRECISION - bits;
        let mut stack = vec![(ROOT, 0.0)];
        while let Some((z, acc)) = stack.pop() {
            let n = &self.nodes[z];
            let acc = acc + n.shares;
            match n.children {
                Some((l, r)) => {
                    stack.push((l, acc));
                    stack.push((r, acc));
                }
                None => {
                    for e in [n.lo, n.hi] {
                        if e.precision() > bits {
                            return Err(MarketError::EndpointTooFine {
                                endpoint: e.to_string(),
                                precision: e.precision(),
                                max: bits,
                            });
                        }
                    }
                    let (a, b) = (
                        (n.lo.scaled() >> shift) as usize,
                        (n.hi.scaled() >> shift) as usize,
                    );
                    theta[a..b].iter_mut().for_each(|t| *t = acc);
                }
            }
        }
        Ok(theta)
    }

    /// Pre-order node list for persistence.
    pub fn to_records(&self) -> Vec<LmsrNodeRecord> {
        self.preorder()
            .into_iter()
            .map(|id| {
                let n = &self.nodes[id.0];
                LmsrNodeRecord {
                    lo_num: n.lo.numerator(),
                    lo_prec: n.lo.precision(),
                    hi_num: n.hi.numerator(),
                    hi_prec: n.hi.precision(),
                    shares: n.shares,
                    height: n.height,
                }
            })
            .collect()
    }

    /// Rebuilds a tree from [`LmsrTree::to_records`] output, re-deriving every `L_z`.
    pub fn from_records(b: f64, records: &[LmsrNodeRecord]) -> Result<Self> {
        let mut tree = LmsrTree::new(b)?;
        tree.nodes.clear();
        tree.leaves = 0;
        let mut cursor = 0;
        tree.read_subtree(records, &mut cursor)?;
        if cursor != records.len() {
            return Err(MarketError::StructureViolation(format!(
                "{} trailing node records",
                records.len() - cursor
            )));
        }
        if let Some(bad) = records.iter().find(|r| !r.shares.is_finite()) {
            return Err(MarketError::NonFiniteShares(bad.shares));
        }
        tree.recompute_all();
        tree.check_invariants(1e-9)?;
        for (id, rec) in tree.preorder().into_iter().zip(records) {
            if tree.nodes[id.0].height != rec.height {
                return Err(MarketError::StructureViolation(format!(
                    "record {}/2^{} claims height {}",
                    rec.lo_num, rec.lo_prec, rec.height
                )));
            }
        }
        Ok(tree)
    }

    fn read_subtree(&mut self, records: &[LmsrNodeRecord], cursor: &mut usize) -> Result<usize> {
        let rec = records
            .get(*cursor)
            .ok_or_else(|| MarketError::StructureViolation("node list ends early".into()))?;
        *cursor += 1;
        let (lo, hi) = rec.interval()?;
        let z = self.nodes.len();
        self.nodes.push(Node::leaf(lo, hi));
        self.nodes[z].shares = rec.shares;
        if rec.height == 0 {
            self.leaves += 1;
        } else {
            let l = self.read_subtree(records, cursor)?;
            let r = self.read_subtree(records, cursor)?;
            self.nodes[z].children = Some((l, r));
        }
        Ok(z)
    }
}

impl MarketMaker for LmsrTree {
    fn price(&self, interval: &Interval) -> Result<f64> {
        if interval.hi().is_one() {
            return Ok(self.price_upper(interval.lo()));
        }
        let (inside, _, visits) = self.split_log_mass(interval);
        self.visits.set(visits);
        Ok(inside.exp())
    }

    fn cost(&self, interval: &Interval, shares: f64) -> Result<f64> {
        check_shares(shares)?;
        if shares == 0.0 {
            self.visits.set(0);
            return Ok(0.0);
        }
        if interval.is_full() {
            self.visits.set(1);
            return Ok(shares);
        }
        let (li, lo, visits) = self.split_log_mass(interval);
        self.visits.set(visits);
        // the complement is summed directly so that 1 - p keeps its relative precision
        Ok(self.b * lmsr_cost_log(li, lo, shares / self.b))
    }

    fn buy(&mut self, interval: &Interval, shares: f64) -> Result<f64> {
        let cost = self.cost(interval, shares)?;
        if shares == 0.0 {
            return Ok(0.0);
        }
        let mut visits = self.buy_upper(interval.lo(), shares);
        if !interval.hi().is_one() {
            visits += self.buy_upper(interval.hi(), -shares);
        }
        self.visits.set(visits);
        Ok(cost)
    }

    fn loss_bound(&self) -> f64 {
        // The tree itself has no fixed precision; the bound depends on the
        // precision traders are restricted to. Report the bound for the finest
        // endpoint precision seen so far.
        let bits = self
            .nodes
            .iter()
            .map(|n| n.lo.precision().max(n.hi.precision()))
            .max()
            .unwrap_or(0);
        self.b * bits as f64 * std::f64::consts::LN_2
    }

    fn initial_potential(&self) -> f64 {
        0.0
    }

    fn distribution(&self, bits: u32) -> Vec<f64> {
        let mut out = vec![0.0; 1usize << bits];
        let log_root = self.nodes[ROOT].log_partial;
        let mut stack = vec![(ROOT, 0.0)];
        while let Some((z, log_above)) = stack.pop() {
            let n = &self.nodes[z];
            match n.children {
                Some((l, r)) => {
                    let below = log_above + n.shares / self.b;
                    stack.push((l, below));
                    stack.push((r, below));
                }
                None => {
                    let mass = (log_above + n.log_partial - log_root).exp();
                    spread_mass(&mut out, n.lo, n.hi, mass, bits);
                }
            }
        }
        out
    }

    fn last_visits(&self) -> usize {
        self.visits.get()
    }
}

/// Loss bound `b * K * log 2` of an LMSR whose trades are restricted to precision `bits`.
pub fn loss_bound_at_precision(b: f64, bits: u32) -> f64 {
    b * bits as f64 * std::f64::consts::LN_2
}
