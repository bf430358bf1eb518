//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use interval_markets::{Dyadic, Interval};
use rand::rngs::StdRng;
use rand::Rng;

/// Uniform random interval with endpoints on the grid of precision `bits`.
pub fn random_interval(rng: &mut StdRng, bits: u32) -> Interval {
    let n = 1u64 << bits;
    loop {
        let a = rng.gen_range(0..=n);
        let b = rng.gen_range(0..=n);
        if a != b {
            return Interval::from_parts((a.min(b), bits), (a.max(b), bits)).unwrap();
        }
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Fully materialized multi-resolution market over levels `0..=K`, with the
/// arbitrage shares `eta` found by direct numerical minimization of the
/// direct-sum cost.
///
/// Nodes are stored per level: `theta[k][j]` is the node `[j/2^k, (j+1)/2^k)`.
pub struct FullLcmm {
    pub b: Vec<f64>,
    pub theta: Vec<Vec<f64>>,
    pub eta: Vec<Vec<f64>>,
}

impl FullLcmm {
    pub fn new(b: Vec<f64>) -> Self {
        let k = b.len();
        FullLcmm {
            theta: (0..=k).map(|l| vec![0.0; 1 << l]).collect(),
            eta: (0..=k).map(|l| vec![0.0; 1 << l]).collect(),
            b,
        }
    }

    pub fn levels(&self) -> usize {
        self.b.len()
    }

    fn bk(&self, k: usize) -> f64 {
        self.b[k - 1]
    }

    fn big_b(&self, k: usize) -> f64 {
        self.b[k..].iter().sum()
    }

    /// Adds `s` to every node of the binary cover of `[alpha, 1)`, read off
    /// the bits of `alpha`.
    pub fn add_upper(&mut self, alpha: f64, s: f64) {
        if alpha == 0.0 {
            self.theta[0][0] += s;
            return;
        }
        let levels = self.levels();
        let scaled = (alpha * (1u64 << levels) as f64) as u64;
        let prec = levels - scaled.trailing_zeros() as usize;
        for j in 1..=prec {
            let prefix = scaled >> (levels - j);
            if prefix & 1 == 0 {
                self.theta[j][(prefix | 1) as usize] += s;
            }
        }
        self.theta[prec][(scaled >> (levels - prec)) as usize] += s;
    }

    pub fn add(&mut self, interval: &Interval, s: f64) {
        self.add_upper(interval.lo().to_f64(), s);
        if !interval.hi().is_one() {
            self.add_upper(interval.hi().to_f64(), -s);
        }
    }

    /// Effective state `theta + A eta`.
    pub fn effective(&self) -> Vec<Vec<f64>> {
        let levels = self.levels();
        let mut out = self.theta.clone();
        for l in 0..levels {
            for j in 0..(1usize << l) {
                let e = self.eta[l][j];
                if e == 0.0 {
                    continue;
                }
                out[l][j] += self.big_b(l) * e;
                for k in (l + 1)..=levels {
                    let span = 1usize << (k - l);
                    for u in &mut out[k][j * span..(j + 1) * span] {
                        *u -= self.bk(k) * e;
                    }
                }
            }
        }
        out
    }

    /// Direct-sum cost at `theta + A eta`; level 0 is the linear term.
    pub fn cost_tilde(&self) -> f64 {
        let eff = self.effective();
        let mut c = eff[0][0];
        for k in 1..=self.levels() {
            let b = self.bk(k);
            let xs: Vec<f64> = eff[k].iter().map(|t| t / b).collect();
            c += b * log_sum_exp(&xs);
        }
        c
    }

    /// Per-level prices of the direct-sum market.
    pub fn prices(&self) -> Vec<Vec<f64>> {
        let eff = self.effective();
        let mut out = vec![vec![1.0]];
        for k in 1..=self.levels() {
            let b = self.bk(k);
            let xs: Vec<f64> = eff[k].iter().map(|t| t / b).collect();
            let z = log_sum_exp(&xs);
            out.push(xs.iter().map(|x| (x - z).exp()).collect());
        }
        out
    }

    /// Gradient and curvature of the direct-sum cost along `eta[l][j]`.
    fn partials(&self, prices: &[Vec<f64>], l: usize, j: usize) -> (f64, f64) {
        let p = prices[l][j];
        let big = self.big_b(l);
        let mut grad = big * p;
        let mut curv = big * big * p * (1.0 - p) / self.bk(l);
        for k in (l + 1)..=self.levels() {
            let span = 1usize << (k - l);
            let mass: f64 = prices[k][j * span..(j + 1) * span].iter().sum();
            grad -= self.bk(k) * mass;
            curv += self.bk(k) * mass * (1.0 - mass);
        }
        (grad, curv)
    }

    pub fn gradient_norm(&self) -> f64 {
        let prices = self.prices();
        let mut sq = 0.0;
        for l in 1..self.levels() {
            for j in 0..(1usize << l) {
                sq += self.partials(&prices, l, j).0.powi(2);
            }
        }
        sq.sqrt()
    }

    /// Damped coordinate-wise Newton descent over `eta` (root excluded: its
    /// column of `A` has zero price in every state). Returns the final gradient norm.
    pub fn minimize(&mut self, tolerance: f64, max_sweeps: usize) -> f64 {
        for _ in 0..max_sweeps {
            if self.gradient_norm() <= tolerance {
                break;
            }
            for l in 1..self.levels() {
                for j in 0..(1usize << l) {
                    let prices = self.prices();
                    let (g, h) = self.partials(&prices, l, j);
                    if g == 0.0 || h <= 0.0 {
                        continue;
                    }
                    let before = self.cost_tilde();
                    let mut step = -g / h;
                    let start = self.eta[l][j];
                    for _ in 0..60 {
                        self.eta[l][j] = start + step;
                        if self.cost_tilde() <= before {
                            break;
                        }
                        step *= 0.5;
                    }
                }
            }
        }
        self.gradient_norm()
    }

    /// Oracle price of a node interval `[j/2^k, (j+1)/2^k)`.
    pub fn node_price(&self, prices: &[Vec<f64>], interval: &Interval) -> f64 {
        let k = (-interval.width().log2()).round() as usize;
        let j = (interval.lo().to_f64() * (1u64 << k) as f64) as usize;
        prices[k][j]
    }
}

/// `C(0)` of the multi-resolution market: `sum_k b_k k log 2`.
pub fn initial_potential(b: &[f64]) -> f64 {
    b.iter()
        .enumerate()
        .map(|(i, b)| (i + 1) as f64 * b)
        .sum::<f64>()
        * std::f64::consts::LN_2
}

pub fn dyadic(num: u64, prec: u32) -> Dyadic {
    Dyadic::new(num, prec).unwrap()
}
