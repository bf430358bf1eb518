use statrs::function::beta::{beta_reg, inv_beta_reg, ln_beta};

use crate::dyadic::Interval;
use crate::error::{MarketError, Result};
use crate::numeric::log_sum_exp;

use super::rng::SplitMix64;
use super::SimConfig;

/// A trader with a `Beta(alpha, beta)` belief and utility `u(W) = -exp(-W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trader {
    pub id: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl Trader {
    pub fn new(id: usize, alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0 && beta.is_finite() && beta > 0.0) {
            return Err(MarketError::DegenerateBelief(format!(
                "trader {id}: Beta({alpha}, {beta}) needs positive parameters"
            )));
        }
        Ok(Trader { id, alpha, beta })
    }

    fn cdf_mass(&self, x: f64, y: f64) -> f64 {
        // upper half through the mirrored distribution so tails keep their digits
        if x >= 0.5 {
            beta_reg(self.beta, self.alpha, 1.0 - x) - beta_reg(self.beta, self.alpha, 1.0 - y)
        } else {
            beta_reg(self.alpha, self.beta, y) - beta_reg(self.alpha, self.beta, x)
        }
    }

    /// Belief probability of `interval`.
    pub fn belief_mass(&self, interval: &Interval) -> f64 {
        self.cdf_mass(interval.lo().to_f64(), interval.hi().to_f64())
            .max(0.0)
    }

    /// Log belief mass of each of the `2^bits` equal bins.
    ///
    /// Bins whose mass underflows fall back to `log pdf(midpoint) + log width`.
    pub fn log_bin_masses(&self, bits: u32) -> Vec<f64> {
        let n = 1usize << bits;
        let width = 1.0 / n as f64;
        let norm = ln_beta(self.alpha, self.beta);
        (0..n)
            .map(|j| {
                let (x, y) = (j as f64 * width, (j + 1) as f64 * width);
                let m = self.cdf_mass(x, y);
                if m > 1e-280 {
                    m.ln()
                } else {
                    let mid = 0.5 * (x + y);
                    (self.alpha - 1.0) * mid.ln() + (self.beta - 1.0) * (-mid).ln_1p() - norm
                        + width.ln()
                }
            })
            .collect()
    }

    /// Belief distribution over `2^bits` equal bins, normalized.
    pub fn bin_masses(&self, bits: u32) -> Vec<f64> {
        let logs = self.log_bin_masses(bits);
        let z = log_sum_exp(logs.iter().copied());
        logs.iter().map(|l| (l - z).exp()).collect()
    }

    /// Inverse belief CDF.
    pub fn quantile(&self, u: f64) -> f64 {
        inv_beta_reg(self.alpha, self.beta, u.clamp(0.0, 1.0))
    }
}

/// Draws trader `i` (1-based) with `a_i ~ Binomial(p, n_i)`, `n_i = signal_step * i`,
/// `b_i = n_i - a_i`, clamping `a_i` into `[1, n_i - 1]`.
pub fn sample_traders(cfg: &SimConfig, rng: &mut SplitMix64) -> Vec<Trader> {
    (1..=cfg.n_traders)
        .map(|i| {
            let n = cfg.signal_step * i as u64;
            let a = rng.binomial(n, cfg.true_signal).clamp(1, n - 1);
            Trader {
                id: i,
                alpha: a as f64,
                beta: (n - a) as f64,
            }
        })
        .collect()
}

/// Equal-weight logarithmic opinion pool of the traders' beliefs over `2^bits` bins.
pub fn clearing_price(traders: &[Trader], bits: u32) -> Result<Vec<f64>> {
    if traders.is_empty() {
        return Err(MarketError::DegenerateBelief("no traders".into()));
    }
    let n = 1usize << bits;
    let mut pooled = vec![0.0; n];
    for t in traders {
        for (acc, l) in pooled.iter_mut().zip(t.log_bin_masses(bits)) {
            *acc += l;
        }
    }
    if let Some(j) = pooled.iter().position(|l| !l.is_finite()) {
        return Err(MarketError::DegenerateBelief(format!(
            "bin {j} has zero mass under every belief"
        )));
    }
    let scale = traders.len() as f64;
    let z = log_sum_exp(pooled.iter().map(|l| l / scale));
    Ok(pooled.iter().map(|l| (l / scale - z).exp()).collect())
}

/// Sums adjacent bins: `2^from` bins down to `2^to`.
pub fn coarsen(dist: &[f64], to: u32) -> Vec<f64> {
    let n = 1usize << to;
    let group = dist.len() / n;
    dist.chunks(group).map(|c| c.iter().sum()).collect()
}

/// Relative entropy `KL(p || q)` in nats; `q` is clamped below at `1e-300`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * (p / q.max(1e-300)).ln())
        .sum();
    kl.max(0.0)
}
