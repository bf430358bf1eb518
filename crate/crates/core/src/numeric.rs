//! Log-domain helpers shared by the engines.

/// `log(e^a + e^b)` without overflow. `-inf` acts as the additive identity.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `log(sum_i e^{x_i})`, max-shifted.
pub fn log_sum_exp<I>(values: I) -> f64
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: Clone,
{
    let iter = values.into_iter();
    let max = iter.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    max + iter.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// LMSR cost, in units of `b`, of buying `x = s/b` units of a bundle whose
/// unnormalized log mass is `log_in` against `log_out` for its complement:
/// `log(1 - p + p e^x)`.
///
/// Relative accuracy holds for tiny charges and masses far below the f64 range:
/// the smaller of the two sides is expanded with `ln_1p` and `exp_m1`.
pub fn lmsr_cost_log(log_in: f64, log_out: f64, x: f64) -> f64 {
    if x == 0.0 || log_in == f64::NEG_INFINITY {
        return 0.0;
    }
    if log_out == f64::NEG_INFINITY {
        return x;
    }
    let total = log_add_exp(log_in, log_out);
    if log_in <= log_out {
        expand(log_in - total, x)
    } else {
        x + expand(log_out - total, -x)
    }
}

/// `log(1 + e^l (e^x - 1))` for `e^l <= 1/2`.
fn expand(l: f64, x: f64) -> f64 {
    if x > 0.0 {
        log_add_exp(0.0, l + x + (-(-x).exp_m1()).ln())
    } else {
        (-(l + (-x.exp_m1()).ln()).exp()).ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_add_exp_matches_direct() {
        let direct = (2f64.exp() + 3f64.exp()).ln();
        assert!((log_add_exp(2.0, 3.0) - direct).abs() < 1e-14);
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 1.5), 1.5);
        assert!((log_add_exp(800.0, 800.0) - (800.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_handles_large_inputs() {
        let v = [1000.0, 1000.0, 1000.0, 1000.0];
        assert!((log_sum_exp(v) - (1000.0 + 4f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(Vec::<f64>::new()), f64::NEG_INFINITY);
    }

    #[test]
    fn cost_log_closed_form() {
        let p: f64 = 0.25;
        let (li, lo) = (p.ln(), (1.0 - p).ln());
        for x in [1.0, -1.0, 1e-9, -3.5] {
            let direct = (1.0 - p + p * f64::exp(x)).ln();
            assert!((lmsr_cost_log(li, lo, x) - direct).abs() < 1e-15, "{x}");
            assert!((lmsr_cost_log(lo, li, x) - (p + (1.0 - p) * f64::exp(x)).ln()).abs() < 1e-15);
        }
        // asymptote: x + log p
        assert!((lmsr_cost_log(0.0, 0.0, 700.0) - 700.0 - 0.5f64.ln()).abs() < 1e-9);
        assert!(lmsr_cost_log(0.0, 0.0, -700.0).is_finite());
        assert_eq!(lmsr_cost_log(3.0, f64::NEG_INFINITY, 3.0), 3.0);
        // tiny bundle: cost ~ p (e^x - 1) with full relative accuracy
        let c = lmsr_cost_log(-60.0, 0.0, 2.0);
        let expected = (-60f64).exp() * 2f64.exp_m1();
        assert!(((c - expected) / expected).abs() < 1e-14);
        // masses below the f64 range still price large purchases
        let c = lmsr_cost_log(-2000.0, 0.0, 2100.0);
        assert!((c - 100.0).abs() < 1e-9);
    }
}
