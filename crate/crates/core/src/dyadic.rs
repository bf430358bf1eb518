//! Exact dyadic coordinates on `[0, 1]` and half-open interval securities.
//!
//! Every endpoint is a dyadic rational `num / 2^prec` with `prec <= 62`, kept
//! in canonical form (odd numerator, or exactly 0 or 1). Comparisons go through
//! a fixed 62-bit scaling so they never depend on the representation.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};

/// Largest supported bit precision.
pub const MAX_PRECISION: u32 = 62;

const SCALE: u64 = 1 << MAX_PRECISION;

/// A dyadic rational in `[0, 1]`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Dyadic {
    num: u64,
    prec: u32,
}

impl Dyadic {
    pub const ZERO: Dyadic = Dyadic { num: 0, prec: 0 };
    pub const ONE: Dyadic = Dyadic { num: 1, prec: 0 };

    /// Builds `num / 2^prec`, reducing to canonical form.
    pub fn new(num: u64, prec: u32) -> Result<Self> {
        if prec > MAX_PRECISION {
            return Err(MarketError::Parse {
                input: format!("{num}/2^{prec}"),
                reason: format!("precision exceeds {MAX_PRECISION} bits"),
            });
        }
        if num > (1u64 << prec) {
            return Err(MarketError::Parse {
                input: format!("{num}/2^{prec}"),
                reason: "value exceeds 1".into(),
            });
        }
        Ok(Self::from_scaled(num << (MAX_PRECISION - prec)))
    }

    /// Builds a dyadic from its value scaled by `2^62`.
    pub(crate) fn from_scaled(scaled: u64) -> Self {
        debug_assert!(scaled <= SCALE);
        if scaled == 0 {
            return Self::ZERO;
        }
        let tz = scaled.trailing_zeros().min(MAX_PRECISION);
        Dyadic {
            num: scaled >> tz,
            prec: MAX_PRECISION - tz,
        }
    }

    /// Value scaled by `2^62`; exact.
    pub(crate) fn scaled(self) -> u64 {
        self.num << (MAX_PRECISION - self.prec)
    }

    pub fn numerator(self) -> u64 {
        self.num
    }

    /// Smallest `k >= 0` such that `self * 2^k` is an integer.
    pub fn precision(self) -> u32 {
        self.prec
    }

    pub fn is_zero(self) -> bool {
        self.num == 0
    }

    pub fn is_one(self) -> bool {
        self.num == 1 && self.prec == 0
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / (1u64 << self.prec) as f64
    }

    /// Midpoint of `self` and `other`, if it is representable within 62 bits.
    pub fn midpoint(self, other: Dyadic) -> Option<Dyadic> {
        let sum = self.scaled() + other.scaled();
        if sum & 1 == 1 {
            None
        } else {
            Some(Self::from_scaled(sum / 2))
        }
    }

    /// Keeps only the first `bits` binary digits after the point.
    pub fn truncate(self, bits: u32) -> Dyadic {
        if bits >= self.prec {
            return self;
        }
        let shift = MAX_PRECISION - bits;
        Self::from_scaled((self.scaled() >> shift) << shift)
    }

    /// Binary digit number `position` (1-based) after the point.
    pub fn bit(self, position: u32) -> bool {
        debug_assert!((1..=MAX_PRECISION).contains(&position));
        if self.is_one() {
            return false;
        }
        (self.scaled() >> (MAX_PRECISION - position)) & 1 == 1
    }

    /// Nearest multiple of `2^-bits` to `x`, clamped into `[0, 1]`.
    pub fn round_f64(x: f64, bits: u32) -> Dyadic {
        let bits = bits.min(MAX_PRECISION);
        let steps = (1u64 << bits) as f64;
        let k = (x.clamp(0.0, 1.0) * steps).round() as u64;
        Self::from_scaled(k.min(1u64 << bits) << (MAX_PRECISION - bits))
    }

    /// Distance `hi - lo` as a float, computed exactly before rounding.
    pub fn distance(lo: Dyadic, hi: Dyadic) -> f64 {
        (hi.scaled() - lo.scaled()) as f64 / SCALE as f64
    }

    /// Parses `"a/2^k"`, or a decimal string whose value is exactly dyadic.
    pub fn parse(input: &str) -> Result<Self> {
        let s = input.trim();
        let err = |reason: &str| MarketError::Parse {
            input: input.to_string(),
            reason: reason.to_string(),
        };
        if let Some((num, den)) = s.split_once('/') {
            let num: u64 = num.trim().parse().map_err(|_| err("bad numerator"))?;
            let den = den.trim();
            let prec: u32 = match den.strip_prefix("2^") {
                Some(k) => k.parse().map_err(|_| err("bad exponent"))?,
                None => {
                    let d: u64 = den.parse().map_err(|_| err("bad denominator"))?;
                    if !d.is_power_of_two() {
                        return Err(err("denominator is not a power of two"));
                    }
                    d.trailing_zeros()
                }
            };
            return Dyadic::new(num, prec).map_err(|_| err("outside [0,1] or finer than 62 bits"));
        }
        parse_decimal(s).ok_or_else(|| err("not an exactly representable dyadic in [0,1]"))
    }
}

/// Exact decimal-to-binary conversion by repeated doubling of the digit string.
fn parse_decimal(s: &str) -> Option<Dyadic> {
    let (int_part, frac_part) = match s.split_once('.') {
        Some((i, f)) => (i, f),
        None => (s, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    let all_digits = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
    if !all_digits(int_part) || !all_digits(frac_part) {
        return None;
    }
    let int_val: u64 = if int_part.is_empty() {
        0
    } else {
        int_part.parse().ok()?
    };
    let mut digits: Vec<u8> = frac_part.bytes().map(|b| b - b'0').collect();
    while digits.last() == Some(&0) {
        digits.pop();
    }
    match int_val {
        1 if digits.is_empty() => return Some(Dyadic::ONE),
        0 => {}
        _ => return None,
    }
    let mut scaled: u64 = 0;
    for bit in 1..=MAX_PRECISION {
        if digits.is_empty() {
            break;
        }
        let mut carry = 0u8;
        for d in digits.iter_mut().rev() {
            let v = *d * 2 + carry;
            *d = v % 10;
            carry = v / 10;
        }
        if carry == 1 {
            scaled |= 1 << (MAX_PRECISION - bit);
        }
        while digits.last() == Some(&0) {
            digits.pop();
        }
    }
    if digits.is_empty() {
        Some(Dyadic::from_scaled(scaled))
    } else {
        None
    }
}

impl PartialEq for Dyadic {
    fn eq(&self, other: &Self) -> bool {
        self.scaled() == other.scaled()
    }
}

impl Eq for Dyadic {}

impl std::hash::Hash for Dyadic {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.scaled().hash(state);
    }
}

impl PartialOrd for Dyadic {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dyadic {
    fn cmp(&self, other: &Self) -> Ordering {
        self.scaled().cmp(&other.scaled())
    }
}

impl fmt::Display for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/2^{}", self.num, self.prec)
    }
}

impl FromStr for Dyadic {
    type Err = MarketError;

    fn from_str(s: &str) -> Result<Self> {
        Dyadic::parse(s)
    }
}

impl TryFrom<String> for Dyadic {
    type Error = MarketError;

    fn try_from(s: String) -> Result<Self> {
        Dyadic::parse(&s)
    }
}

impl From<Dyadic> for String {
    fn from(d: Dyadic) -> String {
        d.to_string()
    }
}

/// Half-open interval `[lo, hi)` with dyadic endpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Interval {
    lo: Dyadic,
    hi: Dyadic,
}

impl Interval {
    pub fn new(lo: Dyadic, hi: Dyadic) -> Result<Self> {
        if lo < hi {
            Ok(Interval { lo, hi })
        } else {
            Err(MarketError::InvalidInterval {
                lo: lo.to_string(),
                hi: hi.to_string(),
            })
        }
    }

    /// The whole outcome space `[0, 1)`.
    pub fn full() -> Self {
        Interval {
            lo: Dyadic::ZERO,
            hi: Dyadic::ONE,
        }
    }

    /// `[lo, 1)`.
    pub fn upper(lo: Dyadic) -> Result<Self> {
        Self::new(lo, Dyadic::ONE)
    }

    /// Convenience constructor from `(num, prec)` pairs.
    pub fn from_parts(lo: (u64, u32), hi: (u64, u32)) -> Result<Self> {
        Self::new(Dyadic::new(lo.0, lo.1)?, Dyadic::new(hi.0, hi.1)?)
    }

    pub fn lo(&self) -> Dyadic {
        self.lo
    }

    pub fn hi(&self) -> Dyadic {
        self.hi
    }

    pub fn width(&self) -> f64 {
        Dyadic::distance(self.lo, self.hi)
    }

    pub fn is_full(&self) -> bool {
        self.lo.is_zero() && self.hi.is_one()
    }

    pub fn contains(&self, x: Dyadic) -> bool {
        self.lo <= x && x < self.hi
    }

    /// Payoff of one share if the outcome is `outcome`.
    pub fn payout(&self, outcome: Dyadic) -> f64 {
        if self.contains(outcome) {
            1.0
        } else {
            0.0
        }
    }

    /// Larger of the two endpoint precisions.
    pub fn precision(&self) -> u32 {
        self.lo.precision().max(self.hi.precision())
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.lo, self.hi)
    }
}

/// Adds `mass`, spread uniformly over `[lo, hi)`, into the `2^bits` equal bins of `out`.
pub(crate) fn spread_mass(out: &mut [f64], lo: Dyadic, hi: Dyadic, mass: f64, bits: u32) {
    let bin_width = 1u64 << (MAX_PRECISION - bits);
    let (lo, hi) = (lo.scaled(), hi.scaled());
    let span = (hi - lo) as f64;
    let mut x = lo;
    while x < hi {
        let bin = x / bin_width;
        let end = ((bin + 1) * bin_width).min(hi);
        out[bin as usize] += mass * (end - x) as f64 / span;
        x = end;
    }
}
