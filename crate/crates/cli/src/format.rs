/// `x` with 12 significant digits, positional unless the magnitude is extreme.
pub fn sig12(x: f64) -> String {
    const DIGITS: i32 = 12;
    if x == 0.0 {
        return format!("{:.*}", DIGITS as usize - 1, 0.0);
    }
    if !x.is_finite() {
        return x.to_string();
    }
    // round first so 9.9999999999995 becomes 10.0000000000 rather than 9.99...
    let rounded: f64 = format!("{:.*e}", DIGITS as usize - 1, x)
        .parse()
        .unwrap_or(x);
    let exp = rounded.abs().log10().floor() as i32;
    if !(-5..DIGITS).contains(&exp) {
        return format!("{:.*e}", DIGITS as usize - 1, x);
    }
    format!("{:.*}", (DIGITS - 1 - exp) as usize, rounded)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_digits() {
        assert_eq!(sig12(0.75), "0.750000000000");
        assert_eq!(sig12(1.0), "1.00000000000");
        assert_eq!(sig12(0.0), "0.00000000000");
        assert_eq!(sig12(-2.5), "-2.50000000000");
        assert_eq!(sig12(1.386294361119891), "1.38629436112");
        assert_eq!(sig12(9.99999999999999), "10.0000000000");
        assert_eq!(sig12(1e-9), "1.00000000000e-9");
    }
}
