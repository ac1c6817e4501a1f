//! Number formatting for CSV output.

/// Format `value` with 9 significant digits, `%g` style: fixed notation for
/// moderate exponents, scientific otherwise, trailing zeros trimmed.
pub fn sig9(value: f64) -> String {
    const DIGITS: i32 = 9;
    if value.is_nan() {
        return "nan".into();
    }
    if value.is_infinite() {
        return if value > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if value == 0.0 {
        return "0".into();
    }
    // Round first so that the exponent reflects the rounded mantissa.
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, value);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..DIGITS).contains(&exp) {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim_zeros(format!("{value:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    let t = s.trim_end_matches('0').trim_end_matches('.');
    t.to_string()
}

/// Join formatted values into one CSV line (without the newline).
pub fn csv_row(values: &[f64]) -> String {
    values.iter().map(|v| sig9(*v)).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formats_like_percent_g() {
        assert_eq!(sig9(1.32), "1.32");
        assert_eq!(sig9(0.0), "0");
        assert_eq!(sig9(-2.5), "-2.5");
        assert_eq!(sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(sig9(123456789.4), "123456789");
        assert_eq!(sig9(1234567891.0), "1.23456789e9");
        assert_eq!(sig9(1.5e-7), "1.5e-7");
        assert_eq!(sig9(0.00012345678912), "0.000123456789");
        assert_eq!(sig9(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn rounding_carries_into_exponent() {
        assert_eq!(sig9(9.9999999999), "10");
        assert_eq!(sig9(999999999.7), "1e9");
    }
}
