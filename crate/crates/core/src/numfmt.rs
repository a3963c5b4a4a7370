//! Text formatting for reals written to CSV and report files.

/// Formats `x` with at most `sig` significant digits, `%g` style.
///
/// Trailing zeros are trimmed. Non-finite values render as `inf`, `-inf`
/// or `nan`.
pub fn fmt_sig(x: f64, sig: usize) -> String {
    let sig = sig.max(1);
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{:.*e}", sig - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..sig as i32).contains(&exp) {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        format!("{}e{}", trim_zeros(mantissa.to_string()), exp)
    }
}

/// Ten significant digits, the precision used by every output file.
pub fn fmt10(x: f64) -> String {
    fmt_sig(x, 10)
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    let t = s.trim_end_matches('0').trim_end_matches('.');
    t.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn general_format() {
        assert_eq!(fmt10(0.0), "0");
        assert_eq!(fmt10(100.0), "100");
        assert_eq!(fmt10(1.0 / 3.0), "0.3333333333");
        assert_eq!(fmt10(-2.5e-7), "-2.5e-7");
        assert_eq!(fmt10(123456789012.0), "1.23456789e11");
        assert_eq!(fmt10(9.99999999999), "10");
        assert_eq!(fmt10(f64::INFINITY), "inf");
    }

    #[test]
    fn reparse_is_within_ten_digits() {
        for &x in &[std::f64::consts::PI, 1e-9 / 7.0, 98765.4321987, -0.000123456789123] {
            let y: f64 = fmt10(x).parse().unwrap();
            assert!(((x - y) / x).abs() < 1e-9, "{x} -> {y}");
        }
    }
}
