//! Text rendering of reals for the CSV and JSON outputs.

use std::fmt::Write;

/// Scientific notation with 17 significant digits, enough to round-trip any `f64`.
pub fn real17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

/// `%g`-style rendering with `digits` significant digits (trailing zeros trimmed).
pub fn real_sig(x: f64, digits: usize) -> String {
    assert!(digits >= 1);
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("exponent digits");
    if exp < -4 || exp >= digits as i32 {
        let mut out = trim_zeros(mantissa).to_string();
        let _ = write!(out, "e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
        out
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real17_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            let s = real17(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(real17(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn sig_digits_like_printf_g() {
        assert_eq!(real_sig(0.5, 6), "0.5");
        assert_eq!(real_sig(2.0, 6), "2");
        assert_eq!(real_sig(0.25541281188299536, 6), "0.255413");
        assert_eq!(real_sig(1234567.0, 6), "1.23457e+06");
        assert_eq!(real_sig(0.0000123456, 6), "1.23456e-05");
        assert_eq!(real_sig(-0.0, 6), "0");
        assert_eq!(real_sig(999999.5, 6), "1e+06");
    }
}
