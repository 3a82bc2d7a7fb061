//! Number formatting shared by every CSV writer.

/// Formats like C's `%.9g`: nine significant digits, trailing zeros removed.
pub fn g9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}"))
    } else {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_printf_g9() {
        assert_eq!(g9(0.0), "0");
        assert_eq!(g9(1.0), "1");
        assert_eq!(g9(-2.5), "-2.5");
        assert_eq!(g9(1.0 / 3.0), "0.333333333");
        assert_eq!(g9(123456789.0), "123456789");
        assert_eq!(g9(1234567890.0), "1.23456789e+09");
        assert_eq!(g9(1e-5), "1e-05");
        assert_eq!(g9(0.0001234), "0.0001234");
        assert_eq!(g9(9.999999999e8), "1e+09");
    }

    #[test]
    fn f32_values_round_trip() {
        for v in [0.1f32, 1.0 / 3.0, 12345.678, -7.25e-9, 3.4e38] {
            let back: f32 = g9(v as f64).parse().unwrap();
            assert_eq!(back, v);
        }
    }
}
