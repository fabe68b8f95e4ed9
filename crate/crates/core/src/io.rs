//! Text formatting helpers for the CSV outputs.

/// Formats like C's `printf("%.17g", v)`.
pub fn fmt_g17(v: f64) -> String {
    fmt_g(v, 17)
}

/// Formats like C's `printf("%.{precision}g", v)`.
pub fn fmt_g(v: f64, precision: usize) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let p = precision.max(1);
    if v == 0.0 {
        return if v.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    // Exponent after rounding to p significant digits.
    let sci = format!("{:.*e}", p - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= p as i32 {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp).max(0) as usize;
        strip_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
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
    fn matches_printf_golden_values() {
        // reference strings produced by printf("%.17g")
        let cases: &[(f64, &str)] = &[
            (0.0, "0"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (0.1, "0.10000000000000001"),
            (1.0 / 3.0, "0.33333333333333331"),
            (123456.0, "123456"),
            (1e-5, "1.0000000000000001e-05"),
            (1e-4, "0.0001"),
            (1e17, "1e+17"),
            (1e16, "10000000000000000"),
            (12345678901234567890.0, "1.2345678901234567e+19"),
            (0.551328895421792, "0.55132889542179198"),
            (-1.5e-300, "-1.5000000000000001e-300"),
            (2.0f64.powi(-1074), "4.9406564584124654e-324"),
        ];
        for &(v, want) in cases {
            assert_eq!(fmt_g17(v), want, "value {v:e}");
        }
    }

    #[test]
    fn short_precision() {
        assert_eq!(fmt_g(0.000123456, 3), "0.000123");
        assert_eq!(fmt_g(99999.0, 3), "1e+05");
        assert_eq!(fmt_g(f64::NAN, 17), "nan");
        assert_eq!(fmt_g(f64::NEG_INFINITY, 17), "-inf");
    }
}
