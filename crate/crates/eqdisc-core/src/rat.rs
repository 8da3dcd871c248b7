//! Exact rational scalar used for unit exponents and exponent lattices.

use num_rational::Ratio;
use num_traits::{Signed, ToPrimitive, Zero};

/// Exact rational number. i128 gives ample headroom for the elimination of
/// 7-row dimension systems with denominator-bounded entries.
pub type Rat = Ratio<i128>;

/// Integer-valued rational.
pub fn rat(n: i128) -> Rat {
    Rat::from_integer(n)
}

/// Rational from numerator and denominator.
pub fn ratq(n: i128, d: i128) -> Rat {
    Rat::new(n, d)
}

/// Lossy conversion for numeric evaluation.
pub fn to_f64(r: &Rat) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// True when the rational is an integer.
pub fn is_integer(r: &Rat) -> bool {
    r.is_integer()
}

/// Renders a rational exactly: as an integer when possible, as a finite
/// decimal when the reduced denominator is of the form 2^a*5^b, and as `p/q`
/// otherwise.
pub fn format_rat(r: &Rat) -> String {
    if r.is_integer() {
        return r.numer().to_string();
    }
    if let Some(s) = decimal_string(r) {
        return s;
    }
    format!("{}/{}", r.numer(), r.denom())
}

/// Finite decimal representation, or None when the denominator has prime
/// factors other than 2 and 5.
pub fn decimal_string(r: &Rat) -> Option<String> {
    let mut d = *r.denom();
    let mut twos = 0u32;
    let mut fives = 0u32;
    while d % 2 == 0 {
        d /= 2;
        twos += 1;
    }
    while d % 5 == 0 {
        d /= 5;
        fives += 1;
    }
    if d != 1 {
        return None;
    }
    let k = twos.max(fives);
    let scale = 10i128.checked_pow(k)?;
    let scaled = r.numer().checked_mul(scale / r.denom())?;
    let sign = if scaled < 0 { "-" } else { "" };
    let abs = scaled.unsigned_abs();
    let int_part = abs / 10u128.pow(k);
    let frac_part = abs % 10u128.pow(k);
    Some(format!(
        "{}{}.{:0width$}",
        sign,
        int_part,
        frac_part,
        width = k as usize
    ))
}

/// Parses an exact rational from integer (`-3`), decimal (`1.5`), or
/// fraction (`3/2`) notation. Returns None on malformed text.
pub fn parse_rat(s: &str) -> Option<Rat> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: i128 = n.trim().parse().ok()?;
        let d: i128 = d.trim().parse().ok()?;
        if d == 0 {
            return None;
        }
        return Some(Rat::new(n, d));
    }
    if let Some((int, frac)) = s.split_once('.') {
        let neg = int.trim_start().starts_with('-');
        let int_val: i128 = if int == "-" || int.is_empty() {
            0
        } else {
            int.parse().ok()?
        };
        if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let scale = 10i128.checked_pow(frac.len() as u32)?;
        let frac_val: i128 = frac.parse().ok()?;
        let magnitude = int_val.unsigned_abs() as i128 * scale + frac_val;
        let signed = if neg { -magnitude } else { magnitude };
        return Some(Rat::new(signed, scale));
    }
    s.parse::<i128>().ok().map(Rat::from_integer)
}

/// Sign of a rational as -1, 0, or 1.
pub fn sign(r: &Rat) -> i8 {
    if r.is_zero() {
        0
    } else if r.is_positive() {
        1
    } else {
        -1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formats_integers_decimals_and_fractions() {
        assert_eq!(format_rat(&rat(3)), "3");
        assert_eq!(format_rat(&rat(-2)), "-2");
        assert_eq!(format_rat(&ratq(3, 2)), "1.5");
        assert_eq!(format_rat(&ratq(-1, 2)), "-0.5");
        assert_eq!(format_rat(&ratq(1, 10)), "0.1");
        assert_eq!(format_rat(&ratq(1, 3)), "1/3");
        assert_eq!(format_rat(&ratq(-7, 6)), "-7/6");
    }

    #[test]
    fn parses_all_notations() {
        assert_eq!(parse_rat("3"), Some(rat(3)));
        assert_eq!(parse_rat("-1.5"), Some(ratq(-3, 2)));
        assert_eq!(parse_rat("0.25"), Some(ratq(1, 4)));
        assert_eq!(parse_rat("3/2"), Some(ratq(3, 2)));
        assert_eq!(parse_rat("-0.5"), Some(ratq(-1, 2)));
        assert_eq!(parse_rat("2/0"), None);
        assert_eq!(parse_rat("x"), None);
    }

    #[test]
    fn parse_is_inverse_of_format() {
        let cases = [rat(0), rat(7), ratq(-3, 2), ratq(22, 7), ratq(1, 100), ratq(-13, 40)];
        for r in cases {
            assert_eq!(parse_rat(&format_rat(&r)), Some(r), "{r}");
        }
    }
}
