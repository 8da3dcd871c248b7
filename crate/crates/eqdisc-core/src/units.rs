//! SI dimension vectors and the unit-expression grammar.
//!
//! A unit is a vector of exact rational exponents over the seven SI base
//! dimensions, in the fixed order (M, L, T, Θ, I, J, N) with symbols
//! kg, m, s, K, A, cd, mol. The text grammar accepts those symbols, the
//! literal `1` (or an empty string) for a dimensionless quantity, `*`, `/`,
//! parentheses, and `^` with integer, decimal, or `p/q` exponents. A fraction
//! exponent binds tightly: `m^3/2` is m^(3/2), while a spaced slash divides
//! units. Exponent denominators are capped at 100.

use crate::rat::{format_rat, rat, ratq, Rat};
use crate::{Error, Result};
use num_traits::Zero;

/// Number of SI base dimensions.
pub const BASE_COUNT: usize = 7;

/// Base-unit symbols in canonical order (M, L, T, Θ, I, J, N).
pub const BASE_SYMBOLS: [&str; BASE_COUNT] = ["kg", "m", "s", "K", "A", "cd", "mol"];

/// Largest reduced exponent denominator the grammar accepts.
pub const MAX_EXPONENT_DENOMINATOR: i128 = 100;

/// Exact exponent vector over the SI base dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct DimVector {
    pub exps: [Rat; BASE_COUNT],
}

impl DimVector {
    /// The dimensionless vector.
    pub fn dimensionless() -> Self {
        Self::default()
    }

    /// Builds a vector from (symbol, exponent) pairs.
    pub fn from_pairs(pairs: &[(&str, Rat)]) -> Self {
        let mut v = Self::default();
        for (sym, e) in pairs {
            let idx = BASE_SYMBOLS
                .iter()
                .position(|s| s == sym)
                .unwrap_or_else(|| panic!("unknown base symbol {sym}"));
            v.exps[idx] += *e;
        }
        v
    }

    pub fn is_dimensionless(&self) -> bool {
        self.exps.iter().all(|e| e.is_zero())
    }

    /// Component-wise sum (unit product).
    pub fn add(&self, other: &DimVector) -> DimVector {
        let mut out = *self;
        for i in 0..BASE_COUNT {
            out.exps[i] += other.exps[i];
        }
        out
    }

    /// Component-wise difference (unit quotient).
    pub fn sub(&self, other: &DimVector) -> DimVector {
        let mut out = *self;
        for i in 0..BASE_COUNT {
            out.exps[i] -= other.exps[i];
        }
        out
    }

    /// Scales every exponent (unit raised to a rational power).
    pub fn scale(&self, k: Rat) -> DimVector {
        let mut out = *self;
        for e in &mut out.exps {
            *e *= k;
        }
        out
    }

    /// Canonical text: factors in base-dimension order joined by `*`,
    /// exponent 1 omitted, negatives as `^-q`, dimensionless as `1`.
    pub fn canonical(&self) -> String {
        let mut parts = Vec::new();
        for (i, e) in self.exps.iter().enumerate() {
            if e.is_zero() {
                continue;
            }
            if *e == rat(1) {
                parts.push(BASE_SYMBOLS[i].to_string());
            } else {
                parts.push(format!("{}^{}", BASE_SYMBOLS[i], format_rat(e)));
            }
        }
        if parts.is_empty() {
            "1".to_string()
        } else {
            parts.join("*")
        }
    }
}

/// Parses a unit expression. Empty or all-whitespace input is dimensionless.
pub fn parse_unit(input: &str) -> Result<DimVector> {
    let mut p = Parser {
        bytes: input.as_bytes(),
        pos: 0,
    };
    p.skip_ws();
    if p.pos == p.bytes.len() {
        return Ok(DimVector::dimensionless());
    }
    let v = p.expr()?;
    p.skip_ws();
    if p.pos != p.bytes.len() {
        return Err(p.syntax("unexpected trailing input"));
    }
    Ok(v)
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn syntax(&self, msg: &str) -> Error {
        Error::UnitSyntax {
            offset: self.pos,
            msg: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<DimVector> {
        let mut acc = self.term()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    acc = acc.add(&rhs);
                }
                Some(b'/') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    acc = acc.sub(&rhs);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<DimVector> {
        let base = self.factor()?;
        self.skip_ws();
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let e = self.exponent()?;
            Ok(base.scale(e))
        } else {
            Ok(base)
        }
    }

    fn factor(&mut self) -> Result<DimVector> {
        self.skip_ws();
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let v = self.expr()?;
                self.skip_ws();
                if self.peek() != Some(b')') {
                    return Err(self.syntax("expected `)`"));
                }
                self.pos += 1;
                Ok(v)
            }
            Some(b'1') => {
                if self
                    .bytes
                    .get(self.pos + 1)
                    .is_some_and(|b| b.is_ascii_alphanumeric())
                {
                    return Err(self.syntax("expected a base unit, `1`, or `(`"));
                }
                self.pos += 1;
                Ok(DimVector::dimensionless())
            }
            Some(b) if b.is_ascii_alphabetic() => {
                let start = self.pos;
                while self
                    .peek()
                    .is_some_and(|b| b.is_ascii_alphabetic())
                {
                    self.pos += 1;
                }
                let sym = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
                match BASE_SYMBOLS.iter().position(|s| *s == sym) {
                    Some(idx) => {
                        let mut v = DimVector::dimensionless();
                        v.exps[idx] = rat(1);
                        Ok(v)
                    }
                    None => Err(Error::UnknownUnit {
                        symbol: sym.to_string(),
                        offset: start,
                    }),
                }
            }
            _ => Err(self.syntax("expected a base unit, `1`, or `(`")),
        }
    }

    fn digits(&mut self) -> Result<i128> {
        let start = self.pos;
        while self.peek().is_some_and(|b| b.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.syntax("expected digits"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::UnitSyntax {
                offset: start,
                msg: "exponent out of range".to_string(),
            })
    }

    fn exponent(&mut self) -> Result<Rat> {
        self.skip_ws();
        let neg = match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                true
            }
            Some(b'+') => {
                self.pos += 1;
                false
            }
            _ => false,
        };
        self.skip_ws();
        let whole = self.digits()?;
        let mut value = rat(whole);
        match self.peek() {
            Some(b'.') => {
                self.pos += 1;
                let start = self.pos;
                let frac = self.digits()?;
                let places = (self.pos - start) as u32;
                let scale = 10i128.checked_pow(places).ok_or_else(|| Error::UnitSyntax {
                    offset: start,
                    msg: "exponent out of range".to_string(),
                })?;
                value += ratq(frac, scale);
            }
            // A fraction exponent must be compact (no whitespace) and the
            // slash must be followed by a digit; otherwise the slash belongs
            // to unit division.
            Some(b'/')
                if self
                    .bytes
                    .get(self.pos + 1)
                    .is_some_and(|b| b.is_ascii_digit()) =>
            {
                self.pos += 1;
                let start = self.pos;
                let den = self.digits()?;
                if den == 0 {
                    return Err(Error::UnitSyntax {
                        offset: start,
                        msg: "zero exponent denominator".to_string(),
                    });
                }
                value = ratq(whole, den);
            }
            _ => {}
        }
        if neg {
            value = -value;
        }
        if *value.denom() > MAX_EXPONENT_DENOMINATOR {
            return Err(Error::UnitSyntax {
                offset: self.pos,
                msg: format!(
                    "exponent denominator exceeds {MAX_EXPONENT_DENOMINATOR}"
                ),
            });
        }
        Ok(value)
    }
}
