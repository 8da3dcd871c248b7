//! Expression trees for discovered formulas: construction, node counting,
//! numeric evaluation, plain-text rendering, and a canonical s-expression
//! form with a round-tripping parser.

use crate::rat::{decimal_string, format_rat, parse_rat, to_f64, Rat};
use crate::{Error, Result};
use num_traits::Zero;
use std::collections::HashMap;
use std::fmt::Write as _;

/// Unary functions available to the expression layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Atan,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Atan => "atan",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "atan" => Func::Atan,
            _ => return None,
        })
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Tan => x.tan(),
            Func::Exp => x.exp(),
            Func::Ln => x.ln(),
            Func::Sqrt => x.sqrt(),
            Func::Abs => x.abs(),
            Func::Atan => x.atan(),
        }
    }
}

/// A formula over named variables. Exponents are exact rationals; all other
/// leaves are f64 constants.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(String),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Rat),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Add(Box::new(a), Box::new(b))
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::Sub(Box::new(a), Box::new(b))
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::Mul(Box::new(a), Box::new(b))
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::Div(Box::new(a), Box::new(b))
    }

    pub fn pow(base: Expr, e: Rat) -> Expr {
        Expr::Pow(Box::new(base), e)
    }

    pub fn call(f: Func, arg: Expr) -> Expr {
        Expr::Call(f, Box::new(arg))
    }

    /// Power product Π xⱼ^{wⱼ} over the nonzero exponents. All-zero input
    /// yields the constant 1.
    pub fn power_product(names: &[String], w: &[Rat]) -> Expr {
        assert_eq!(names.len(), w.len());
        let mut acc: Option<Expr> = None;
        for (name, e) in names.iter().zip(w) {
            if e.is_zero() {
                continue;
            }
            let factor = if e.is_integer() && *e.numer() == 1 {
                Expr::var(name.clone())
            } else {
                Expr::pow(Expr::var(name.clone()), *e)
            };
            acc = Some(match acc {
                None => factor,
                Some(prev) => Expr::mul(prev, factor),
            });
        }
        acc.unwrap_or(Expr::Const(1.0))
    }

    /// Total node count; exponents count as one node each.
    pub fn node_count(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                1 + a.node_count() + b.node_count()
            }
            Expr::Pow(base, _) => 2 + base.node_count(),
            Expr::Call(_, arg) => 1 + arg.node_count(),
        }
    }

    /// Evaluates with the given variable bindings; unbound variables give NaN.
    pub fn eval(&self, vars: &HashMap<&str, f64>) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(name) => vars.get(name.as_str()).copied().unwrap_or(f64::NAN),
            Expr::Add(a, b) => a.eval(vars) + b.eval(vars),
            Expr::Sub(a, b) => a.eval(vars) - b.eval(vars),
            Expr::Mul(a, b) => a.eval(vars) * b.eval(vars),
            Expr::Div(a, b) => a.eval(vars) / b.eval(vars),
            Expr::Pow(base, e) => {
                let b = base.eval(vars);
                if e.is_integer() && *e.numer() >= i32::MIN as i128 && *e.numer() <= i32::MAX as i128
                {
                    b.powi(*e.numer() as i32)
                } else {
                    b.powf(to_f64(e))
                }
            }
            Expr::Call(f, arg) => f.apply(arg.eval(vars)),
        }
    }

    /// Plain-text rendering with conventional precedence.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_prec(&mut out, 0);
        out
    }

    fn render_prec(&self, out: &mut String, parent: u8) {
        let prec = match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Pow(..) => 3,
            _ => 4,
        };
        let needs_parens = prec < parent
            || (prec == 4 && matches!(self, Expr::Const(c) if *c < 0.0) && parent > 0);
        if needs_parens {
            out.push('(');
        }
        match self {
            Expr::Const(c) => {
                let _ = write!(out, "{}", fmt_const(*c));
            }
            Expr::Var(name) => out.push_str(name),
            Expr::Add(a, b) => {
                a.render_prec(out, 1);
                // Fold an additive negative constant into subtraction.
                if let Expr::Const(c) = **b {
                    if c < 0.0 {
                        let _ = write!(out, " - {}", fmt_const(-c));
                        if needs_parens {
                            out.push(')');
                        }
                        return;
                    }
                }
                out.push_str(" + ");
                b.render_prec(out, 1);
            }
            Expr::Sub(a, b) => {
                a.render_prec(out, 1);
                out.push_str(" - ");
                b.render_prec(out, 2);
            }
            Expr::Mul(a, b) => {
                a.render_prec(out, 2);
                out.push_str(" * ");
                b.render_prec(out, 2);
            }
            Expr::Div(a, b) => {
                a.render_prec(out, 2);
                out.push_str(" / ");
                b.render_prec(out, 3);
            }
            Expr::Pow(base, e) => {
                base.render_prec(out, 4);
                out.push('^');
                out.push_str(&fmt_exponent(e));
            }
            Expr::Call(f, arg) => {
                out.push_str(f.name());
                out.push('(');
                arg.render_prec(out, 0);
                out.push(')');
            }
        }
        if needs_parens {
            out.push(')');
        }
    }

    /// Canonical s-expression: operators `+ - * / ^`, unary function names,
    /// float atoms in exponent notation, rational exponents as `p/q`.
    pub fn to_sexpr(&self) -> String {
        match self {
            Expr::Const(c) => format!("{c:e}"),
            Expr::Var(name) => name.clone(),
            Expr::Add(a, b) => format!("(+ {} {})", a.to_sexpr(), b.to_sexpr()),
            Expr::Sub(a, b) => format!("(- {} {})", a.to_sexpr(), b.to_sexpr()),
            Expr::Mul(a, b) => format!("(* {} {})", a.to_sexpr(), b.to_sexpr()),
            Expr::Div(a, b) => format!("(/ {} {})", a.to_sexpr(), b.to_sexpr()),
            Expr::Pow(base, e) => format!("(^ {} {})", base.to_sexpr(), format_rat(e)),
            Expr::Call(f, arg) => format!("({} {})", f.name(), arg.to_sexpr()),
        }
    }
}

fn fmt_const(c: f64) -> String {
    let abs = c.abs();
    if abs != 0.0 && (abs >= 1e6 || abs < 1e-3) {
        format!("{c:e}")
    } else {
        format!("{c}")
    }
}

fn fmt_exponent(e: &Rat) -> String {
    if e.is_integer() {
        e.numer().to_string()
    } else if let Some(d) = decimal_string(e) {
        d
    } else {
        format!("({})", format_rat(e))
    }
}

/// Parses the canonical s-expression form produced by [`Expr::to_sexpr`].
pub fn parse_sexpr(input: &str) -> Result<Expr> {
    let tokens = tokenize(input)?;
    let mut pos = 0usize;
    let expr = parse_tokens(&tokens, &mut pos)?;
    if pos != tokens.len() {
        return Err(Error::InvalidInput(format!(
            "trailing tokens after s-expression: {:?}",
            &tokens[pos..]
        )));
    }
    Ok(expr)
}

fn tokenize(input: &str) -> Result<Vec<String>> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for ch in input.chars() {
        match ch {
            '(' | ')' => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
                tokens.push(ch.to_string());
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    if tokens.is_empty() {
        return Err(Error::InvalidInput("empty s-expression".into()));
    }
    Ok(tokens)
}

fn parse_tokens(tokens: &[String], pos: &mut usize) -> Result<Expr> {
    let tok = tokens
        .get(*pos)
        .ok_or_else(|| Error::InvalidInput("unexpected end of s-expression".into()))?;
    if tok == ")" {
        return Err(Error::InvalidInput("unexpected `)`".into()));
    }
    if tok != "(" {
        *pos += 1;
        return parse_atom(tok);
    }
    *pos += 1;
    let op = tokens
        .get(*pos)
        .ok_or_else(|| Error::InvalidInput("missing operator".into()))?
        .clone();
    *pos += 1;
    let expr = match op.as_str() {
        "+" | "-" | "*" | "/" => {
            let a = parse_tokens(tokens, pos)?;
            let b = parse_tokens(tokens, pos)?;
            match op.as_str() {
                "+" => Expr::add(a, b),
                "-" => Expr::sub(a, b),
                "*" => Expr::mul(a, b),
                _ => Expr::div(a, b),
            }
        }
        "^" => {
            let base = parse_tokens(tokens, pos)?;
            let e_tok = tokens
                .get(*pos)
                .ok_or_else(|| Error::InvalidInput("missing exponent".into()))?;
            let e = parse_rat(e_tok).ok_or_else(|| {
                Error::InvalidInput(format!("bad exponent `{e_tok}` in s-expression"))
            })?;
            *pos += 1;
            Expr::pow(base, e)
        }
        name => {
            let f = Func::from_name(name).ok_or_else(|| {
                Error::InvalidInput(format!("unknown operator `{name}` in s-expression"))
            })?;
            let arg = parse_tokens(tokens, pos)?;
            Expr::call(f, arg)
        }
    };
    match tokens.get(*pos) {
        Some(t) if t == ")" => {
            *pos += 1;
            Ok(expr)
        }
        other => Err(Error::InvalidInput(format!(
            "expected `)`, found {other:?}"
        ))),
    }
}

fn parse_atom(tok: &str) -> Result<Expr> {
    // Names win over numeric parsing so that f64's `inf`/`NaN` spellings
    // stay available as variable names.
    if tok
        .chars()
        .next()
        .is_some_and(|c| c.is_alphabetic() || c == '_')
    {
        return Ok(Expr::var(tok));
    }
    if let Ok(v) = tok.parse::<f64>() {
        return Ok(Expr::Const(v));
    }
    Err(Error::InvalidInput(format!("bad atom `{tok}`")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rat::{rat, ratq};
    use rand::{Rng, SeedableRng};

    fn vars(pairs: &[(&'static str, f64)]) -> HashMap<&'static str, f64> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn node_count_matches_hand_counts() {
        // a * x1^2 -> nodes: *, a, ^, x1, 2.
        let e = Expr::mul(Expr::constant(0.5), Expr::pow(Expr::var("x1"), rat(2)));
        assert_eq!(e.node_count(), 5);
        assert_eq!(Expr::constant(3.0).node_count(), 1);
        let s = Expr::call(Func::Sin, Expr::var("z"));
        assert_eq!(s.node_count(), 2);
    }

    #[test]
    fn power_product_skips_zero_exponents() {
        let names: Vec<String> = ["d", "rho", "g"].iter().map(|s| s.to_string()).collect();
        let e = Expr::power_product(&names, &[rat(3), rat(1), rat(0)]);
        assert_eq!(e.render(), "d^3 * rho");
        let one = Expr::power_product(&names, &[rat(0), rat(0), rat(0)]);
        assert_eq!(one, Expr::Const(1.0));
    }

    #[test]
    fn eval_matches_direct_computation() {
        let e = Expr::add(
            Expr::mul(Expr::constant(2.0), Expr::pow(Expr::var("x"), ratq(3, 2))),
            Expr::call(Func::Sin, Expr::var("y")),
        );
        let v = e.eval(&vars(&[("x", 4.0), ("y", 1.0)]));
        assert!((v - (2.0 * 8.0 + 1.0f64.sin())).abs() < 1e-12);
        assert!(e.eval(&vars(&[("x", 4.0)])).is_nan());
    }

    #[test]
    fn render_uses_precedence_and_folds_negative_constants() {
        let e = Expr::mul(
            Expr::add(Expr::var("a"), Expr::var("b")),
            Expr::var("c"),
        );
        assert_eq!(e.render(), "(a + b) * c");
        let f = Expr::add(Expr::var("x"), Expr::constant(-1.38e24));
        assert_eq!(f.render(), "x - 1.38e24");
        let g = Expr::pow(Expr::mul(Expr::var("x"), Expr::var("y")), rat(2));
        assert_eq!(g.render(), "(x * y)^2");
        let h = Expr::pow(Expr::var("t"), ratq(-3, 2));
        assert_eq!(h.render(), "t^-1.5");
        let thirds = Expr::pow(Expr::var("u"), ratq(1, 3));
        assert_eq!(thirds.render(), "u^(1/3)");
        let d = Expr::div(Expr::var("x"), Expr::mul(Expr::var("y"), Expr::var("z")));
        assert_eq!(d.render(), "x / (y * z)");
    }

    #[test]
    fn sexpr_round_trips_hand_cases() {
        let e = Expr::sub(
            Expr::mul(
                Expr::constant(6.8e26),
                Expr::power_product(
                    &["v_e".to_string(), "t_d".to_string()],
                    &[rat(2), rat(-2)],
                ),
            ),
            Expr::constant(1.38e24),
        );
        let s = e.to_sexpr();
        assert_eq!(parse_sexpr(&s).unwrap(), e);
        assert!(s.starts_with("(- (*"));
    }

    #[test]
    fn sexpr_parse_rejects_malformed_input() {
        assert!(parse_sexpr("").is_err());
        assert!(parse_sexpr("(+ 1)").is_err());
        assert!(parse_sexpr("(+ 1 2").is_err());
        assert!(parse_sexpr("(frob 1)").is_err());
        assert!(parse_sexpr("(+ 1 2) extra").is_err());
        assert!(parse_sexpr("(^ x oops)").is_err());
    }

    fn random_expr(rng: &mut impl Rng, depth: usize) -> Expr {
        if depth == 0 || rng.gen_bool(0.3) {
            return if rng.gen_bool(0.5) {
                // Constants drawn over a wide dynamic range, sign included.
                let mag = 10f64.powi(rng.gen_range(-12..13));
                Expr::constant(rng.gen_range(-5.0..5.0) * mag)
            } else {
                Expr::var(format!("x{}", rng.gen_range(0..4)))
            };
        }
        match rng.gen_range(0..6) {
            0 => Expr::add(random_expr(rng, depth - 1), random_expr(rng, depth - 1)),
            1 => Expr::sub(random_expr(rng, depth - 1), random_expr(rng, depth - 1)),
            2 => Expr::mul(random_expr(rng, depth - 1), random_expr(rng, depth - 1)),
            3 => Expr::div(random_expr(rng, depth - 1), random_expr(rng, depth - 1)),
            4 => Expr::pow(
                random_expr(rng, depth - 1),
                ratq(rng.gen_range(-6..=6), rng.gen_range(1..=4)),
            ),
            _ => {
                let f = [
                    Func::Sin,
                    Func::Cos,
                    Func::Tan,
                    Func::Exp,
                    Func::Ln,
                    Func::Sqrt,
                    Func::Abs,
                    Func::Atan,
                ][rng.gen_range(0..8)];
                Expr::call(f, random_expr(rng, depth - 1))
            }
        }
    }

    /// parse(to_sexpr(e)) == e structurally for 200 random trees.
    #[test]
    fn sexpr_round_trips_random_trees() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let e = random_expr(&mut rng, 5);
            let s = e.to_sexpr();
            let back = parse_sexpr(&s).unwrap_or_else(|err| panic!("{err} for `{s}`"));
            assert_eq!(back, e, "round trip failed for `{s}`");
        }
    }
}
