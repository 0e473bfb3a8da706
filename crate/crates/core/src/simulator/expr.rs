//! Cost-model expression language.
//!
//! ```text
//! expr    := compare
//! compare := sum (("<" | "<=" | ">" | ">=") sum)?
//! sum     := product (("+" | "-") product)*
//! product := unary (("*" | "/") unary)*
//! unary   := "-" unary | power
//! power   := atom ("^" unary)?
//! atom    := number unit? | ident | ident "(" expr ("," expr)* ")" | "(" expr ")"
//! unit    := "KiB" | "MiB" | "GiB"
//! ```
//!
//! Comparisons yield 1 or 0. Functions: `max`, `min` (one or more
//! arguments), `if(c, a, b)` (a when c is non-zero), `ln`, `exp`, `sqrt`,
//! `abs`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(String, Vec<Expr>),
}

const FUNCTIONS: &[(&str, usize, usize)] = &[
    ("max", 1, usize::MAX),
    ("min", 1, usize::MAX),
    ("if", 3, 3),
    ("ln", 1, 1),
    ("exp", 1, 1),
    ("sqrt", 1, 1),
    ("abs", 1, 1),
];

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let mut p = Parser { src, pos: 0 };
        let e = p.compare()?;
        p.skip_ws();
        if p.pos < src.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn variables(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => {
                out.insert(v);
            }
            Expr::Neg(e) => e.collect_vars(out),
            Expr::Bin(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
        }
    }

    /// Evaluates with `vars`; unbound variables are an error.
    pub fn eval(&self, vars: &BTreeMap<String, f64>) -> Result<f64> {
        Ok(match self {
            Expr::Num(n) => *n,
            Expr::Var(v) => *vars
                .get(v)
                .ok_or_else(|| Error::invalid(format!("unbound variable `{v}`")))?,
            Expr::Neg(e) => -e.eval(vars)?,
            Expr::Bin(op, a, b) => {
                let (x, y) = (a.eval(vars)?, b.eval(vars)?);
                let truth = |c: bool| if c { 1.0 } else { 0.0 };
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                    BinOp::Pow => x.powf(y),
                    BinOp::Lt => truth(x < y),
                    BinOp::Le => truth(x <= y),
                    BinOp::Gt => truth(x > y),
                    BinOp::Ge => truth(x >= y),
                }
            }
            Expr::Call(name, args) => {
                if name == "if" {
                    return if args[0].eval(vars)? != 0.0 {
                        args[1].eval(vars)
                    } else {
                        args[2].eval(vars)
                    };
                }
                let vals = args.iter().map(|a| a.eval(vars)).collect::<Result<Vec<f64>>>()?;
                match name.as_str() {
                    "max" => vals.into_iter().fold(f64::NEG_INFINITY, f64::max),
                    "min" => vals.into_iter().fold(f64::INFINITY, f64::min),
                    "ln" => vals[0].ln(),
                    "exp" => vals[0].exp(),
                    "sqrt" => vals[0].sqrt(),
                    "abs" => vals[0].abs(),
                    _ => unreachable!("checked at parse time"),
                }
            }
        })
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(n) => write!(f, "{n}"),
            Expr::Var(v) => f.write_str(v),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, a, b) => {
                let s = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                    BinOp::Lt => "<",
                    BinOp::Le => "<=",
                    BinOp::Gt => ">",
                    BinOp::Ge => ">=",
                };
                write!(f, "({a} {s} {b})")
            }
            Expr::Call(n, args) => {
                let a: Vec<String> = args.iter().map(|a| a.to_string()).collect();
                write!(f, "{n}({})", a.join(", "))
            }
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> Error {
        Error::Expression {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn eat(&mut self, token: &str) -> bool {
        self.skip_ws();
        if self.src[self.pos..].starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn compare(&mut self) -> Result<Expr> {
        let lhs = self.sum()?;
        for (tok, op) in [("<=", BinOp::Le), (">=", BinOp::Ge), ("<", BinOp::Lt), (">", BinOp::Gt)] {
            if self.eat(tok) {
                let rhs = self.sum()?;
                return Ok(Expr::Bin(op, Box::new(lhs), Box::new(rhs)));
            }
        }
        Ok(lhs)
    }

    fn sum(&mut self) -> Result<Expr> {
        let mut e = self.product()?;
        loop {
            let op = if self.eat("+") {
                BinOp::Add
            } else if self.eat("-") {
                BinOp::Sub
            } else {
                return Ok(e);
            };
            e = Expr::Bin(op, Box::new(e), Box::new(self.product()?));
        }
    }

    fn product(&mut self) -> Result<Expr> {
        let mut e = self.unary()?;
        loop {
            let op = if self.eat("*") {
                BinOp::Mul
            } else if self.eat("/") {
                BinOp::Div
            } else {
                return Ok(e);
            };
            e = Expr::Bin(op, Box::new(e), Box::new(self.unary()?));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat("-") {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat("^") {
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        self.skip_ws();
        let start = self.pos;
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let e = self.compare()?;
                if !self.eat(")") {
                    return Err(self.error("expected `)`"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => {
                while let Some(c) = self.peek() {
                    let exp_sign = (c == '-' || c == '+') && self.src[..self.pos].ends_with(['e', 'E']);
                    if c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || exp_sign {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                let text = &self.src[start..self.pos];
                let n: f64 = text.parse().map_err(|_| Error::Expression {
                    offset: start,
                    message: format!("malformed number `{text}`"),
                })?;
                let unit = [("KiB", 1u64 << 10), ("MiB", 1 << 20), ("GiB", 1 << 30)]
                    .into_iter()
                    .find(|(u, _)| self.src[self.pos..].starts_with(u));
                Ok(Expr::Num(match unit {
                    Some((u, scale)) => {
                        self.pos += u.len();
                        n * scale as f64
                    }
                    None => n,
                }))
            }
            Some(c) if c.is_ascii_alphabetic() || c == '_' => {
                while let Some(c) = self.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                let name = self.src[start..self.pos].to_string();
                if !self.eat("(") {
                    return Ok(Expr::Var(name));
                }
                let Some(&(_, lo, hi)) = FUNCTIONS.iter().find(|(f, _, _)| *f == name) else {
                    return Err(Error::Expression {
                        offset: start,
                        message: format!("unknown function `{name}`"),
                    });
                };
                let mut args = vec![self.compare()?];
                while self.eat(",") {
                    args.push(self.compare()?);
                }
                if !self.eat(")") {
                    return Err(self.error("expected `)` or `,`"));
                }
                if args.len() < lo || args.len() > hi {
                    return Err(Error::Expression {
                        offset: start,
                        message: format!("`{name}` takes {lo}..{hi} arguments, got {}", args.len()),
                    });
                }
                Ok(Expr::Call(name, args))
            }
            _ => Err(self.error("expected a number, name or `(`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(src: &str, vars: &[(&str, f64)]) -> f64 {
        let v = vars.iter().map(|(k, x)| (k.to_string(), *x)).collect();
        Expr::parse(src).unwrap().eval(&v).unwrap()
    }

    #[test]
    fn precedence_and_units() {
        assert_eq!(eval("1 + 2 * 3", &[]), 7.0);
        assert_eq!(eval("(1 + 2) * 3", &[]), 9.0);
        assert_eq!(eval("-2 ^ 2", &[]), -4.0);
        assert_eq!(eval("2 ^ 3 ^ 2", &[]), 512.0);
        assert_eq!(eval("8 / 4 / 2", &[]), 1.0);
        assert_eq!(eval("32MiB", &[]), 33554432.0);
        assert_eq!(eval("1.5e3 + 1e-3", &[]), 1500.001);
    }

    #[test]
    fn conditionals_and_functions() {
        assert_eq!(eval("if(buf < 32MiB, 0.3, 0)", &[("buf", 16.0 * 1048576.0)]), 0.3);
        assert_eq!(eval("if(buf < 32MiB, 0.3, 0)", &[("buf", 64.0 * 1048576.0)]), 0.0);
        assert_eq!(eval("max(0, x - 4, 1)", &[("x", 10.0)]), 6.0);
        assert_eq!(eval("min(3, x)", &[("x", 10.0)]), 3.0);
        assert_eq!(eval("(x >= 2) * 5", &[("x", 2.0)]), 5.0);
        assert_eq!(eval("sqrt(abs(-16)) + ln(exp(2))", &[]), 6.0);
    }

    #[test]
    fn errors_carry_offsets() {
        match Expr::parse("1 + foo(2)") {
            Err(Error::Expression { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
        assert!(Expr::parse("1 +").is_err());
        assert!(Expr::parse("(1").is_err());
        assert!(Expr::parse("if(1, 2)").is_err());
        assert!(Expr::parse("1 2").is_err());
        assert!(Expr::parse("x").unwrap().eval(&BTreeMap::new()).is_err());
        assert_eq!(
            Expr::parse("a * b + c").unwrap().variables().into_iter().collect::<Vec<_>>(),
            vec!["a", "b", "c"]
        );
    }
}
