//! A small arithmetic language for boundary data, forcing terms and smooth
//! potential parts.
//!
//! Grammar, from loosest to tightest binding:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | variable | call | '(' expr ')'
//! ```
//!
//! Variables are `x1 y1 x2 y2 t absz`; `abs2` (|z|²) and `re2` (Re z₁) are
//! nullary builtins that may be written with or without `()`. The functions
//! are `log`, `exp` and a variadic `max`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::SpaceTimeFn;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X1,
    Y1,
    X2,
    Y2,
    T,
    AbsZ,
    Abs2,
    Re2,
}

impl Var {
    fn name(self) -> &'static str {
        match self {
            Var::X1 => "x1",
            Var::Y1 => "y1",
            Var::X2 => "x2",
            Var::Y2 => "y2",
            Var::T => "t",
            Var::AbsZ => "absz",
            Var::Abs2 => "abs2",
            Var::Re2 => "re2",
        }
    }

    fn from_name(name: &str) -> Option<Var> {
        Some(match name {
            "x1" => Var::X1,
            "y1" => Var::Y1,
            "x2" => Var::X2,
            "y2" => Var::Y2,
            "t" => Var::T,
            "absz" => Var::AbsZ,
            "abs2" => Var::Abs2,
            "re2" => Var::Re2,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Log,
    Exp,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// Evaluation point: real coordinates `(x1, y1[, x2, y2])` and a time.
#[derive(Debug, Clone, Copy)]
pub struct Env<'a> {
    pub coords: &'a [f64],
    pub t: f64,
}

impl Env<'_> {
    fn var(&self, v: Var) -> f64 {
        let c = |i: usize| self.coords.get(i).copied().unwrap_or(0.0);
        match v {
            Var::X1 | Var::Re2 => c(0),
            Var::Y1 => c(1),
            Var::X2 => c(2),
            Var::Y2 => c(3),
            Var::T => self.t,
            Var::Abs2 => self.coords.iter().map(|x| x * x).sum(),
            Var::AbsZ => self.coords.iter().map(|x| x * x).sum::<f64>().sqrt(),
        }
    }
}

impl Expr {
    pub fn eval(&self, env: &Env<'_>) -> Result<f64> {
        let v = match self {
            Expr::Num(x) => *x,
            Expr::Var(v) => env.var(*v),
            Expr::Neg(e) => -e.eval(env)?,
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(env)?, b.eval(env)?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(Error::ExpressionDomain("division by zero".into()));
                        }
                        a / b
                    }
                    BinOp::Pow => a.powf(b),
                }
            }
            Expr::Call(f, args) => match f {
                Func::Log => {
                    let x = args[0].eval(env)?;
                    if x <= 0.0 {
                        return Err(Error::ExpressionDomain(format!("log of nonpositive value {x}")));
                    }
                    x.ln()
                }
                Func::Exp => args[0].eval(env)?.exp(),
                Func::Max => {
                    let mut m = f64::NEG_INFINITY;
                    for a in args {
                        m = m.max(a.eval(env)?);
                    }
                    m
                }
            },
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::ExpressionDomain(format!("non-finite value in `{self}`")))
        }
    }

    /// True when the expression never reads `t`.
    pub fn is_time_independent(&self) -> bool {
        match self {
            Expr::Num(_) => true,
            Expr::Var(v) => *v != Var::T,
            Expr::Neg(e) => e.is_time_independent(),
            Expr::Bin(_, a, b) => a.is_time_independent() && b.is_time_independent(),
            Expr::Call(_, args) => args.iter().all(Expr::is_time_independent),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(x) => write!(f, "{x:?}"),
            Expr::Var(v) => f.write_str(v.name()),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Call(func, args) => {
                let name = match func {
                    Func::Log => "log",
                    Func::Exp => "exp",
                    Func::Max => "max",
                };
                write!(f, "{name}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
    End,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(text: &'a str) -> Result<Vec<(Tok, usize)>> {
        let mut lx = Lexer {
            src: text.as_bytes(),
            pos: 0,
        };
        let mut out = Vec::new();
        loop {
            while lx.pos < lx.src.len() && lx.src[lx.pos].is_ascii_whitespace() {
                lx.pos += 1;
            }
            let start = lx.pos;
            let Some(&c) = lx.src.get(lx.pos) else {
                out.push((Tok::End, start));
                return Ok(out);
            };
            let tok = match c {
                b'0'..=b'9' | b'.' => lx.number()?,
                b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                    while lx.pos < lx.src.len()
                        && (lx.src[lx.pos].is_ascii_alphanumeric() || lx.src[lx.pos] == b'_')
                    {
                        lx.pos += 1;
                    }
                    Tok::Ident(text[start..lx.pos].to_string())
                }
                b'+' | b'-' | b'*' | b'/' | b'^' => {
                    lx.pos += 1;
                    Tok::Op(c as char)
                }
                b'(' => {
                    lx.pos += 1;
                    Tok::LParen
                }
                b')' => {
                    lx.pos += 1;
                    Tok::RParen
                }
                b',' => {
                    lx.pos += 1;
                    Tok::Comma
                }
                _ => {
                    return Err(Error::ExpressionSyntax {
                        column: start + 1,
                        message: format!("unexpected character `{}`", c as char),
                    })
                }
            };
            out.push((tok, start));
        }
    }

    fn number(&mut self) -> Result<Tok> {
        let start = self.pos;
        let digits = |lx: &mut Self| {
            while lx.pos < lx.src.len() && lx.src[lx.pos].is_ascii_digit() {
                lx.pos += 1;
            }
        };
        digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            digits(self);
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            let exp_start = self.pos;
            digits(self);
            if self.pos == exp_start {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or_default();
        text.parse::<f64>()
            .map(Tok::Num)
            .map_err(|_| Error::ExpressionSyntax {
                column: start + 1,
                message: format!("malformed number `{text}`"),
            })
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn column(&self) -> usize {
        self.toks[self.at].1 + 1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::ExpressionSyntax {
            column: self.column(),
            message: message.into(),
        })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<()> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.fail(format!("expected {what}"))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Tok::Op(c @ ('+' | '-')) = *self.peek() {
            self.bump();
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Tok::Op(c @ ('*' | '/')) = *self.peek() {
            self.bump();
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if *self.peek() == Tok::Op('-') {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if *self.peek() == Tok::Op('^') {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.peek().clone() {
            Tok::Num(x) => {
                self.bump();
                Ok(Expr::Num(x))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let col = self.column();
                self.bump();
                if let Some(v) = Var::from_name(&name) {
                    if matches!(v, Var::Abs2 | Var::Re2) && *self.peek() == Tok::LParen {
                        self.bump();
                        self.expect(Tok::RParen, "`)`")?;
                    }
                    return Ok(Expr::Var(v));
                }
                let func = match name.as_str() {
                    "log" => Func::Log,
                    "exp" => Func::Exp,
                    "max" => Func::Max,
                    _ => {
                        return Err(Error::ExpressionSyntax {
                            column: col,
                            message: format!("unknown identifier `{name}`"),
                        })
                    }
                };
                self.expect(Tok::LParen, "`(`")?;
                let mut args = vec![self.expr()?];
                while *self.peek() == Tok::Comma {
                    self.bump();
                    args.push(self.expr()?);
                }
                self.expect(Tok::RParen, "`)`")?;
                let ok = match func {
                    Func::Max => args.len() >= 2,
                    _ => args.len() == 1,
                };
                if !ok {
                    return Err(Error::ExpressionSyntax {
                        column: col,
                        message: format!("wrong number of arguments to `{name}`"),
                    });
                }
                Ok(Expr::Call(func, args))
            }
            Tok::End => self.fail("unexpected end of input"),
            other => self.fail(format!("unexpected token {other:?}")),
        }
    }
}

pub fn parse_expression(text: &str) -> Result<Expr> {
    let toks = Lexer::tokens(text)?;
    let mut p = Parser { toks, at: 0 };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return p.fail("trailing input");
    }
    Ok(e)
}

impl FromStr for Expr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_expression(s)
    }
}

/// An expression bound to its source text, usable wherever a space-time
/// function is expected. Domain errors evaluate to NaN, which the solver
/// rejects as a non-finite residual.
#[derive(Debug, Clone)]
pub struct ExprFn {
    pub source: String,
    pub expr: Expr,
}

impl ExprFn {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(ExprFn {
            source: text.to_string(),
            expr: parse_expression(text)?,
        })
    }

    pub fn shared(text: &str) -> Result<Arc<dyn SpaceTimeFn>> {
        Ok(Arc::new(Self::parse(text)?))
    }
}

impl SpaceTimeFn for ExprFn {
    fn eval(&self, x: &[f64], t: f64) -> f64 {
        self.expr.eval(&Env { coords: x, t }).unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(e: &str, coords: &[f64], t: f64) -> f64 {
        parse_expression(e).unwrap().eval(&Env { coords, t }).unwrap()
    }

    #[test]
    fn abs2_at_half_radius() {
        assert!((at("abs2", &[0.3, 0.4], 0.0) - 0.25).abs() < 1e-15);
        assert!((at("abs2()", &[0.3, 0.4], 0.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn log_abs2_at_inverse_e() {
        let r = (-1.0f64).exp();
        assert!((at("log(abs2)", &[r, 0.0], 0.0) + 2.0).abs() < 1e-14);
    }

    #[test]
    fn precedence() {
        assert_eq!(at("1+2*3^2", &[], 0.0), 19.0);
        assert_eq!(at("-2^2", &[], 0.0), -4.0);
        assert_eq!(at("2^-1", &[], 0.0), 0.5);
        assert_eq!(at("8/4/2", &[], 0.0), 1.0);
        assert_eq!(at("2-3-4", &[], 0.0), -5.0);
        assert_eq!(at("max(1, 3, 2) + re2", &[0.5, 9.0], 0.0), 3.5);
        assert_eq!(at("exp(0) * t", &[], 2.5), 2.5);
    }

    #[test]
    fn unterminated_call_reports_column() {
        match parse_expression("log(") {
            Err(Error::ExpressionSyntax { column, .. }) => assert_eq!(column, 5),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_expression("1 + foo"),
            Err(Error::ExpressionSyntax { column: 5, .. })
        ));
        assert!(parse_expression("max(1)").is_err());
        assert!(parse_expression("1 2").is_err());
    }

    #[test]
    fn log_of_nonpositive_is_domain_error() {
        let e = parse_expression("log(x1)").unwrap();
        assert!(matches!(
            e.eval(&Env { coords: &[0.0, 0.0], t: 0.0 }),
            Err(Error::ExpressionDomain(_))
        ));
    }

    #[test]
    fn printing_reparses_to_same_tree() {
        for src in ["1+2*3^2", "-x1^2 + log(abs2 + 1e-3)", "max(t, -y2, 2^3^2) / 7"] {
            let e = parse_expression(src).unwrap();
            let again = parse_expression(&e.to_string()).unwrap();
            assert_eq!(e, again, "{src}");
        }
    }
}
