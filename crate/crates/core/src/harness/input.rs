//! Scalar input signals `u(t)`: a small expression tree in `t` with a text
//! parser and symbolic differentiation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum InputExpr {
    Const { value: f64 },
    Time,
    Neg { expr: Box<InputExpr> },
    Add { terms: Vec<InputExpr> },
    Mul { factors: Vec<InputExpr> },
    Div { num: Box<InputExpr>, den: Box<InputExpr> },
    Pow { base: Box<InputExpr>, exponent: i32 },
    Sin { arg: Box<InputExpr> },
    Cos { arg: Box<InputExpr> },
    Exp { arg: Box<InputExpr> },
}

use InputExpr::*;

fn c(value: f64) -> InputExpr {
    Const { value }
}

fn neg(e: InputExpr) -> InputExpr {
    match e {
        Const { value } => c(-value),
        Neg { expr } => *expr,
        e => Neg { expr: Box::new(e) },
    }
}

fn add(terms: Vec<InputExpr>) -> InputExpr {
    let mut k = 0.0;
    let mut rest = Vec::new();
    for t in terms {
        match t {
            Const { value } => k += value,
            Add { terms } => rest.extend(terms),
            t => rest.push(t),
        }
    }
    if k != 0.0 || rest.is_empty() {
        rest.push(c(k));
    }
    if rest.len() == 1 {
        rest.pop().unwrap()
    } else {
        Add { terms: rest }
    }
}

fn mul(factors: Vec<InputExpr>) -> InputExpr {
    let mut k = 1.0;
    let mut rest = Vec::new();
    for f in factors {
        match f {
            Const { value } => k *= value,
            Mul { factors } => rest.extend(factors),
            f => rest.push(f),
        }
    }
    if k == 0.0 {
        return c(0.0);
    }
    if k != 1.0 || rest.is_empty() {
        rest.insert(0, c(k));
    }
    if rest.len() == 1 {
        rest.pop().unwrap()
    } else {
        Mul { factors: rest }
    }
}

impl InputExpr {
    pub fn constant(value: f64) -> Self {
        c(value)
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Const { value } => *value,
            Time => t,
            Neg { expr } => -expr.eval(t),
            Add { terms } => terms.iter().map(|e| e.eval(t)).sum(),
            Mul { factors } => factors.iter().map(|e| e.eval(t)).product(),
            Div { num, den } => num.eval(t) / den.eval(t),
            Pow { base, exponent } => base.eval(t).powi(*exponent),
            Sin { arg } => arg.eval(t).sin(),
            Cos { arg } => arg.eval(t).cos(),
            Exp { arg } => arg.eval(t).exp(),
        }
    }

    pub fn derivative(&self) -> InputExpr {
        match self {
            Const { .. } => c(0.0),
            Time => c(1.0),
            Neg { expr } => neg(expr.derivative()),
            Add { terms } => add(terms.iter().map(|e| e.derivative()).collect()),
            Mul { factors } => add(
                (0..factors.len())
                    .map(|i| {
                        mul(factors.iter().enumerate().map(|(j, f)| if i == j { f.derivative() } else { f.clone() }).collect())
                    })
                    .collect(),
            ),
            Div { num, den } => Div {
                num: Box::new(add(vec![
                    mul(vec![num.derivative(), (**den).clone()]),
                    neg(mul(vec![(**num).clone(), den.derivative()])),
                ])),
                den: Box::new(Pow { base: den.clone(), exponent: 2 }),
            },
            Pow { base, exponent } => {
                if *exponent == 0 {
                    return c(0.0);
                }
                let lower = if *exponent == 1 { c(1.0) } else { Pow { base: base.clone(), exponent: exponent - 1 } };
                mul(vec![c(*exponent as f64), lower, base.derivative()])
            }
            Sin { arg } => mul(vec![Cos { arg: arg.clone() }, arg.derivative()]),
            Cos { arg } => neg(mul(vec![Sin { arg: arg.clone() }, arg.derivative()])),
            Exp { arg } => mul(vec![self.clone(), arg.derivative()]),
        }
    }

    /// `[u, u', ..., u^(k)]` as expressions.
    pub fn derivatives(&self, k: usize) -> Vec<InputExpr> {
        let mut out = vec![self.clone()];
        for _ in 0..k {
            let d = out.last().unwrap().derivative();
            out.push(d);
        }
        out
    }
}

impl fmt::Display for InputExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |f: &mut fmt::Formatter<'_>, v: &[InputExpr], sep: &str| -> fmt::Result {
            write!(f, "(")?;
            for (i, e) in v.iter().enumerate() {
                if i > 0 {
                    write!(f, " {sep} ")?;
                }
                write!(f, "{e}")?;
            }
            write!(f, ")")
        };
        match self {
            Const { value } if *value < 0.0 => write!(f, "({value:?})"),
            Const { value } => write!(f, "{value:?}"),
            Time => write!(f, "t"),
            Neg { expr } => write!(f, "(-{expr})"),
            Add { terms } => join(f, terms, "+"),
            Mul { factors } => join(f, factors, "*"),
            Div { num, den } => write!(f, "({num} / {den})"),
            Pow { base, exponent } => write!(f, "({base}^{exponent})"),
            Sin { arg } => write!(f, "sin({arg})"),
            Cos { arg } => write!(f, "cos({arg})"),
            Exp { arg } => write!(f, "exp({arg})"),
        }
    }
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip();
        self.s.get(self.pos).copied()
    }

    fn err(&self, msg: &str) -> Error {
        Error::Parse(format!("input expression at byte {}: {msg}", self.pos))
    }

    fn expect(&mut self, ch: u8) -> Result<()> {
        if self.peek() == Some(ch) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected '{}'", ch as char)))
        }
    }

    fn expr(&mut self) -> Result<InputExpr> {
        let mut terms = vec![self.term()?];
        while let Some(op @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let t = self.term()?;
            terms.push(if op == b'-' { neg(t) } else { t });
        }
        Ok(if terms.len() == 1 { terms.pop().unwrap() } else { Add { terms } })
    }

    fn term(&mut self) -> Result<InputExpr> {
        let mut acc = self.unary()?;
        while let Some(op @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            acc = if op == b'*' {
                match acc {
                    Mul { mut factors } => {
                        factors.push(rhs);
                        Mul { factors }
                    }
                    a => Mul { factors: vec![a, rhs] },
                }
            } else {
                Div { num: Box::new(acc), den: Box::new(rhs) }
            };
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<InputExpr> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(neg(self.unary()?))
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<InputExpr> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let sign = if self.peek() == Some(b'-') {
                self.pos += 1;
                -1
            } else {
                1
            };
            let start = self.pos;
            while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            let k: i32 = std::str::from_utf8(&self.s[start..self.pos])
                .unwrap()
                .parse()
                .map_err(|_| self.err("exponent must be an integer"))?;
            return Ok(Pow { base: Box::new(base), exponent: sign * k });
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<InputExpr> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(ch) if ch.is_ascii_digit() || ch == b'.' => {
                let start = self.pos;
                while self.pos < self.s.len() {
                    let ch = self.s[self.pos];
                    let exp_sign =
                        (ch == b'+' || ch == b'-') && self.pos > start && matches!(self.s[self.pos - 1], b'e' | b'E');
                    if ch.is_ascii_digit() || ch == b'.' || ch == b'e' || ch == b'E' || exp_sign {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                let text = std::str::from_utf8(&self.s[start..self.pos]).unwrap();
                text.parse().map(c).map_err(|_| self.err(&format!("bad number '{text}'")))
            }
            Some(ch) if ch.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.s.len() && self.s[self.pos].is_ascii_alphanumeric() {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.s[start..self.pos]).unwrap().to_string();
                if name == "t" {
                    return Ok(Time);
                }
                if name == "pi" {
                    return Ok(c(std::f64::consts::PI));
                }
                self.expect(b'(')?;
                let arg = Box::new(self.expr()?);
                self.expect(b')')?;
                match name.as_str() {
                    "sin" => Ok(Sin { arg }),
                    "cos" => Ok(Cos { arg }),
                    "exp" => Ok(Exp { arg }),
                    _ => Err(self.err(&format!("unknown function '{name}'"))),
                }
            }
            _ => Err(self.err("expected a number, 't', a function or '('")),
        }
    }
}

impl FromStr for InputExpr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut p = Parser { s: s.as_bytes(), pos: 0 };
        let e = p.expr()?;
        if p.peek().is_some() {
            return Err(p.err("trailing characters"));
        }
        Ok(e)
    }
}

/// A signal given either as text (`"-2 - sin(t)"`) or as an expression tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputSignal {
    Text(String),
    Tree(InputExpr),
}

impl InputSignal {
    pub fn expr(&self) -> Result<InputExpr> {
        match self {
            InputSignal::Text(s) => s.parse(),
            InputSignal::Tree(e) => Ok(e.clone()),
        }
    }
}

/// One expression per input channel.
#[derive(Clone, Debug, PartialEq)]
pub struct InputSpec {
    pub channels: Vec<InputExpr>,
}

impl InputSpec {
    pub fn new(channels: Vec<InputExpr>) -> Self {
        InputSpec { channels }
    }

    pub fn parse(signals: &[InputSignal]) -> Result<Self> {
        Ok(InputSpec { channels: signals.iter().map(|s| s.expr()).collect::<Result<_>>()? })
    }

    pub fn zero(m: usize) -> Self {
        InputSpec { channels: vec![c(0.0); m] }
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        self.channels.iter().map(|e| e.eval(t)).collect()
    }

    /// `result[k][j]` is the `k`-th derivative of channel `j` at `t`.
    pub fn derivatives_at(&self, t: f64, k: usize) -> Vec<Vec<f64>> {
        let per: Vec<Vec<InputExpr>> = self.channels.iter().map(|e| e.derivatives(k)).collect();
        (0..=k).map(|d| per.iter().map(|ds| ds[d].eval(t)).collect()).collect()
    }
}
