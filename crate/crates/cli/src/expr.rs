//! Small expression language for custom coefficients and scales.
//!
//! Grammar (whitespace ignored):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?            right associative
//! atom    := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'
//! number  := digits ['.' digits] [('e' | 'E') ['+' | '-'] digits]
//! ```
//!
//! Names are the variables allowed by the caller (`t`, `x`, `r`, `eps`), the
//! constants `pi` and `e`, and the functions `exp`, `ln`, `sqrt`, `abs`,
//! `sin`, `cos`, `tanh` (one argument) and `min`, `max` (two arguments).
//!
//! Evaluation runs on dual numbers in `r`, so every expression also yields
//! its exact derivative with respect to `r`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{message} at offset {offset}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    T,
    X,
    R,
    Eps,
}

impl Var {
    fn name(self) -> &'static str {
        match self {
            Var::T => "t",
            Var::X => "x",
            Var::R => "r",
            Var::Eps => "eps",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Exp,
    Ln,
    Sqrt,
    Abs,
    Sin,
    Cos,
    Tanh,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tanh" => Func::Tanh,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// Value and `d/dr`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub value: f64,
    pub deriv: f64,
}

impl Dual {
    fn constant(value: f64) -> Self {
        Self { value, deriv: 0.0 }
    }

    // chain rule for a scalar map with derivative `dv` at `self.value`
    fn map(self, v: f64, dv: f64) -> Self {
        Self {
            value: v,
            deriv: if self.deriv == 0.0 { 0.0 } else { dv * self.deriv },
        }
    }
}

/// Variable values for one evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Point {
    pub t: f64,
    pub x: f64,
    pub r: f64,
    pub eps: f64,
}

#[derive(Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", self.source)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl Expr {
    /// Parses `source`, accepting only the variables in `allowed`.
    pub fn parse(source: &str, allowed: &[Var]) -> Result<Self, ParseError> {
        let mut p = Parser {
            src: source.as_bytes(),
            pos: 0,
            allowed,
        };
        let root = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(Self {
            source: source.to_string(),
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, at: Point) -> f64 {
        self.eval_dual(at).value
    }

    /// Value and exact derivative in `r`.
    pub fn eval_dual(&self, at: Point) -> Dual {
        eval(&self.root, &at)
    }
}

fn eval(node: &Node, at: &Point) -> Dual {
    match node {
        Node::Num(v) => Dual::constant(*v),
        Node::Var(Var::R) => Dual { value: at.r, deriv: 1.0 },
        Node::Var(Var::T) => Dual::constant(at.t),
        Node::Var(Var::X) => Dual::constant(at.x),
        Node::Var(Var::Eps) => Dual::constant(at.eps),
        Node::Neg(a) => {
            let a = eval(a, at);
            Dual { value: -a.value, deriv: -a.deriv }
        }
        Node::Add(a, b) => {
            let (a, b) = (eval(a, at), eval(b, at));
            Dual { value: a.value + b.value, deriv: a.deriv + b.deriv }
        }
        Node::Sub(a, b) => {
            let (a, b) = (eval(a, at), eval(b, at));
            Dual { value: a.value - b.value, deriv: a.deriv - b.deriv }
        }
        Node::Mul(a, b) => {
            let (a, b) = (eval(a, at), eval(b, at));
            Dual {
                value: a.value * b.value,
                deriv: a.deriv * b.value + a.value * b.deriv,
            }
        }
        Node::Div(a, b) => {
            let (a, b) = (eval(a, at), eval(b, at));
            Dual {
                value: a.value / b.value,
                deriv: (a.deriv * b.value - a.value * b.deriv) / (b.value * b.value),
            }
        }
        Node::Pow(a, b) => {
            let (a, b) = (eval(a, at), eval(b, at));
            pow(a, b)
        }
        Node::Call(f, args) => {
            let a = eval(&args[0], at);
            match f {
                Func::Exp => {
                    let v = a.value.exp();
                    a.map(v, v)
                }
                Func::Ln => a.map(a.value.ln(), 1.0 / a.value),
                Func::Sqrt => {
                    let v = a.value.sqrt();
                    a.map(v, 0.5 / v)
                }
                Func::Abs => a.map(a.value.abs(), a.value.signum()),
                Func::Sin => a.map(a.value.sin(), a.value.cos()),
                Func::Cos => a.map(a.value.cos(), -a.value.sin()),
                Func::Tanh => {
                    let v = a.value.tanh();
                    a.map(v, 1.0 - v * v)
                }
                Func::Min | Func::Max => {
                    let b = eval(&args[1], at);
                    let pick_a = if *f == Func::Min {
                        a.value <= b.value
                    } else {
                        a.value >= b.value
                    };
                    if pick_a {
                        a
                    } else {
                        b
                    }
                }
            }
        }
    }
}

fn pow(a: Dual, b: Dual) -> Dual {
    if b.deriv == 0.0 {
        let n = b.value;
        let deriv = if a.deriv == 0.0 || n == 0.0 {
            0.0
        } else {
            n * pow_scalar(a.value, n - 1.0) * a.deriv
        };
        return Dual { value: pow_scalar(a.value, n), deriv };
    }
    let value = a.value.powf(b.value);
    let mut deriv = value * a.value.ln() * b.deriv;
    if a.deriv != 0.0 {
        deriv += b.value * a.value.powf(b.value - 1.0) * a.deriv;
    }
    Dual { value, deriv }
}

// integer exponents use repeated multiplication so negative bases work
fn pow_scalar(a: f64, n: f64) -> f64 {
    if n.fract() == 0.0 && n.abs() <= i32::MAX as f64 {
        a.powi(n as i32)
    } else {
        a.powf(n)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    allowed: &'a [Var],
}

impl Parser<'_> {
    fn err(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            return Ok(Node::Pow(Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        match self.peek() {
            None => Err(self.err("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.name(),
            Some(c) => Err(self.err(format!("unexpected character '{}'", c as char))),
        }
    }

    fn number(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            p.pos > s
        };
        let mut any = digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            any |= digits(self);
        }
        if !any {
            self.pos = start;
            return Err(self.err("malformed number"));
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if !digits(self) {
                self.pos = mark;
                return Err(self.err("malformed exponent"));
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        text.parse()
            .map(Node::Num)
            .map_err(|_| ParseError { offset: start, message: "malformed number".into() })
    }

    fn name(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        if let Some(f) = Func::lookup(name) {
            if !self.eat(b'(') {
                return Err(self.err(format!("expected '(' after {name}")));
            }
            let mut args = vec![self.expr()?];
            while self.eat(b',') {
                args.push(self.expr()?);
            }
            if !self.eat(b')') {
                return Err(self.err("expected ')'"));
            }
            if args.len() != f.arity() {
                return Err(ParseError {
                    offset: start,
                    message: format!("{name} takes {} argument(s), got {}", f.arity(), args.len()),
                });
            }
            return Ok(Node::Call(f, args));
        }
        match name {
            "pi" => return Ok(Node::Num(std::f64::consts::PI)),
            "e" => return Ok(Node::Num(std::f64::consts::E)),
            _ => {}
        }
        for v in [Var::T, Var::X, Var::R, Var::Eps] {
            if v.name() == name {
                if self.allowed.contains(&v) {
                    return Ok(Node::Var(v));
                }
                return Err(ParseError {
                    offset: start,
                    message: format!("variable '{name}' is not allowed here"),
                });
            }
        }
        Err(ParseError {
            offset: start,
            message: format!("unknown name '{name}'"),
        })
    }
}
