//! Arithmetic expressions for potentials and coefficient functions.
//!
//! Expressions are parsed from text, evaluated against a set of name
//! bindings, and differentiated symbolically. Identifiers are split into
//! *variables* (the coordinates a function is evaluated over) and
//! *parameters* (constants such as `m` or `omega`). The split only matters
//! for introspection; evaluation binds both by name.
//!
//! ```
//! use fundet::expr::Expr;
//!
//! let v: Expr = "0.5*m*omega^2*x^2".parse().unwrap();
//! let curvature = v.differentiate("x").differentiate("x");
//! let w = curvature.evaluate(&[("m", 2.0), ("omega", 3.0), ("x", 0.7)]).unwrap();
//! assert_eq!(w, 18.0);
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Identifiers treated as variables by [`parse`].
pub const DEFAULT_VARIABLES: [&str; 4] = ["x", "y", "z", "t"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: expected {expected}")]
    Syntax { offset: usize, expected: String },
    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("unbound name `{0}`")]
    Unbound(String),
    #[error("domain error: {op} of {argument}")]
    Domain { op: &'static str, argument: f64 },
    #[error("non-finite result from {op}")]
    NonFinite { op: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Sinh,
    Cosh,
    Tanh,
    Exp,
    Sqrt,
}

impl Func {
    pub const ALL: [Func; 7] = [
        Func::Sin,
        Func::Cos,
        Func::Sinh,
        Func::Cosh,
        Func::Tanh,
        Func::Exp,
        Func::Sqrt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sinh => "sinh",
            Func::Cosh => "cosh",
            Func::Tanh => "tanh",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }

    fn apply(self, x: f64) -> Result<f64, ExprError> {
        let out = match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Sinh => x.sinh(),
            Func::Cosh => x.cosh(),
            Func::Tanh => x.tanh(),
            Func::Exp => x.exp(),
            Func::Sqrt => {
                if x < 0.0 {
                    return Err(ExprError::Domain { op: "sqrt", argument: x });
                }
                x.sqrt()
            }
        };
        finite(out, self.name())
    }
}

/// Expression tree. `Pow` carries an integer exponent so that
/// differentiation never needs logarithms.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Param(String),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
}

/// Name lookup used during evaluation.
pub trait Bindings {
    fn lookup(&self, name: &str) -> Option<f64>;
}

impl Bindings for HashMap<String, f64> {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl Bindings for BTreeMap<String, f64> {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl Bindings for [(&str, f64)] {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

impl<const N: usize> Bindings for [(&str, f64); N] {
    fn lookup(&self, name: &str) -> Option<f64> {
        self[..].lookup(name)
    }
}

/// Bindings layered over another set: `name = value` first, then `rest`.
pub struct With<'a, B: ?Sized> {
    pub name: &'a str,
    pub value: f64,
    pub rest: &'a B,
}

impl<B: Bindings + ?Sized> Bindings for With<'_, B> {
    fn lookup(&self, name: &str) -> Option<f64> {
        if name == self.name {
            Some(self.value)
        } else {
            self.rest.lookup(name)
        }
    }
}

fn finite(v: f64, op: &'static str) -> Result<f64, ExprError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ExprError::NonFinite { op })
    }
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn param(name: impl Into<String>) -> Expr {
        Expr::Param(name.into())
    }

    pub fn evaluate<B: Bindings + ?Sized>(&self, bindings: &B) -> Result<f64, ExprError> {
        match self {
            Expr::Num(v) => Ok(*v),
            Expr::Var(name) | Expr::Param(name) => bindings
                .lookup(name)
                .ok_or_else(|| ExprError::Unbound(name.clone())),
            Expr::Neg(e) => Ok(-e.evaluate(bindings)?),
            Expr::Binary(op, l, r) => {
                let a = l.evaluate(bindings)?;
                let b = r.evaluate(bindings)?;
                match op {
                    BinOp::Add => finite(a + b, "+"),
                    BinOp::Sub => finite(a - b, "-"),
                    BinOp::Mul => finite(a * b, "*"),
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(ExprError::Domain { op: "/", argument: b });
                        }
                        finite(a / b, "/")
                    }
                }
            }
            Expr::Pow(base, n) => {
                let b = base.evaluate(bindings)?;
                if *n < 0 && b == 0.0 {
                    return Err(ExprError::Domain { op: "^", argument: b });
                }
                finite(b.powi(*n), "^")
            }
            Expr::Call(f, arg) => f.apply(arg.evaluate(bindings)?),
        }
    }

    /// Symbolic derivative with respect to `var`. The result is not
    /// simplified beyond folding multiplications by 0 and 1.
    pub fn differentiate(&self, var: &str) -> Expr {
        match self {
            Expr::Num(_) => Expr::Num(0.0),
            Expr::Var(name) | Expr::Param(name) => {
                Expr::Num(if name == var { 1.0 } else { 0.0 })
            }
            Expr::Neg(e) => neg(e.differentiate(var)),
            Expr::Binary(op, l, r) => {
                let dl = l.differentiate(var);
                let dr = r.differentiate(var);
                match op {
                    BinOp::Add => add(dl, dr),
                    BinOp::Sub => sub(dl, dr),
                    BinOp::Mul => add(mul(dl, (**r).clone()), mul((**l).clone(), dr)),
                    BinOp::Div => {
                        let num = sub(mul(dl, (**r).clone()), mul((**l).clone(), dr));
                        div(num, Expr::Pow(r.clone(), 2))
                    }
                }
            }
            Expr::Pow(base, n) => {
                let db = base.differentiate(var);
                match n {
                    0 => Expr::Num(0.0),
                    1 => db,
                    _ => mul(
                        mul(Expr::Num(f64::from(*n)), Expr::Pow(base.clone(), n - 1)),
                        db,
                    ),
                }
            }
            Expr::Call(f, arg) => {
                let da = arg.differentiate(var);
                let u = (**arg).clone();
                let outer = match f {
                    Func::Sin => call(Func::Cos, u),
                    Func::Cos => neg(call(Func::Sin, u)),
                    Func::Sinh => call(Func::Cosh, u),
                    Func::Cosh => call(Func::Sinh, u),
                    Func::Tanh => sub(Expr::Num(1.0), Expr::Pow(Box::new(call(Func::Tanh, u)), 2)),
                    Func::Exp => call(Func::Exp, u),
                    Func::Sqrt => div(Expr::Num(1.0), mul(Expr::Num(2.0), call(Func::Sqrt, u))),
                };
                mul(outer, da)
            }
        }
    }

    /// Replace every variable or parameter called `name` by a literal.
    pub fn substitute(&self, name: &str, value: f64) -> Expr {
        self.map_leaves(&|e| match e {
            Expr::Var(n) | Expr::Param(n) if n == name => Some(Expr::Num(value)),
            _ => None,
        })
    }

    fn map_leaves(&self, f: &dyn Fn(&Expr) -> Option<Expr>) -> Expr {
        if let Some(e) = f(self) {
            return e;
        }
        match self {
            Expr::Num(_) | Expr::Var(_) | Expr::Param(_) => self.clone(),
            Expr::Neg(e) => Expr::Neg(Box::new(e.map_leaves(f))),
            Expr::Binary(op, l, r) => {
                Expr::Binary(*op, Box::new(l.map_leaves(f)), Box::new(r.map_leaves(f)))
            }
            Expr::Pow(b, n) => Expr::Pow(Box::new(b.map_leaves(f)), *n),
            Expr::Call(func, a) => Expr::Call(*func, Box::new(a.map_leaves(f))),
        }
    }

    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Var(n) = e {
                out.insert(n.clone());
            }
        });
        out
    }

    pub fn parameters(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Param(n) = e {
                out.insert(n.clone());
            }
        });
        out
    }

    /// True when the tree contains no variables or parameters.
    pub fn is_constant(&self) -> bool {
        let mut constant = true;
        self.visit(&mut |e| {
            if matches!(e, Expr::Var(_) | Expr::Param(_)) {
                constant = false;
            }
        });
        constant
    }

    fn visit(&self, f: &mut dyn FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Num(_) | Expr::Var(_) | Expr::Param(_) => {}
            Expr::Neg(e) | Expr::Pow(e, _) | Expr::Call(_, e) => e.visit(f),
            Expr::Binary(_, l, r) => {
                l.visit(f);
                r.visit(f);
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Num(v) if v.is_sign_negative() => 3,
            Expr::Num(_) | Expr::Var(_) | Expr::Param(_) | Expr::Call(..) => 5,
            Expr::Neg(_) => 3,
            Expr::Binary(op, ..) => op.precedence(),
            Expr::Pow(..) => 4,
        }
    }
}

fn neg(e: Expr) -> Expr {
    match e {
        Expr::Num(0.0) => Expr::Num(0.0),
        e => Expr::Neg(Box::new(e)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), _) if *x == 0.0 => b,
        (_, Expr::Num(y)) if *y == 0.0 => a,
        _ => Expr::Binary(BinOp::Add, Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (_, Expr::Num(y)) if *y == 0.0 => a,
        (Expr::Num(x), _) if *x == 0.0 => neg(b),
        _ => Expr::Binary(BinOp::Sub, Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), _) | (_, Expr::Num(x)) if *x == 0.0 => Expr::Num(0.0),
        (Expr::Num(x), _) if *x == 1.0 => b,
        (_, Expr::Num(y)) if *y == 1.0 => a,
        _ => Expr::Binary(BinOp::Mul, Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match &a {
        Expr::Num(x) if *x == 0.0 => Expr::Num(0.0),
        _ => Expr::Binary(BinOp::Div, Box::new(a), Box::new(b)),
    }
}

fn call(f: Func, a: Expr) -> Expr {
    Expr::Call(f, Box::new(a))
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(n) | Expr::Param(n) => f.write_str(n),
            Expr::Neg(e) => {
                // A bare literal after `-` would be read back as a negative literal.
                if e.precedence() < 3 || matches!(**e, Expr::Num(_)) {
                    write!(f, "-({e})")
                } else {
                    write!(f, "-{e}")
                }
            }
            Expr::Binary(op, l, r) => {
                let p = op.precedence();
                if l.precedence() < p {
                    write!(f, "({l})")?;
                } else {
                    write!(f, "{l}")?;
                }
                write!(f, " {} ", op.symbol())?;
                if r.precedence() <= p {
                    write!(f, "({r})")
                } else {
                    write!(f, "{r}")
                }
            }
            Expr::Pow(b, n) => {
                if b.precedence() <= 4 {
                    write!(f, "({b})^{n}")
                } else {
                    write!(f, "{b}^{n}")
                }
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

impl FromStr for Expr {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

/// Parse with the default variable set (`x`, `y`, `z`, `t`).
pub fn parse(text: &str) -> Result<Expr, ExprError> {
    Parser::default().parse(text)
}

/// Configurable parser. Identifiers listed as variables become
/// [`Expr::Var`]; all others become [`Expr::Param`]. `pi` is a literal.
#[derive(Debug, Clone)]
pub struct Parser {
    variables: BTreeSet<String>,
}

impl Default for Parser {
    fn default() -> Self {
        Parser::with_variables(DEFAULT_VARIABLES)
    }
}

impl Parser {
    pub fn with_variables<I, S>(vars: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Parser {
            variables: vars.into_iter().map(Into::into).collect(),
        }
    }

    pub fn parse(&self, text: &str) -> Result<Expr, ExprError> {
        let tokens = tokenize(text)?;
        let mut state = ParseState {
            tokens: &tokens,
            pos: 0,
            variables: &self.variables,
        };
        let e = state.expr()?;
        let tok = state.peek();
        if tok.kind != Tok::End {
            return Err(syntax(tok.offset, "operator or end of input"));
        }
        Ok(e)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

#[derive(Debug, Clone)]
struct Token {
    kind: Tok,
    offset: usize,
}

fn syntax(offset: usize, expected: &str) -> ExprError {
    ExprError::Syntax {
        offset,
        expected: expected.to_string(),
    }
}

fn tokenize(text: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let kind = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let v: f64 = text[start..i]
                    .parse()
                    .map_err(|_| syntax(start, "numeric literal"))?;
                out.push(Token {
                    kind: Tok::Num(v),
                    offset: start,
                });
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push(Token {
                    kind: Tok::Ident(text[start..i].to_string()),
                    offset: start,
                });
                continue;
            }
            _ => return Err(syntax(start, "expression")),
        };
        i += 1;
        out.push(Token { kind, offset: start });
    }
    out.push(Token {
        kind: Tok::End,
        offset: text.len(),
    });
    Ok(out)
}

struct ParseState<'a> {
    tokens: &'a [Token],
    pos: usize,
    variables: &'a BTreeSet<String>,
}

impl ParseState<'_> {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn peek_at(&self, ahead: usize) -> &Tok {
        let i = (self.pos + ahead).min(self.tokens.len() - 1);
        &self.tokens[i].kind
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if t.kind != Tok::End {
            self.pos += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().kind {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().kind {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.peek().kind != Tok::Minus {
            return self.power();
        }
        self.bump();
        // `-2` is a negative literal, but `-2^2` is `-(2^2)`.
        if let Tok::Num(v) = *self.peek_at(0) {
            if *self.peek_at(1) != Tok::Caret {
                self.bump();
                return Ok(Expr::Num(-v));
            }
        }
        Ok(Expr::Neg(Box::new(self.unary()?)))
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if self.peek().kind != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        let offset = self.peek().offset;
        let exponent = self.unary()?;
        let n = constant_integer(&exponent)
            .ok_or_else(|| syntax(offset, "integer constant exponent"))?;
        Ok(Expr::Pow(Box::new(base), n))
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        let tok = self.bump();
        match tok.kind {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::Ident(name) => {
                if self.peek().kind == Tok::LParen {
                    let func = Func::from_name(&name).ok_or(ExprError::UnknownFunction {
                        name,
                        offset: tok.offset,
                    })?;
                    self.bump();
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    Ok(Expr::Call(func, Box::new(arg)))
                } else if name == "pi" {
                    Ok(Expr::Num(std::f64::consts::PI))
                } else if self.variables.contains(&name) {
                    Ok(Expr::Var(name))
                } else {
                    Ok(Expr::Param(name))
                }
            }
            Tok::LParen => {
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            _ => Err(syntax(tok.offset, "expression")),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        let tok = self.peek();
        if tok.kind == Tok::RParen {
            self.bump();
            Ok(())
        } else {
            Err(syntax(tok.offset, "`)`"))
        }
    }
}

fn constant_integer(e: &Expr) -> Option<i32> {
    if !e.is_constant() {
        return None;
    }
    let v = e.evaluate(&[] as &[(&str, f64)]).ok()?;
    if v.fract() == 0.0 && v.abs() <= f64::from(i32::MAX) {
        Some(v as i32)
    } else {
        None
    }
}
