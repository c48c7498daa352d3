//! Arithmetic expressions over `x1..xd` with exact symbolic differentiation.
//!
//! Grammar (whitespace is ignored between tokens):
//!
//! ```text
//! expr    := term (("+" | "-") term)*
//! term    := unary (("*" | "/") unary)*
//! unary   := ("+" | "-") unary | power
//! power   := atom ("^" unary)?            (right associative, binds tighter than unary minus)
//! atom    := number | constant | variable | func "(" expr ")" | "(" expr ")"
//! number  := digits ["." digits] [("e" | "E") ["+" | "-"] digits]
//! constant:= "pi" | "e"
//! variable:= "x" index                    (1-based, index <= d)
//! func    := "sin" | "cos" | "exp" | "log" | "sqrt" | "abs" | "sign"
//! ```
//!
//! For one-dimensional expressions `x` and `t` are accepted as aliases of `x1`.

use std::fmt;

use thiserror::Error;

use crate::scalar::{lit, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("variable `{name}` at offset {offset} exceeds dimension {dim}")]
    VariableOutOfRange {
        name: String,
        offset: usize,
        dim: usize,
    },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::VariableOutOfRange { offset, .. }
            | ParseError::UnknownIdentifier { offset, .. } => *offset,
        }
    }
}

/// Raised when an expression is evaluated outside its natural domain.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("domain error: {0}")]
pub struct DomainError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Sign,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "sign" => Func::Sign,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Sign => "sign",
        }
    }
}

/// Expression tree. Variables are 0-based internally.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

// Constructors with constant folding; the derivative rules below lean on these
// to keep trees from growing with `0*x` and `1*x` terms.
fn c(v: f64) -> Expr {
    Expr::Const(v)
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(v) => c(-v),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => c(x + y),
        (Expr::Const(z), e) | (e, Expr::Const(z)) if z == 0.0 => e,
        (a, b) => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => c(x - y),
        (e, Expr::Const(z)) if z == 0.0 => e,
        (Expr::Const(z), e) if z == 0.0 => neg(e),
        (a, b) => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => c(x * y),
        (Expr::Const(z), _) | (_, Expr::Const(z)) if z == 0.0 => c(0.0),
        (Expr::Const(o), e) | (e, Expr::Const(o)) if o == 1.0 => e,
        (a, b) => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(z), _) if z == 0.0 => c(0.0),
        (e, Expr::Const(o)) if o == 1.0 => e,
        (Expr::Const(x), Expr::Const(y)) if y != 0.0 => c(x / y),
        (a, b) => Expr::Div(Box::new(a), Box::new(b)),
    }
}

fn pow(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (_, Expr::Const(z)) if z == 0.0 => c(1.0),
        (e, Expr::Const(o)) if o == 1.0 => e,
        (a, b) => Expr::Pow(Box::new(a), Box::new(b)),
    }
}

fn call(f: Func, a: Expr) -> Expr {
    Expr::Call(f, Box::new(a))
}

impl Expr {
    /// Parses `src` as an expression over `x1..x{dim}`.
    pub fn parse(src: &str, dim: usize) -> Result<Expr, ParseError> {
        let mut p = Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            dim,
        };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos < p.bytes.len() {
            return Err(p.syntax("unexpected trailing input"));
        }
        Ok(e)
    }

    /// Highest variable index used plus one (0 for constant expressions).
    pub fn arity(&self) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Var(i) => i + 1,
            Expr::Neg(a) | Expr::Call(_, a) => a.arity(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.arity().max(b.arity()),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.arity() == 0
    }

    /// `Some(v)` if the tree is a literal constant.
    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(v) => Some(*v),
            _ => None,
        }
    }

    /// Partial derivative with respect to variable `var` (0-based).
    pub fn derivative(&self, var: usize) -> Expr {
        match self {
            Expr::Const(_) => c(0.0),
            Expr::Var(i) => c(if *i == var { 1.0 } else { 0.0 }),
            Expr::Neg(a) => neg(a.derivative(var)),
            Expr::Add(a, b) => add(a.derivative(var), b.derivative(var)),
            Expr::Sub(a, b) => sub(a.derivative(var), b.derivative(var)),
            Expr::Mul(a, b) => add(
                mul(a.derivative(var), (**b).clone()),
                mul((**a).clone(), b.derivative(var)),
            ),
            Expr::Div(a, b) => {
                let da = a.derivative(var);
                let db = b.derivative(var);
                if db.as_const() == Some(0.0) {
                    div(da, (**b).clone())
                } else {
                    div(
                        sub(mul(da, (**b).clone()), mul((**a).clone(), db)),
                        pow((**b).clone(), c(2.0)),
                    )
                }
            }
            Expr::Pow(a, b) => {
                let da = a.derivative(var);
                if let Some(k) = b.as_const() {
                    mul(mul(c(k), pow((**a).clone(), c(k - 1.0))), da)
                } else {
                    let db = b.derivative(var);
                    // d(a^b) = a^b * (b' ln a + b a'/a)
                    mul(
                        self.clone(),
                        add(
                            mul(db, call(Func::Log, (**a).clone())),
                            div(mul((**b).clone(), da), (**a).clone()),
                        ),
                    )
                }
            }
            Expr::Call(f, a) => {
                let da = a.derivative(var);
                if da.as_const() == Some(0.0) {
                    return c(0.0);
                }
                let inner = (**a).clone();
                let outer = match f {
                    Func::Sin => call(Func::Cos, inner),
                    Func::Cos => neg(call(Func::Sin, inner)),
                    Func::Exp => call(Func::Exp, inner),
                    Func::Log => div(c(1.0), inner),
                    Func::Sqrt => div(c(0.5), call(Func::Sqrt, inner)),
                    Func::Abs => call(Func::Sign, inner),
                    // derivative of sign is zero away from the jump
                    Func::Sign => c(0.0),
                };
                mul(outer, da)
            }
        }
    }

    /// Renames every variable index through `f`.
    pub fn map_vars(&self, f: &dyn Fn(usize) -> usize) -> Expr {
        let b = |e: &Expr| Box::new(e.map_vars(f));
        match self {
            Expr::Const(v) => Expr::Const(*v),
            Expr::Var(i) => Expr::Var(f(*i)),
            Expr::Neg(a) => Expr::Neg(b(a)),
            Expr::Add(l, r) => Expr::Add(b(l), b(r)),
            Expr::Sub(l, r) => Expr::Sub(b(l), b(r)),
            Expr::Mul(l, r) => Expr::Mul(b(l), b(r)),
            Expr::Div(l, r) => Expr::Div(b(l), b(r)),
            Expr::Pow(l, r) => Expr::Pow(b(l), b(r)),
            Expr::Call(g, a) => Expr::Call(*g, b(a)),
        }
    }

    /// Whether variable `var` (0-based) occurs in the tree.
    pub fn uses_var(&self, var: usize) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(i) => *i == var,
            Expr::Neg(a) | Expr::Call(_, a) => a.uses_var(var),
            Expr::Add(l, r)
            | Expr::Sub(l, r)
            | Expr::Mul(l, r)
            | Expr::Div(l, r)
            | Expr::Pow(l, r) => l.uses_var(var) || r.uses_var(var),
        }
    }

    /// Laplacian over the first `dim` variables.
    pub fn laplacian(&self, dim: usize) -> Expr {
        (0..dim).fold(c(0.0), |acc, i| add(acc, self.derivative(i).derivative(i)))
    }

    /// Evaluates the expression at `x`.
    pub fn eval<T: Real>(&self, x: &[T]) -> Result<T, DomainError> {
        let v = match self {
            Expr::Const(v) => lit(*v),
            Expr::Var(i) => *x
                .get(*i)
                .ok_or_else(|| DomainError(format!("variable x{} not supplied", i + 1)))?,
            Expr::Neg(a) => -a.eval(x)?,
            Expr::Add(a, b) => a.eval(x)? + b.eval(x)?,
            Expr::Sub(a, b) => a.eval(x)? - b.eval(x)?,
            Expr::Mul(a, b) => a.eval(x)? * b.eval(x)?,
            Expr::Div(a, b) => {
                let d = b.eval(x)?;
                if d == T::zero() {
                    return Err(DomainError("division by zero".into()));
                }
                a.eval(x)? / d
            }
            Expr::Pow(a, b) => {
                let base = a.eval(x)?;
                match b.as_const() {
                    Some(k) if k.fract() == 0.0 && k.abs() <= 64.0 => {
                        if k < 0.0 && base == T::zero() {
                            return Err(DomainError("zero raised to a negative power".into()));
                        }
                        base.powi(k as i32)
                    }
                    _ => {
                        let e = b.eval(x)?;
                        if base < T::zero() {
                            return Err(DomainError(
                                "negative base with non-integer exponent".into(),
                            ));
                        }
                        base.powf(e)
                    }
                }
            }
            Expr::Call(f, a) => {
                let v = a.eval(x)?;
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                    Func::Log => {
                        if v <= T::zero() {
                            return Err(DomainError(format!("log of non-positive value {v}")));
                        }
                        v.ln()
                    }
                    Func::Sqrt => {
                        if v < T::zero() {
                            return Err(DomainError(format!("sqrt of negative value {v}")));
                        }
                        v.sqrt()
                    }
                    Func::Abs => v.abs(),
                    Func::Sign => {
                        if v > T::zero() {
                            T::one()
                        } else if v < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        }
                    }
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(DomainError("non-finite result".into()))
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(v) => write!(f, "{v}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "({a} ^ {b})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    dim: usize,
}

impl Parser<'_> {
    fn syntax(&self, message: &str) -> ParseError {
        ParseError::Syntax {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(op @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == b'+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(op @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == b'*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            None => Err(self.syntax("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.syntax("expected `)`"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(ch) if ch.is_ascii_digit() || ch == b'.' => self.number(),
            Some(ch) if ch.is_ascii_alphabetic() => self.identifier(),
            Some(_) => Err(self.syntax("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let b = self.bytes;
        let mut i = self.pos;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i < b.len() && b[i] == b'.' {
            i += 1;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
        }
        if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
            let mut j = i + 1;
            if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
                j += 1;
            }
            if j < b.len() && b[j].is_ascii_digit() {
                while j < b.len() && b[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = &self.src[start..i];
        let value: f64 = text.parse().map_err(|_| ParseError::Syntax {
            offset: start,
            message: format!("malformed number `{text}`"),
        })?;
        self.pos = i;
        Ok(Expr::Const(value))
    }

    fn identifier(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let b = self.bytes;
        let mut i = self.pos;
        while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
            i += 1;
        }
        let name = &self.src[start..i];
        self.pos = i;

        if let Some(func) = Func::from_name(name) {
            if self.peek() != Some(b'(') {
                return Err(self.syntax(&format!("expected `(` after `{name}`")));
            }
            self.pos += 1;
            let arg = self.expr()?;
            if self.peek() != Some(b')') {
                return Err(self.syntax("expected `)`"));
            }
            self.pos += 1;
            return Ok(Expr::Call(func, Box::new(arg)));
        }
        match name {
            "pi" => return Ok(Expr::Const(std::f64::consts::PI)),
            "e" => return Ok(Expr::Const(std::f64::consts::E)),
            "x" | "t" if self.dim == 1 => return Ok(Expr::Var(0)),
            _ => {}
        }
        if let Some(idx) = name.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
            if idx == 0 || idx > self.dim {
                return Err(ParseError::VariableOutOfRange {
                    name: name.to_string(),
                    offset: start,
                    dim: self.dim,
                });
            }
            return Ok(Expr::Var(idx - 1));
        }
        Err(ParseError::UnknownIdentifier {
            name: name.to_string(),
            offset: start,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, dim: usize, x: &[f64]) -> f64 {
        Expr::parse(src, dim).unwrap().eval(x).unwrap()
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2*3", 1, &[0.0]), 7.0);
        assert_eq!(ev("2^3^2", 1, &[0.0]), 512.0);
        assert_eq!(ev("-x1^2", 1, &[3.0]), -9.0);
        assert_eq!(ev("(1+2)*3", 1, &[0.0]), 9.0);
        assert_eq!(ev("10/4/5", 1, &[0.0]), 0.5);
        assert_eq!(ev("2.5e-1 * x2", 2, &[0.0, 4.0]), 1.0);
    }

    #[test]
    fn trailing_operator_reports_end_offset() {
        let err = Expr::parse("x1 +", 2).unwrap_err();
        assert!(matches!(err, ParseError::Syntax { offset: 4, .. }), "{err}");
    }

    #[test]
    fn variable_beyond_dimension() {
        let err = Expr::parse("x1 + x3", 2).unwrap_err();
        assert!(matches!(
            err,
            ParseError::VariableOutOfRange {
                offset: 5,
                dim: 2,
                ..
            }
        ));
        assert!(matches!(
            Expr::parse("foo(x1)", 2),
            Err(ParseError::UnknownIdentifier { .. })
        ));
        assert!(Expr::parse("x0", 2).is_err());
    }

    #[test]
    fn one_dimensional_aliases() {
        assert_eq!(ev("t + x^2", 1, &[2.0]), 6.0);
        assert!(Expr::parse("t", 2).is_err());
    }

    #[test]
    fn derivative_of_sin_field() {
        let e = Expr::parse("x1 + 0.5*sin(x2)", 2).unwrap();
        let g: Vec<f64> = (0..2)
            .map(|i| e.derivative(i).eval(&[0.0, 0.0]).unwrap())
            .collect();
        assert_eq!(g, vec![1.0, 0.5]);
        assert_eq!(e.laplacian(2).eval(&[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn laplacian_of_quadratic_is_constant() {
        let lap = Expr::parse("x1^2 + x2^2", 2).unwrap().laplacian(2);
        assert_eq!(lap.as_const(), Some(4.0));
    }

    #[test]
    fn domain_errors_are_raised_at_eval_time() {
        let e = Expr::parse("log(x1) + 1/x2", 2).unwrap();
        assert!(e.eval(&[1.0, 1.0]).is_ok());
        assert!(e.eval(&[-1.0, 1.0]).is_err());
        assert!(e.eval(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn general_power_rule() {
        // d/dx x^x = x^x (ln x + 1)
        let e = Expr::parse("x1^x1", 1).unwrap();
        let d = e.derivative(0).eval(&[2.0]).unwrap();
        assert!((d - 4.0 * (2f64.ln() + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn abs_derivative_is_sign() {
        let e = Expr::parse("abs(sin(x1))", 1).unwrap();
        let d = e.derivative(0);
        assert!((d.eval(&[-0.5]).unwrap() + 0.5f64.cos()).abs() < 1e-15);
        let lap = e.laplacian(1);
        assert!((lap.eval(&[-0.5]).unwrap() - (-0.5f64).sin()).abs() < 1e-15);
    }
}
