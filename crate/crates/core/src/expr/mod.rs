//! Coefficient expressions in the variables `x1..xd`, `u` and (for test
//! functions) `t`.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' '-'? integer)*
//! atom   := number | variable | func '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Functions: `sin cos exp log tanh atan sqrt abs` (one argument) and
//! `min max` (two arguments). Exponents are integer literals only.
//!
//! Partials come from forward-mode dual numbers. `abs`, `min` and `max`
//! report the right-hand derivative at their kinks and set a flag.

mod dual;
mod parse;

use std::fmt;

pub use dual::{Dual, Scalar};
pub use parse::{parse, ParseError};

/// Variable slot of an expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    /// Spatial coordinate, zero based (`x1` is `X(0)`).
    X(usize),
    U,
    T,
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::X(i) => write!(f, "x{}", i + 1),
            Var::U => f.write_str("u"),
            Var::T => f.write_str("t"),
        }
    }
}

/// Which variables an expression may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Signature {
    pub dim: usize,
    pub time: bool,
}

impl Signature {
    /// Coefficient signature: `x1..xd` and `u`.
    pub fn coefficient(dim: usize) -> Self {
        Self { dim, time: false }
    }

    /// Test-function signature: `x1..xd`, `u` and `t`.
    pub fn space_time(dim: usize) -> Self {
        Self { dim, time: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Tanh,
    Atan,
    Sqrt,
    Abs,
    Min,
    Max,
}

impl Func {
    pub const ALL: [Func; 10] = [
        Func::Sin,
        Func::Cos,
        Func::Exp,
        Func::Log,
        Func::Tanh,
        Func::Atan,
        Func::Sqrt,
        Func::Abs,
        Func::Min,
        Func::Max,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Tanh => "tanh",
            Func::Atan => "atan",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }

    pub fn lookup(name: &str) -> Option<Func> {
        Func::ALL.iter().copied().find(|f| f.name() == name)
    }
}

/// Expression tree. Immutable after parsing.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Vec<Expr>),
}

/// Evaluation point.
#[derive(Debug, Clone, Copy)]
pub struct Point<'a> {
    pub x: &'a [f64],
    pub u: f64,
    pub t: f64,
}

impl<'a> Point<'a> {
    pub fn new(x: &'a [f64], u: f64) -> Self {
        Self { x, u, t: 0.0 }
    }

    pub fn at_time(x: &'a [f64], u: f64, t: f64) -> Self {
        Self { x, u, t }
    }

    fn get(&self, v: Var) -> f64 {
        match v {
            Var::X(i) => self.x[i],
            Var::U => self.u,
            Var::T => self.t,
        }
    }
}

/// Value and one partial derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Partial {
    pub value: f64,
    pub partial: f64,
    /// Set when an `abs`, `min` or `max` was evaluated exactly at its kink.
    pub kink: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("cannot evaluate `{subexpr}`: {reason}")]
pub struct EvalDomainError {
    pub subexpr: String,
    pub reason: &'static str,
}

impl Expr {
    pub fn num(v: f64) -> Self {
        Expr::Num(v)
    }

    pub fn var(v: Var) -> Self {
        Expr::Var(v)
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Self {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn call(f: Func, args: Vec<Expr>) -> Self {
        Expr::Call(f, args)
    }

    /// Plain value.
    pub fn eval(&self, p: &Point<'_>) -> Result<f64, EvalDomainError> {
        let mut kink = false;
        self.eval_generic(&|v| p.get(v), &mut kink)
    }

    /// Value and exact partial with respect to `wrt`.
    pub fn eval_with_partial(&self, p: &Point<'_>, wrt: Var) -> Result<Partial, EvalDomainError> {
        let mut kink = false;
        let lookup = |v: Var| {
            let val = p.get(v);
            if v == wrt {
                Dual::var(val)
            } else {
                Dual::new(val, 0.0)
            }
        };
        let d = self.eval_generic(&lookup, &mut kink)?;
        Ok(Partial { value: d.val, partial: d.dot, kink })
    }

    fn eval_generic<S: Scalar>(
        &self,
        lookup: &dyn Fn(Var) -> S,
        kink: &mut bool,
    ) -> Result<S, EvalDomainError> {
        let out = match self {
            Expr::Num(v) => return Ok(S::constant(*v)),
            Expr::Var(v) => return Ok(lookup(*v)),
            Expr::Neg(e) => -e.eval_generic(lookup, kink)?,
            Expr::Binary(op, l, r) => {
                let a = l.eval_generic(lookup, kink)?;
                let b = r.eval_generic(lookup, kink)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b.value() == 0.0 {
                            return Err(self.domain_error("division by zero"));
                        }
                        a / b
                    }
                }
            }
            Expr::Pow(base, n) => {
                let a = base.eval_generic(lookup, kink)?;
                if *n < 0 && a.value() == 0.0 {
                    return Err(self.domain_error("negative power of zero"));
                }
                a.powi(*n)
            }
            Expr::Call(f, args) => {
                let a = args[0].eval_generic(lookup, kink)?;
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Tanh => a.tanh(),
                    Func::Atan => a.atan(),
                    Func::Log => {
                        if a.value() <= 0.0 {
                            return Err(self.domain_error("logarithm of a non-positive number"));
                        }
                        a.ln()
                    }
                    Func::Sqrt => {
                        if a.value() < 0.0 {
                            return Err(self.domain_error("square root of a negative number"));
                        }
                        if a.value() == 0.0 && a.tangent() != 0.0 {
                            return Err(self.domain_error("square root is not differentiable at 0"));
                        }
                        a.sqrt()
                    }
                    Func::Abs => {
                        let (r, k) = a.abs_rh();
                        *kink |= k;
                        r
                    }
                    Func::Min | Func::Max => {
                        let b = args[1].eval_generic(lookup, kink)?;
                        let (r, k) = if *f == Func::Min { a.min_rh(b) } else { a.max_rh(b) };
                        *kink |= k;
                        r
                    }
                }
            }
        };
        if !out.value().is_finite() || !out.tangent().is_finite() {
            return Err(self.domain_error("non-finite result"));
        }
        Ok(out)
    }

    fn domain_error(&self, reason: &'static str) -> EvalDomainError {
        EvalDomainError { subexpr: self.to_string(), reason }
    }

    /// True if any variable matching `pred` occurs in the tree.
    pub fn references(&self, pred: &dyn Fn(Var) -> bool) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(v) => pred(*v),
            Expr::Neg(e) | Expr::Pow(e, _) => e.references(pred),
            Expr::Binary(_, l, r) => l.references(pred) || r.references(pred),
            Expr::Call(_, args) => args.iter().any(|a| a.references(pred)),
        }
    }

    pub fn references_x(&self) -> bool {
        self.references(&|v| matches!(v, Var::X(_)))
    }

    pub fn references_u(&self) -> bool {
        self.references(&|v| v == Var::U)
    }

    /// Value when the expression references no variable at all.
    pub fn constant_value(&self) -> Option<f64> {
        if self.references(&|_| true) {
            return None;
        }
        self.eval(&Point::new(&[], 0.0)).ok()
    }

    /// Literal zero (used to skip structurally absent terms).
    pub fn is_zero(&self) -> bool {
        self.constant_value() == Some(0.0)
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(op, _, _) => op.precedence(),
            Expr::Neg(_) => 3,
            Expr::Pow(_, _) => 4,
            Expr::Num(_) | Expr::Var(_) | Expr::Call(_, _) => 5,
        }
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(e) => {
                f.write_str("-")?;
                write_child(f, e, e.precedence() < 3)
            }
            Expr::Binary(op, l, r) => {
                let p = op.precedence();
                write_child(f, l, l.precedence() < p)?;
                write!(f, "{}", op.symbol())?;
                write_child(f, r, r.precedence() <= p)
            }
            Expr::Pow(base, n) => {
                write_child(f, base, base.precedence() < 4)?;
                write!(f, "^{n}")
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}
