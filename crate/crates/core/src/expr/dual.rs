//! Forward-mode automatic differentiation via dual numbers.
//!
//! A dual number `Dual { val, dot }` carries a value and its derivative with
//! respect to a single seeded variable. Evaluating an expression once with a
//! seeded variable yields one exact partial derivative.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar type the expression evaluator is generic over.
///
/// The non-smooth operations (`abs`, `min`, `max`) return the right-hand
/// derivative at their kinks and report the kink through the return flag.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
    fn value(self) -> f64;
    /// Tangent part; zero for plain `f64`.
    fn tangent(self) -> f64;

    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn atan(self) -> Self;
    fn sqrt(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn abs_rh(self) -> (Self, bool);
    fn min_rh(self, other: Self) -> (Self, bool);
    fn max_rh(self, other: Self) -> (Self, bool);
}

impl Scalar for f64 {
    #[inline]
    fn constant(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn tangent(self) -> f64 {
        0.0
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn atan(self) -> Self {
        f64::atan(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    #[inline]
    fn abs_rh(self) -> (Self, bool) {
        (self.abs(), self == 0.0)
    }
    #[inline]
    fn min_rh(self, other: Self) -> (Self, bool) {
        (self.min(other), self == other)
    }
    #[inline]
    fn max_rh(self, other: Self) -> (Self, bool) {
        (self.max(other), self == other)
    }
}

/// A dual number for forward-mode AD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub val: f64,
    pub dot: f64,
}

impl Dual {
    #[inline]
    pub fn new(val: f64, dot: f64) -> Self {
        Self { val, dot }
    }

    /// Independent variable (derivative 1).
    #[inline]
    pub fn var(val: f64) -> Self {
        Self { val, dot: 1.0 }
    }
}

impl Add for Dual {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Self::new(self.val + rhs.val, self.dot + rhs.dot)
    }
}

impl Sub for Dual {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.val - rhs.val, self.dot - rhs.dot)
    }
}

impl Mul for Dual {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        Self::new(self.val * rhs.val, self.dot * rhs.val + self.val * rhs.dot)
    }
}

impl Div for Dual {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let q = self.val / rhs.val;
        Self::new(q, (self.dot - q * rhs.dot) / rhs.val)
    }
}

impl Neg for Dual {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.val, -self.dot)
    }
}

impl Scalar for Dual {
    #[inline]
    fn constant(v: f64) -> Self {
        Self::new(v, 0.0)
    }
    #[inline]
    fn value(self) -> f64 {
        self.val
    }
    #[inline]
    fn tangent(self) -> f64 {
        self.dot
    }
    #[inline]
    fn sin(self) -> Self {
        Self::new(self.val.sin(), self.dot * self.val.cos())
    }
    #[inline]
    fn cos(self) -> Self {
        Self::new(self.val.cos(), -self.dot * self.val.sin())
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.val.exp();
        Self::new(e, self.dot * e)
    }
    #[inline]
    fn ln(self) -> Self {
        Self::new(self.val.ln(), self.dot / self.val)
    }
    #[inline]
    fn tanh(self) -> Self {
        let t = self.val.tanh();
        Self::new(t, self.dot * (1.0 - t * t))
    }
    #[inline]
    fn atan(self) -> Self {
        Self::new(self.val.atan(), self.dot / (1.0 + self.val * self.val))
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        Self::new(s, self.dot / (2.0 * s))
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::new(1.0, 0.0);
        }
        Self::new(self.val.powi(n), self.dot * f64::from(n) * self.val.powi(n - 1))
    }
    #[inline]
    fn abs_rh(self) -> (Self, bool) {
        if self.val > 0.0 {
            (self, false)
        } else if self.val < 0.0 {
            (-self, false)
        } else {
            // |g(s+h)| for h -> 0+ grows like |g'| h.
            (Self::new(0.0, self.dot.abs()), true)
        }
    }
    #[inline]
    fn min_rh(self, other: Self) -> (Self, bool) {
        if self.val < other.val {
            (self, false)
        } else if self.val > other.val {
            (other, false)
        } else {
            (Self::new(self.val, self.dot.min(other.dot)), true)
        }
    }
    #[inline]
    fn max_rh(self, other: Self) -> (Self, bool) {
        if self.val > other.val {
            (self, false)
        } else if self.val < other.val {
            (other, false)
        } else {
            (Self::new(self.val, self.dot.max(other.dot)), true)
        }
    }
}
