//! Truncated second-order Taylor arithmetic.
//!
//! A [`Jet`] carries `f(t)`, `f'(t)` and `f''(t)` of a quantity evaluated along a
//! straight line `x(t) = x + t·v` in input space. Seeding the inputs with a unit
//! direction gives a Jacobian column in the first-order part; seeding with a
//! velocity gives the velocity-product (bias) term in the second-order part.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar abstraction over `f64` and [`Jet`] so that kinematic maps can be
/// written once and differentiated exactly.
pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
    fn value(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;
    fn scale(self, k: f64) -> Self;
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
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn scale(self, k: f64) -> Self {
        self * k
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub d: f64,
    pub dd: f64,
}

impl Jet {
    pub fn new(v: f64, d: f64, dd: f64) -> Self {
        Self { v, d, dd }
    }

    /// Input variable moving with rate `d` (zero second derivative).
    pub fn variable(v: f64, d: f64) -> Self {
        Self { v, d, dd: 0.0 }
    }
}

impl Add for Jet {
    type Output = Jet;
    #[inline]
    fn add(self, o: Jet) -> Jet {
        Jet::new(self.v + o.v, self.d + o.d, self.dd + o.dd)
    }
}

impl Sub for Jet {
    type Output = Jet;
    #[inline]
    fn sub(self, o: Jet) -> Jet {
        Jet::new(self.v - o.v, self.d - o.d, self.dd - o.dd)
    }
}

impl Mul for Jet {
    type Output = Jet;
    #[inline]
    fn mul(self, o: Jet) -> Jet {
        Jet::new(self.v * o.v, self.d * o.v + self.v * o.d, self.dd * o.v + 2.0 * self.d * o.d + self.v * o.dd)
    }
}

impl Div for Jet {
    type Output = Jet;
    #[inline]
    fn div(self, o: Jet) -> Jet {
        let q = self.v / o.v;
        let qd = (self.d - q * o.d) / o.v;
        let qdd = (self.dd - 2.0 * qd * o.d - q * o.dd) / o.v;
        Jet::new(q, qd, qdd)
    }
}

impl Neg for Jet {
    type Output = Jet;
    #[inline]
    fn neg(self) -> Jet {
        Jet::new(-self.v, -self.d, -self.dd)
    }
}

impl Scalar for Jet {
    #[inline]
    fn constant(v: f64) -> Self {
        Jet::new(v, 0.0, 0.0)
    }
    #[inline]
    fn value(self) -> f64 {
        self.v
    }
    #[inline]
    fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        Jet::new(s, c * self.d, -s * self.d * self.d + c * self.dd)
    }
    #[inline]
    fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        Jet::new(c, -s * self.d, -c * self.d * self.d - s * self.dd)
    }
    #[inline]
    fn sqrt(self) -> Self {
        let r = self.v.sqrt();
        let rd = self.d / (2.0 * r);
        let rdd = (self.dd - 2.0 * rd * rd) / (2.0 * r);
        Jet::new(r, rd, rdd)
    }
    #[inline]
    fn scale(self, k: f64) -> Self {
        Jet::new(self.v * k, self.d * k, self.dd * k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd2(f: impl Fn(f64) -> f64, x: f64, h: f64) -> (f64, f64) {
        let d = (f(x + h) - f(x - h)) / (2.0 * h);
        let dd = (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
        (d, dd)
    }

    #[test]
    fn composite_function_matches_finite_differences() {
        // g(t) = sin(x)·sqrt(x)/cos(x) along x = 0.7 + 1.3 t
        let g = |x: f64| x.sin() * x.sqrt() / x.cos();
        let x = Jet::variable(0.7, 1.3);
        let j = x.sin() * x.sqrt() / x.cos();
        let (d, dd) = fd2(|t| g(0.7 + 1.3 * t), 0.0, 1e-4);
        assert!((j.v - g(0.7)).abs() < 1e-15);
        assert!((j.d - d).abs() < 1e-7);
        assert!((j.dd - dd).abs() < 1e-5);
    }

    #[test]
    fn product_rule_second_order() {
        let a = Jet::new(2.0, 3.0, 5.0);
        let b = Jet::new(7.0, 11.0, 13.0);
        let p = a * b;
        assert_eq!(p.v, 14.0);
        assert_eq!(p.d, 3.0 * 7.0 + 2.0 * 11.0);
        assert_eq!(p.dd, 5.0 * 7.0 + 2.0 * 3.0 * 11.0 + 2.0 * 13.0);
    }
}
