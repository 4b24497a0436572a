//! Hyper-dual numbers for exact first and mixed second derivatives.
//!
//! A value `x = re + e1·ε₁ + e2·ε₂ + e12·ε₁ε₂` with ε₁² = ε₂² = 0 carries
//! ∂f/∂x₁, ∂f/∂x₂ and ∂²f/∂x₁∂x₂ through arbitrary smooth arithmetic.
//! Model surfaces are written once, generic over [`Scalar`], and evaluated
//! either on plain `f64` or on [`Jet`] when derivatives are needed.

use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn cst(v: f64) -> Self;
    fn re(&self) -> f64;
    fn exp(self) -> Self;
    fn tanh(self) -> Self;
    fn powi(self, n: i32) -> Self {
        let mut acc = Self::cst(1.0);
        for _ in 0..n {
            acc = acc * self;
        }
        acc
    }
}

impl Scalar for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn re(&self) -> f64 {
        *self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Jet {
    pub re: f64,
    pub e1: f64,
    pub e2: f64,
    pub e12: f64,
}

impl Jet {
    pub fn new(re: f64, e1: f64, e2: f64, e12: f64) -> Self {
        Jet { re, e1, e2, e12 }
    }

    /// Seed for the first independent variable.
    pub fn var1(x: f64) -> Self {
        Jet::new(x, 1.0, 0.0, 0.0)
    }

    /// Seed for the second independent variable.
    pub fn var2(x: f64) -> Self {
        Jet::new(x, 0.0, 1.0, 0.0)
    }

    /// Apply a scalar function given its value and first two derivatives at `re`.
    fn chain(self, f: f64, df: f64, d2f: f64) -> Self {
        Jet {
            re: f,
            e1: df * self.e1,
            e2: df * self.e2,
            e12: df * self.e12 + d2f * self.e1 * self.e2,
        }
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        Jet::new(self.re + o.re, self.e1 + o.e1, self.e2 + o.e2, self.e12 + o.e12)
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        Jet::new(self.re - o.re, self.e1 - o.e1, self.e2 - o.e2, self.e12 - o.e12)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        Jet::new(
            self.re * o.re,
            self.re * o.e1 + self.e1 * o.re,
            self.re * o.e2 + self.e2 * o.re,
            self.re * o.e12 + self.e1 * o.e2 + self.e2 * o.e1 + self.e12 * o.re,
        )
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, o: Jet) -> Jet {
        let r = o.re.recip();
        self * o.chain(r, -r * r, 2.0 * r * r * r)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        Jet::new(-self.re, -self.e1, -self.e2, -self.e12)
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, o: f64) -> Jet {
        self.re += o;
        self
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    fn sub(mut self, o: f64) -> Jet {
        self.re -= o;
        self
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, o: f64) -> Jet {
        Jet::new(self.re * o, self.e1 * o, self.e2 * o, self.e12 * o)
    }
}

#[allow(clippy::suspicious_arithmetic_impl)]
impl Div<f64> for Jet {
    type Output = Jet;
    fn div(self, o: f64) -> Jet {
        self * o.recip()
    }
}

impl Scalar for Jet {
    fn cst(v: f64) -> Self {
        Jet::new(v, 0.0, 0.0, 0.0)
    }
    fn re(&self) -> f64 {
        self.re
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e, e)
    }
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        let d = 1.0 - t * t;
        self.chain(t, d, -2.0 * t * d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f<S: Scalar>(x: S, y: S) -> S {
        x * x * y + (x * y).exp() / (y + 2.0) + (x - y).tanh()
    }

    #[test]
    fn mixed_partial_matches_symbolic() {
        let (x, y) = (0.3, -0.7);
        let j = f(Jet::var1(x), Jet::var2(y));
        let e = (x * y).exp();
        let t = (x - y).tanh();
        let sech2 = 1.0 - t * t;
        let fx = 2.0 * x * y + y * e / (y + 2.0) + sech2;
        let fy = x * x + x * e / (y + 2.0) - e / ((y + 2.0) * (y + 2.0)) - sech2;
        let fxy = 2.0 * x + (e + x * y * e) / (y + 2.0) - y * e / ((y + 2.0) * (y + 2.0))
            + 2.0 * t * sech2;
        assert!((j.re - f(x, y)).abs() < 1e-15);
        assert!((j.e1 - fx).abs() < 1e-13);
        assert!((j.e2 - fy).abs() < 1e-13);
        assert!((j.e12 - fxy).abs() < 1e-13);
    }
}
