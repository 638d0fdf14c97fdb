//! Forward-mode dual numbers with a fixed number of tangent directions.
//!
//! Used where only a handful of parameters influence a value, e.g. one
//! transition's local gradient once its input position is detached.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::autodiff::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<const N: usize> {
    pub value: f64,
    pub tangent: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn constant(value: f64) -> Self {
        Self {
            value,
            tangent: [0.0; N],
        }
    }

    /// Seeds direction `k` with unit tangent.
    pub fn variable(value: f64, k: usize) -> Self {
        let mut tangent = [0.0; N];
        tangent[k] = 1.0;
        Self { value, tangent }
    }

    #[inline]
    fn chain(self, value: f64, d: f64) -> Self {
        let mut tangent = self.tangent;
        for t in tangent.iter_mut() {
            *t *= d;
        }
        Self { value, tangent }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, o: Self) -> Self {
        self.value += o.value;
        for k in 0..N {
            self.tangent[k] += o.tangent[k];
        }
        self
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, o: Self) -> Self {
        self.value -= o.value;
        for k in 0..N {
            self.tangent[k] -= o.tangent[k];
        }
        self
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut tangent = [0.0; N];
        for k in 0..N {
            tangent[k] = self.tangent[k] * o.value + o.tangent[k] * self.value;
        }
        Self {
            value: self.value * o.value,
            tangent,
        }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.value;
        let value = self.value * inv;
        let mut tangent = [0.0; N];
        for k in 0..N {
            tangent[k] = (self.tangent[k] - value * o.tangent[k]) * inv;
        }
        Self { value, tangent }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.chain(-self.value, -1.0)
    }
}

impl<const N: usize> Add<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, c: f64) -> Self {
        self.value += c;
        self
    }
}

impl<const N: usize> Sub<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, c: f64) -> Self {
        self.value -= c;
        self
    }
}

impl<const N: usize> Mul<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, c: f64) -> Self {
        self.chain(self.value * c, c)
    }
}

impl<const N: usize> Div<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, c: f64) -> Self {
        self.chain(self.value / c, 1.0 / c)
    }
}

impl<const N: usize> Scalar for Dual<N> {
    #[inline]
    fn constant(value: f64) -> Self {
        Dual::constant(value)
    }
    #[inline]
    fn value(&self) -> f64 {
        self.value
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.value.exp();
        self.chain(e, e)
    }
    #[inline]
    fn ln(self) -> Self {
        self.chain(self.value.ln(), 1.0 / self.value)
    }
    #[inline]
    fn powi(self, k: i32) -> Self {
        if k == 0 {
            return Self::constant(1.0);
        }
        let p = self.value.powi(k - 1);
        self.chain(p * self.value, k as f64 * p)
    }
    #[inline]
    fn powf(self, p: f64) -> Self {
        let v = self.value.powf(p);
        self.chain(v, p * v / self.value)
    }
    #[inline]
    fn select(condition: bool, a: Self, b: Self) -> Self {
        if condition {
            a
        } else {
            b
        }
    }
    #[inline]
    fn detach(self) -> Self {
        Self::constant(self.value)
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        self.chain(s, 0.5 / s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::evaluate_with_gradient;

    fn expr<S: Scalar>(x: S, y: S) -> S {
        (x * y + x.exp() / y).ln() - x.powi(3) * 0.5 + y.sqrt() * x.powf(1.5) - (-y) / 2.0
    }

    #[test]
    fn matches_reverse_mode() {
        let (v, g) = evaluate_with_gradient(|a| expr(a[0], a[1]), &[0.7, 1.3]).unwrap();
        let out = expr(Dual::<2>::variable(0.7, 0), Dual::<2>::variable(1.3, 1));
        assert!((out.value - v).abs() < 1e-14);
        for k in 0..2 {
            assert!((out.tangent[k] - g[k]).abs() < 1e-12, "{k}");
        }
    }

    #[test]
    fn detach_and_select() {
        let x = Dual::<1>::variable(2.0, 0);
        assert_eq!((x * x.detach()).tangent, [2.0]);
        assert_eq!(Dual::select(false, x, Dual::constant(1.0)).tangent, [0.0]);
    }
}
