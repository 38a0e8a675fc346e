//! Forward-mode dual numbers with a fixed number of tangent directions.
//!
//! The shooting integrators are written once over [`Real`] and then run
//! either on plain `f64` or on [`Dual`] to obtain exact derivatives of the
//! discretized computation.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
{
    fn cst(v: f64) -> Self;
    fn re(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn re(self) -> f64 {
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
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<const N: usize> {
    pub re: f64,
    pub eps: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn constant(re: f64) -> Self {
        Self { re, eps: [0.0; N] }
    }

    /// Independent variable seeded along direction `dir`.
    pub fn variable(re: f64, dir: usize) -> Self {
        let mut eps = [0.0; N];
        eps[dir] = 1.0;
        Self { re, eps }
    }

    pub fn with_tangent(re: f64, eps: [f64; N]) -> Self {
        Self { re, eps }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        self.re += rhs.re;
        for i in 0..N {
            self.eps[i] += rhs.eps[i];
        }
        self
    }
}

impl<const N: usize> AddAssign for Dual<N> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        self.re -= rhs.re;
        for i in 0..N {
            self.eps[i] -= rhs.eps[i];
        }
        self
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        self.re = -self.re;
        for e in self.eps.iter_mut() {
            *e = -*e;
        }
        self
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut eps = [0.0; N];
        for i in 0..N {
            eps[i] = self.re * rhs.eps[i] + rhs.re * self.eps[i];
        }
        Self {
            re: self.re * rhs.re,
            eps,
        }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.re;
        let re = self.re * inv;
        let mut eps = [0.0; N];
        for i in 0..N {
            eps[i] = (self.eps[i] - re * rhs.eps[i]) * inv;
        }
        Self { re, eps }
    }
}

impl<const N: usize> Real for Dual<N> {
    #[inline]
    fn cst(v: f64) -> Self {
        Self::constant(v)
    }
    #[inline]
    fn re(self) -> f64 {
        self.re
    }
    #[inline]
    fn sin(self) -> Self {
        let c = self.re.cos();
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e *= c;
        }
        Self {
            re: self.re.sin(),
            eps,
        }
    }
    #[inline]
    fn cos(self) -> Self {
        let s = -self.re.sin();
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e *= s;
        }
        Self {
            re: self.re.cos(),
            eps,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_and_quotient_rules() {
        let x = Dual::<2>::variable(3.0, 0);
        let y = Dual::<2>::variable(2.0, 1);
        let f = x * y / (x + y);
        // f = xy/(x+y); df/dx = y^2/(x+y)^2, df/dy = x^2/(x+y)^2
        assert!((f.re - 1.2).abs() < 1e-15);
        assert!((f.eps[0] - 4.0 / 25.0).abs() < 1e-15);
        assert!((f.eps[1] - 9.0 / 25.0).abs() < 1e-15);
    }

    #[test]
    fn trig_chain_rule() {
        let x = Dual::<1>::variable(0.7, 0);
        let f = (x * x).sin();
        assert!((f.eps[0] - 2.0 * 0.7 * (0.49f64).cos()).abs() < 1e-14);
        let g = x.cos();
        assert!((g.eps[0] + 0.7f64.sin()).abs() < 1e-15);
    }
}
