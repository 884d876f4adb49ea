use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Real;

/// Forward-mode dual number: a value and its derivative with respect to one
/// designated scalar input.
///
/// The components are themselves [`Real`], so `Dual<Var>` records the tangent
/// arithmetic on a tape and reverse mode can then differentiate through it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T> {
    pub value: T,
    pub tangent: T,
}

pub type DualScalar = Dual<f64>;

impl<T: Real> Dual<T> {
    pub fn new(value: T, tangent: T) -> Self {
        Dual { value, tangent }
    }

    /// A quantity that does not depend on the designated input.
    pub fn constant(value: T) -> Self {
        let zero = value.lift(0.0);
        Dual {
            value,
            tangent: zero,
        }
    }

    /// The designated input itself (tangent 1).
    pub fn variable(value: T) -> Self {
        let one = value.lift(1.0);
        Dual {
            value,
            tangent: one,
        }
    }
}

impl<T: Real> Add for Dual<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Dual::new(self.value + rhs.value, self.tangent + rhs.tangent)
    }
}

impl<T: Real> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Dual::new(self.value - rhs.value, self.tangent - rhs.tangent)
    }
}

impl<T: Real> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Dual::new(
            self.value * rhs.value,
            self.value * rhs.tangent + self.tangent * rhs.value,
        )
    }
}

impl<T: Real> Div for Dual<T> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let q = self.value / rhs.value;
        Dual::new(q, (self.tangent - q * rhs.tangent) / rhs.value)
    }
}

impl<T: Real> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual::new(-self.value, -self.tangent)
    }
}

impl<T: Real> Real for Dual<T> {
    fn lift(&self, c: f64) -> Self {
        Dual::new(self.value.lift(c), self.value.lift(0.0))
    }

    fn value(&self) -> f64 {
        self.value.value()
    }

    fn tanh(self) -> Self {
        let h = self.value.tanh();
        let one = h.lift(1.0);
        Dual::new(h, (one - h.square()) * self.tangent)
    }

    fn exp(self) -> Self {
        let e = self.value.exp();
        Dual::new(e, e * self.tangent)
    }

    fn square(self) -> Self {
        let two = self.value.lift(2.0);
        Dual::new(self.value.square(), two * self.value * self.tangent)
    }

    fn sum(items: &[Self]) -> Self {
        let values: Vec<T> = items.iter().map(|d| d.value).collect();
        let tangents: Vec<T> = items.iter().map(|d| d.tangent).collect();
        Dual::new(T::sum(&values), T::sum(&tangents))
    }

    fn mean(items: &[Self]) -> Self {
        let values: Vec<T> = items.iter().map(|d| d.value).collect();
        let tangents: Vec<T> = items.iter().map(|d| d.tangent).collect();
        Dual::new(T::mean(&values), T::mean(&tangents))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_rule_on_composite() {
        // g(t) = exp(t) * tanh(t)^2 / (1 + t)
        let g = |t: DualScalar| {
            let one = t.lift(1.0);
            t.exp() * t.tanh().square() / (one + t)
        };
        let t0 = 0.8_f64;
        let d = g(Dual::variable(t0));
        let h = t0.tanh();
        let num = t0.exp() * h * h;
        let dnum = t0.exp() * h * h + t0.exp() * 2.0 * h * (1.0 - h * h);
        let exact = (dnum * (1.0 + t0) - num) / (1.0 + t0).powi(2);
        assert!((d.tangent - exact).abs() < 1e-14);
        assert_eq!(d.value, num / (1.0 + t0));
    }

    #[test]
    fn constants_carry_zero_tangent() {
        let c = Dual::constant(3.0);
        let t = Dual::variable(2.0);
        let y = c * t - c;
        assert_eq!(y.tangent, 3.0);
        assert_eq!((c * c).tangent, 0.0);
    }
}
