use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar arithmetic shared by `f64` and [`HyperDual`], so one closed-form
/// definition yields values, first and second derivatives.
pub trait Real:
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
    /// Real part, used for branching.
    fn re(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn sq(self) -> Self {
        self * self
    }
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn re(self) -> f64 {
        self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

/// `v + a·ε₁ + b·ε₂ + ab·ε₁ε₂` with `ε₁² = ε₂² = 0`.
///
/// Seeding `a` along `eᵢ` and `b` along `eⱼ` gives `∂ᵢf` in `a`, `∂ⱼf` in `b`
/// and `∂ᵢ∂ⱼf` in `ab`, all exact to rounding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperDual {
    pub v: f64,
    pub a: f64,
    pub b: f64,
    pub ab: f64,
}

impl HyperDual {
    pub fn new(v: f64, a: f64, b: f64, ab: f64) -> Self {
        Self { v, a, b, ab }
    }

    /// Applies a scalar function given its value and first two derivatives at `v`.
    fn chain(self, f: f64, f1: f64, f2: f64) -> Self {
        Self {
            v: f,
            a: f1 * self.a,
            b: f1 * self.b,
            ab: f1 * self.ab + f2 * self.a * self.b,
        }
    }

    fn recip(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(r, -r * r, 2.0 * r * r * r)
    }
}

impl Real for HyperDual {
    fn cst(v: f64) -> Self {
        Self::new(v, 0.0, 0.0, 0.0)
    }
    fn re(self) -> f64 {
        self.v
    }
    fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }
    fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e)
    }
    fn ln(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(self.v.ln(), r, -r * r)
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * self.v))
    }
}

impl Add for HyperDual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.v + o.v, self.a + o.a, self.b + o.b, self.ab + o.ab)
    }
}

impl Sub for HyperDual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.v - o.v, self.a - o.a, self.b - o.b, self.ab - o.ab)
    }
}

impl Mul for HyperDual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.v * o.v,
            self.v * o.a + self.a * o.v,
            self.v * o.b + self.b * o.v,
            self.v * o.ab + self.a * o.b + self.b * o.a + self.ab * o.v,
        )
    }
}

impl Div for HyperDual {
    type Output = Self;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Self) -> Self {
        self * o.recip()
    }
}

impl Neg for HyperDual {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.v, -self.a, -self.b, -self.ab)
    }
}

impl Add<f64> for HyperDual {
    type Output = Self;
    fn add(self, o: f64) -> Self {
        Self { v: self.v + o, ..self }
    }
}

impl Sub<f64> for HyperDual {
    type Output = Self;
    fn sub(self, o: f64) -> Self {
        Self { v: self.v - o, ..self }
    }
}

impl Mul<f64> for HyperDual {
    type Output = Self;
    fn mul(self, o: f64) -> Self {
        Self::new(self.v * o, self.a * o, self.b * o, self.ab * o)
    }
}

impl Div<f64> for HyperDual {
    type Output = Self;
    fn div(self, o: f64) -> Self {
        self * (1.0 / o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe<F: Fn(HyperDual) -> HyperDual>(f: F, x: f64) -> HyperDual {
        f(HyperDual::new(x, 1.0, 1.0, 0.0))
    }

    #[test]
    fn second_derivatives_of_elementary_functions() {
        let x = 0.7;
        let s = probe(|z| z.sin(), x);
        assert!((s.ab + x.sin()).abs() < 1e-15);
        let e = probe(|z| (z * 2.0).exp(), x);
        assert!((e.ab - 4.0 * (2.0 * x).exp()).abs() < 1e-12);
        let l = probe(|z| z.ln(), x);
        assert!((l.a - 1.0 / x).abs() < 1e-15 && (l.ab + 1.0 / (x * x)).abs() < 1e-14);
        let r = probe(|z| z.sqrt(), x);
        assert!((r.ab + 0.25 * x.powf(-1.5)).abs() < 1e-14);
        let q = probe(|z| HyperDual::cst(1.0) / z, x);
        assert!((q.ab - 2.0 / x.powi(3)).abs() < 1e-13);
        let c = probe(|z| z.cos() * z, x);
        assert!((c.a - (x.cos() - x * x.sin())).abs() < 1e-15);
    }

    #[test]
    fn mixed_partial() {
        // f(x, y) = x²y: ∂x∂y f = 2x.
        let x = HyperDual::new(1.5, 1.0, 0.0, 0.0);
        let y = HyperDual::new(-2.0, 0.0, 1.0, 0.0);
        let f = x * x * y;
        assert_eq!(f.ab, 3.0);
        assert_eq!(f.a, 2.0 * 1.5 * -2.0);
        assert_eq!(f.b, 2.25);
    }
}
