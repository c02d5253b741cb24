//! Scalar abstraction and second-order forward jets in two variables.
//!
//! A [`Jet2`] carries a value together with its first and second partial
//! derivatives with respect to the two model inputs. Arithmetic on jets
//! propagates derivatives by the chain rule, so any expression assembled
//! from jets yields exact derivatives of the expression actually computed
//! (integrals are differentiated as their discretizations).
//!
//! Jets are generic over [`Scalar`] so the same expression code runs on
//! plain `f64` (fast evaluation) and on tape variables (reverse-mode
//! parameter gradients of derivative-dependent losses).

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Number-like values the jet algebra and the model combiner operate on.
///
/// Implemented for `f64` and for [`crate::diff_engine::tape::Rv`]. Branch
/// decisions must use [`Scalar::value`] so both implementations take the
/// same path.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(x: f64) -> Self;
    /// Primal value, used for branching and diagnostics.
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn erf(self) -> Self;
    fn tanh(self) -> Self;
}

impl Scalar for f64 {
    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline(always)]
    fn value(self) -> f64 {
        self
    }
    #[inline(always)]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline(always)]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline(always)]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline(always)]
    fn erf(self) -> Self {
        libm::erf(self)
    }
    #[inline(always)]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
}

/// Numerically stable `ln(1 + exp(x))` for any scalar.
pub fn softplus<S: Scalar>(x: S) -> S {
    let v = x.value();
    if v > 30.0 {
        // softplus(x) = x + ln(1 + exp(-x)); the correction underflows.
        x
    } else if v < -30.0 {
        x.exp()
    } else {
        (S::from_f64(1.0) + x.exp()).ln()
    }
}

/// Logistic sigmoid, stable in both tails.
pub fn sigmoid<S: Scalar>(x: S) -> S {
    let one = S::from_f64(1.0);
    if x.value() >= 0.0 {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

/// Value with exact first and second input derivatives.
///
/// `val = f(u,v)`, `du = ∂f/∂u`, `duv = ∂²f/∂u∂v`, and so on. The mixed
/// derivative is stored once; the algebra is symmetric by construction.
#[derive(Copy, Clone, Debug)]
pub struct Jet2<S: Scalar> {
    pub val: S,
    pub du: S,
    pub dv: S,
    pub duv: S,
    pub duu: S,
    pub dvv: S,
}

impl<S: Scalar> Jet2<S> {
    pub fn constant(val: S) -> Self {
        let z = S::from_f64(0.0);
        Jet2 {
            val,
            du: z,
            dv: z,
            duv: z,
            duu: z,
            dvv: z,
        }
    }

    /// Seed for the first input variable: derivative one in `u`.
    pub fn var_u(val: S) -> Self {
        let mut j = Self::constant(val);
        j.du = S::from_f64(1.0);
        j
    }

    /// Seed for the second input variable: derivative one in `v`.
    pub fn var_v(val: S) -> Self {
        let mut j = Self::constant(val);
        j.dv = S::from_f64(1.0);
        j
    }

    pub fn scale(self, c: S) -> Self {
        Jet2 {
            val: self.val * c,
            du: self.du * c,
            dv: self.dv * c,
            duv: self.duv * c,
            duu: self.duu * c,
            dvv: self.dvv * c,
        }
    }

    /// Second-order unary chain rule: `g = f(self)` given `f`, `f'`, `f''`
    /// evaluated at `self.val`.
    pub fn chain(self, f: S, d1: S, d2: S) -> Self {
        Jet2 {
            val: f,
            du: d1 * self.du,
            dv: d1 * self.dv,
            duv: d2 * self.du * self.dv + d1 * self.duv,
            duu: d2 * self.du * self.du + d1 * self.duu,
            dvv: d2 * self.dv * self.dv + d1 * self.dvv,
        }
    }

    /// ELU(x) + 1 with α = 1: `exp(x)` below zero, `x + 1` above.
    pub fn elu1(self) -> Self {
        if self.val.value() < 0.0 {
            let e = self.val.exp();
            self.chain(e, e, e)
        } else {
            let one = S::from_f64(1.0);
            self.chain(self.val + one, one, S::from_f64(0.0))
        }
    }

    /// Natural logarithm.
    pub fn ln(self) -> Self {
        let one = S::from_f64(1.0);
        let inv = one / self.val;
        self.chain(self.val.ln(), inv, -(inv * inv))
    }

    /// Logit link `z(t) = ln(t / (1 - t))`.
    ///
    /// The fraction is expanded as `ln t - ln(1-t)` so the derivatives stay
    /// accurate near the interval ends.
    pub fn logit(self) -> Self {
        let one = S::from_f64(1.0);
        let t = self.val;
        let omt = one - t;
        let d1 = one / (t * omt);
        // z'' = (2t - 1) / (t(1-t))^2
        let d2 = (t + t - one) * d1 * d1;
        self.chain(t.ln() - omt.ln(), d1, d2)
    }

    /// Clamp the value into `[lo, hi]`.
    ///
    /// Outside the bounds the result is the constant bound, with zero
    /// derivatives, matching what array-framework clipping does.
    pub fn clamp_value(self, lo: f64, hi: f64) -> Self {
        let v = self.val.value();
        if v < lo {
            Self::constant(S::from_f64(lo))
        } else if v > hi {
            Self::constant(S::from_f64(hi))
        } else {
            self
        }
    }

    pub fn is_finite(&self) -> bool {
        self.val.value().is_finite()
            && self.du.value().is_finite()
            && self.dv.value().is_finite()
            && self.duv.value().is_finite()
            && self.duu.value().is_finite()
            && self.dvv.value().is_finite()
    }
}

impl<S: Scalar> Add for Jet2<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Jet2 {
            val: self.val + o.val,
            du: self.du + o.du,
            dv: self.dv + o.dv,
            duv: self.duv + o.duv,
            duu: self.duu + o.duu,
            dvv: self.dvv + o.dvv,
        }
    }
}

impl<S: Scalar> Sub for Jet2<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Jet2 {
            val: self.val - o.val,
            du: self.du - o.du,
            dv: self.dv - o.dv,
            duv: self.duv - o.duv,
            duu: self.duu - o.duu,
            dvv: self.dvv - o.dvv,
        }
    }
}

impl<S: Scalar> Neg for Jet2<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Jet2 {
            val: -self.val,
            du: -self.du,
            dv: -self.dv,
            duv: -self.duv,
            duu: -self.duu,
            dvv: -self.dvv,
        }
    }
}

impl<S: Scalar> Mul for Jet2<S> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Jet2 {
            val: self.val * o.val,
            du: self.du * o.val + self.val * o.du,
            dv: self.dv * o.val + self.val * o.dv,
            duv: self.duv * o.val + self.du * o.dv + self.dv * o.du + self.val * o.duv,
            duu: self.duu * o.val + S::from_f64(2.0) * self.du * o.du + self.val * o.duu,
            dvv: self.dvv * o.val + S::from_f64(2.0) * self.dv * o.dv + self.val * o.dvv,
        }
    }
}

impl<S: Scalar> Div for Jet2<S> {
    type Output = Self;
    fn div(self, d: Self) -> Self {
        // Quotient rule applied to n = t·d, solved for the derivatives of t.
        let inv = S::from_f64(1.0) / d.val;
        let t = self.val * inv;
        let tu = (self.du - t * d.du) * inv;
        let tv = (self.dv - t * d.dv) * inv;
        let two = S::from_f64(2.0);
        Jet2 {
            val: t,
            du: tu,
            dv: tv,
            duv: (self.duv - tu * d.dv - tv * d.du - t * d.duv) * inv,
            duu: (self.duu - two * tu * d.du - t * d.duu) * inv,
            dvv: (self.dvv - two * tv * d.dv - t * d.dvv) * inv,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn product_jet_matches_polynomial() {
        // f(u,v) = u*v
        let u = Jet2::<f64>::var_u(0.3);
        let v = Jet2::<f64>::var_v(0.8);
        let f = u * v;
        assert_eq!(f.val, 0.24);
        assert_eq!(f.du, 0.8);
        assert_eq!(f.dv, 0.3);
        assert_eq!(f.duv, 1.0);
        assert_eq!(f.duu, 0.0);
        assert_eq!(f.dvv, 0.0);
    }

    #[test]
    fn logit_at_midpoint() {
        let u = Jet2::<f64>::var_u(0.5);
        let z = u.logit();
        assert!(close(z.val, 0.0, 1e-15));
        assert!(close(z.du, 4.0, 1e-12));
        assert!(close(z.duu, 0.0, 1e-12));
    }

    #[test]
    fn division_jet_matches_finite_differences() {
        // f(u,v) = (u² + v) / (1 + u v)
        let f = |u: f64, v: f64| (u * u + v) / (1.0 + u * v);
        let fj = |u: Jet2<f64>, v: Jet2<f64>| (u * u + v) / (Jet2::constant(1.0) + u * v);
        let (u0, v0) = (0.37, 0.61);
        let j = fj(Jet2::var_u(u0), Jet2::var_v(v0));
        let h = 1e-5;
        let du = (f(u0 + h, v0) - f(u0 - h, v0)) / (2.0 * h);
        let dv = (f(u0, v0 + h) - f(u0, v0 - h)) / (2.0 * h);
        let duu = (f(u0 + h, v0) - 2.0 * f(u0, v0) + f(u0 - h, v0)) / (h * h);
        let dvv = (f(u0, v0 + h) - 2.0 * f(u0, v0) + f(u0, v0 - h)) / (h * h);
        let duv = (f(u0 + h, v0 + h) - f(u0 + h, v0 - h) - f(u0 - h, v0 + h)
            + f(u0 - h, v0 - h))
            / (4.0 * h * h);
        assert!(close(j.val, f(u0, v0), 1e-14));
        assert!(close(j.du, du, 1e-8));
        assert!(close(j.dv, dv, 1e-8));
        assert!(close(j.duu, duu, 1e-5));
        assert!(close(j.dvv, dvv, 1e-5));
        assert!(close(j.duv, duv, 1e-5));
    }

    #[test]
    fn linearity_of_derivatives() {
        let f = |u: Jet2<f64>, v: Jet2<f64>| (u * v).elu1();
        let g = |u: Jet2<f64>, v: Jet2<f64>| (u + v).ln();
        let (a, b) = (2.5, -1.25);
        let u = Jet2::var_u(0.4);
        let v = Jet2::var_v(0.9);
        let lhs = f(u, v).scale(a) + g(u, v).scale(b);
        let combo = |u: Jet2<f64>, v: Jet2<f64>| f(u, v).scale(a) + g(u, v).scale(b);
        let rhs = combo(u, v);
        assert_eq!(lhs.val, rhs.val);
        assert_eq!(lhs.duv, rhs.duv);
    }

    #[test]
    fn clamp_freezes_derivatives_outside_bounds() {
        let t = Jet2::<f64>::var_u(1.2).clamp_value(1e-6, 1.0 - 1e-6);
        assert_eq!(t.val, 1.0 - 1e-6);
        assert_eq!(t.du, 0.0);
        let inside = Jet2::<f64>::var_u(0.5).clamp_value(1e-6, 1.0 - 1e-6);
        assert_eq!(inside.du, 1.0);
    }
}
