//! Bivariate CDF heads and their second-order chain rule.
//!
//! The head couples the two logit-transformed monotone coordinates into a
//! single CDF value. Propagating jets through it needs the head's first and
//! second partials; all of them are written as [`Scalar`] expressions so the
//! reverse tape can also differentiate them with respect to the head
//! parameters (third-order mixed derivatives overall).

use std::f64::consts::PI;

use super::bvn::{bvn_cdf, bvn_pdf};
use super::norm::norm_cdf;
use crate::diff_engine::{sigmoid, softplus, Jet2, Rv, Scalar, Tape};

/// Which bivariate CDF closes the model.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum HeadKind {
    Gaussian,
    Logistic,
}

impl HeadKind {
    pub fn n_raw_params(&self) -> usize {
        match self {
            HeadKind::Gaussian => 3,
            HeadKind::Logistic => 5,
        }
    }
}

/// Unconstrained head parameters plus their constraint maps.
///
/// The correlation is stored pre-tanh; scales and the logistic exponent are
/// stored pre-softplus. Gaussian standard deviations are fixed at one — only
/// the means and the correlation are free.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub kind: HeadKind,
    pub raw: Vec<f64>,
}

/// `softplus⁻¹(1)`: raw value mapping to a unit scale.
pub const RAW_UNIT_SCALE: f64 = 0.541_324_854_612_918_1;

impl HeadParams {
    pub fn init(kind: HeadKind) -> Self {
        let raw = match kind {
            HeadKind::Gaussian => vec![0.0; 3],
            HeadKind::Logistic => vec![0.0, 0.0, RAW_UNIT_SCALE, RAW_UNIT_SCALE, RAW_UNIT_SCALE],
        };
        HeadParams { kind, raw }
    }

    /// Apply the constraint maps over any scalar type.
    pub fn constrained<S: Scalar>(&self, raw: &[S]) -> HeadOn<S> {
        match self.kind {
            HeadKind::Gaussian => HeadOn::Gaussian {
                mu1: raw[0],
                mu2: raw[1],
                rho: raw[2].tanh(),
            },
            HeadKind::Logistic => HeadOn::Logistic {
                mu1: raw[0],
                mu2: raw[1],
                sigma1: softplus(raw[2]),
                sigma2: softplus(raw[3]),
                alpha: softplus(raw[4]),
            },
        }
    }

    pub fn constrained_f64(&self) -> HeadOn<f64> {
        self.constrained(&self.raw)
    }
}

/// Constrained head parameters, generic over the scalar type.
#[derive(Copy, Clone, Debug)]
pub enum HeadOn<S> {
    Gaussian { mu1: S, mu2: S, rho: S },
    Logistic { mu1: S, mu2: S, sigma1: S, sigma2: S, alpha: S },
}

/// Scalars that can evaluate the bivariate normal CDF.
///
/// `f64` calls the numeric routine directly; tape variables attach the
/// closed-form partials (conditional-CDF expressions in each argument and
/// the density in the correlation) as a custom node.
pub trait HeadScalar: Scalar {
    fn bvn_cdf3(x: Self, y: Self, rho: Self) -> Self;
}

impl HeadScalar for f64 {
    fn bvn_cdf3(x: Self, y: Self, rho: Self) -> Self {
        bvn_cdf(x, y, rho).expect("correlation is tanh-constrained")
    }
}

impl<'t> HeadScalar for Rv<'t> {
    fn bvn_cdf3(x: Self, y: Self, rho: Self) -> Self {
        let (xv, yv, rv) = (x.value(), y.value(), rho.value());
        let value = bvn_cdf(xv, yv, rv).expect("correlation is tanh-constrained");
        let s = (1.0 - rv * rv).sqrt().max(1e-12);
        let px = super::norm::norm_pdf(xv) * norm_cdf((yv - rv * xv) / s);
        let py = super::norm::norm_pdf(yv) * norm_cdf((xv - rv * yv) / s);
        let prho = bvn_pdf(xv, yv, rv);
        let tape = match (x, y, rho) {
            (Rv::Node { tape, .. }, _, _) | (_, Rv::Node { tape, .. }, _)
            | (_, _, Rv::Node { tape, .. }) => tape,
            _ => return Rv::Const(value),
        };
        let _: &Tape = tape;
        tape.custom(value, &[(x, px), (y, py), (rho, prho)])
    }
}

/// Standard normal pdf over any scalar.
fn npdf<S: Scalar>(z: S) -> S {
    (-(z * z).scale_half()).exp().scale_inv_sqrt2pi()
}

/// Standard normal CDF over any scalar: `(1 + erf(z/√2)) / 2`.
fn ncdf<S: Scalar>(z: S) -> S {
    (z.scale_inv_sqrt2().erf() + S::from_f64(1.0)) * S::from_f64(0.5)
}

// Small scaling helpers keep npdf/ncdf readable.
trait ScaleExt: Scalar {
    fn scale_half(self) -> Self {
        self * Self::from_f64(0.5)
    }
    fn scale_inv_sqrt2pi(self) -> Self {
        self * Self::from_f64(1.0 / (2.0 * PI).sqrt())
    }
    fn scale_inv_sqrt2(self) -> Self {
        self * Self::from_f64(std::f64::consts::FRAC_1_SQRT_2)
    }
}
impl<S: Scalar> ScaleExt for S {}

/// Head CDF value and first/second partials at `(x, y)`.
struct HeadPartials<S> {
    g: S,
    gx: S,
    gy: S,
    gxx: S,
    gyy: S,
    gxy: S,
}

fn partials<S: HeadScalar>(head: &HeadOn<S>, x: S, y: S) -> HeadPartials<S> {
    match *head {
        HeadOn::Gaussian { mu1, mu2, rho } => {
            let sx = x - mu1;
            let sy = y - mu2;
            let one = S::from_f64(1.0);
            let s = (one - rho * rho).sqrt();
            let g = S::bvn_cdf3(sx, sy, rho);
            let w1 = (sy - rho * sx) / s;
            let w2 = (sx - rho * sy) / s;
            let gx = npdf(sx) * ncdf(w1);
            let gy = npdf(sy) * ncdf(w2);
            let gxy = npdf(sx) * npdf(w1) / s;
            let gxx = -(sx * gx) - rho * gxy;
            let gyy = -(sy * gy) - rho * gxy;
            HeadPartials { g, gx, gy, gxx, gyy, gxy }
        }
        HeadOn::Logistic { mu1, mu2, sigma1, sigma2, alpha } => {
            // G(x,y) = ((1 + e^{-a s1} + e^{-a s2} + e^{-a(s1+s2)})^{1/a})^{-1}
            // with s_i = (x_i - mu_i)/sigma_i. The inner sum factors into
            // (1 + e^{-a s1})(1 + e^{-a s2}), so G = P(x) Q(y) with
            // P = exp(-softplus(a1)/a), a1 = -a s1.
            let a1 = -(alpha * (x - mu1) / sigma1);
            let a2 = -(alpha * (y - mu2) / sigma2);
            let p = (-(softplus(a1) / alpha)).exp();
            let q = (-(softplus(a2) / alpha)).exp();
            let s1 = sigmoid(a1);
            let s2 = sigmoid(a2);
            let one = S::from_f64(1.0);
            let px = p * s1 / sigma1;
            let qy = q * s2 / sigma2;
            let pxx = p * s1 * (s1 - alpha * (one - s1)) / (sigma1 * sigma1);
            let qyy = q * s2 * (s2 - alpha * (one - s2)) / (sigma2 * sigma2);
            HeadPartials {
                g: p * q,
                gx: px * q,
                gy: p * qy,
                gxx: pxx * q,
                gyy: p * qyy,
                gxy: px * qy,
            }
        }
    }
}

/// Push two jets through the head CDF with the bivariate chain rule.
pub fn head_jet<S: HeadScalar>(head: &HeadOn<S>, x: Jet2<S>, y: Jet2<S>) -> Jet2<S> {
    let hp = partials(head, x.val, y.val);
    let two = S::from_f64(2.0);
    Jet2 {
        val: hp.g,
        du: hp.gx * x.du + hp.gy * y.du,
        dv: hp.gx * x.dv + hp.gy * y.dv,
        duv: hp.gxx * x.du * x.dv
            + hp.gxy * (x.du * y.dv + x.dv * y.du)
            + hp.gyy * y.du * y.dv
            + hp.gx * x.duv
            + hp.gy * y.duv,
        duu: hp.gxx * x.du * x.du
            + two * hp.gxy * x.du * y.du
            + hp.gyy * y.du * y.du
            + hp.gx * x.duu
            + hp.gy * y.duu,
        dvv: hp.gxx * x.dv * x.dv
            + two * hp.gxy * x.dv * y.dv
            + hp.gyy * y.dv * y.dv
            + hp.gx * x.dvv
            + hp.gy * y.dvv,
    }
}

/// Plain CDF value of the head at `(x, y)` (used by the FLEX variant).
pub fn head_cdf(head: &HeadOn<f64>, x: f64, y: f64) -> f64 {
    partials(head, x, y).g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    fn gaussian_head() -> HeadOn<f64> {
        HeadOn::Gaussian {
            mu1: 0.2,
            mu2: -0.1,
            rho: 0.55,
        }
    }

    fn logistic_head() -> HeadOn<f64> {
        HeadOn::Logistic {
            mu1: 0.1,
            mu2: -0.2,
            sigma1: 1.3,
            sigma2: 0.8,
            alpha: 1.7,
        }
    }

    #[test]
    fn logistic_cdf_limits() {
        let h = logistic_head();
        assert!(head_cdf(&h, 60.0, 60.0) > 1.0 - 1e-9);
        assert!(head_cdf(&h, -60.0, 5.0) < 1e-9);
        assert!(head_cdf(&h, 3.0, -60.0) < 1e-9);
    }

    #[test]
    fn logistic_alpha_one_factorizes() {
        // At alpha=1, mu=0, sigma=1 the formula reduces to the product of two
        // univariate logistics; at (0,0) that is 1/4.
        let h = HeadOn::Logistic {
            mu1: 0.0,
            mu2: 0.0,
            sigma1: 1.0,
            sigma2: 1.0,
            alpha: 1.0,
        };
        assert!(close(head_cdf(&h, 0.0, 0.0), 0.25, 1e-12));
        let x: f64 = 0.7;
        let y: f64 = -0.4;
        let expect = 1.0 / (1.0 + (-x).exp()) / (1.0 + (-y).exp());
        assert!(close(head_cdf(&h, x, y), expect, 1e-12));
    }

    #[test]
    fn logistic_monotone_on_grid() {
        let h = logistic_head();
        for i in 0..50 {
            for j in 0..50 {
                let x = -5.0 + 10.0 * i as f64 / 49.0;
                let y = -5.0 + 10.0 * j as f64 / 49.0;
                let g = head_cdf(&h, x, y);
                assert!((0.0..=1.0).contains(&g));
                assert!(head_cdf(&h, x + 0.1, y) >= g - 1e-12);
                assert!(head_cdf(&h, x, y + 0.1) >= g - 1e-12);
            }
        }
    }

    #[test]
    fn head_partials_match_finite_differences() {
        for head in [gaussian_head(), logistic_head()] {
            let f = |x: f64, y: f64| head_cdf(&head, x, y);
            for (x0, y0) in [(0.3, -0.5), (-1.1, 0.9), (0.0, 0.0)] {
                let hp = partials(&head, x0, y0);
                let h = 1e-5;
                let fx = (f(x0 + h, y0) - f(x0 - h, y0)) / (2.0 * h);
                let fy = (f(x0, y0 + h) - f(x0, y0 - h)) / (2.0 * h);
                let fxx = (f(x0 + h, y0) - 2.0 * f(x0, y0) + f(x0 - h, y0)) / (h * h);
                let fyy = (f(x0, y0 + h) - 2.0 * f(x0, y0) + f(x0, y0 - h)) / (h * h);
                let fxy = (f(x0 + h, y0 + h) - f(x0 + h, y0 - h) - f(x0 - h, y0 + h)
                    + f(x0 - h, y0 - h))
                    / (4.0 * h * h);
                assert!(close(hp.gx, fx, 1e-7), "gx {} vs {}", hp.gx, fx);
                assert!(close(hp.gy, fy, 1e-7), "gy {} vs {}", hp.gy, fy);
                assert!(close(hp.gxx, fxx, 1e-4), "gxx {} vs {}", hp.gxx, fxx);
                assert!(close(hp.gyy, fyy, 1e-4), "gyy {} vs {}", hp.gyy, fyy);
                assert!(close(hp.gxy, fxy, 1e-4), "gxy {} vs {}", hp.gxy, fxy);
            }
        }
    }

    #[test]
    fn head_jet_chain_matches_finite_differences() {
        // Feed non-trivial jets x(u,v), y(u,v) through the head and compare
        // against finite differences of the composed map.
        for head in [gaussian_head(), logistic_head()] {
            let xf = |u: f64, v: f64| (u * u + 0.5 * v).ln();
            let yf = |u: f64, v: f64| u * v - v * v;
            let composed = |u: f64, v: f64| head_cdf(&head, xf(u, v), yf(u, v));
            let (u0, v0) = (0.8, 0.6);
            let xj = {
                let u = Jet2::<f64>::var_u(u0);
                let v = Jet2::<f64>::var_v(v0);
                (u * u + v.scale(0.5)).ln()
            };
            let yj = {
                let u = Jet2::<f64>::var_u(u0);
                let v = Jet2::<f64>::var_v(v0);
                u * v - v * v
            };
            let hj = head_jet(&head, xj, yj);
            let h = 1e-5;
            let du = (composed(u0 + h, v0) - composed(u0 - h, v0)) / (2.0 * h);
            let dv = (composed(u0, v0 + h) - composed(u0, v0 - h)) / (2.0 * h);
            let duv = (composed(u0 + h, v0 + h) - composed(u0 + h, v0 - h)
                - composed(u0 - h, v0 + h)
                + composed(u0 - h, v0 - h))
                / (4.0 * h * h);
            let duu =
                (composed(u0 + h, v0) - 2.0 * composed(u0, v0) + composed(u0 - h, v0)) / (h * h);
            assert!(close(hj.val, composed(u0, v0), 1e-12));
            assert!(close(hj.du, du, 1e-7));
            assert!(close(hj.dv, dv, 1e-7));
            assert!(close(hj.duv, duv, 1e-4));
            assert!(close(hj.duu, duu, 1e-4));
        }
    }

    #[test]
    fn tape_gradient_of_head_matches_finite_differences() {
        // Gradient of G(x, y; raw head params) with respect to the raw
        // parameters, including flow through the constraint maps.
        for kind in [HeadKind::Gaussian, HeadKind::Logistic] {
            let mut params = HeadParams::init(kind);
            for (i, r) in params.raw.iter_mut().enumerate() {
                *r += 0.1 * (i as f64 + 1.0);
            }
            let (x0, y0) = (0.4, -0.3);
            let eval = |raw: &[f64]| {
                let hp = HeadParams {
                    kind,
                    raw: raw.to_vec(),
                };
                head_cdf(&hp.constrained_f64(), x0, y0)
            };
            let grad = crate::diff_engine::grad_params(
                |tape, vars| {
                    let head = params.constrained(vars);
                    let x = Jet2::constant(Rv::from_f64(x0));
                    let y = Jet2::constant(Rv::from_f64(y0));
                    let _ = tape;
                    head_jet(&head, x, y).val
                },
                &params.raw,
            )
            .unwrap();
            let eps = 1e-6;
            for i in 0..params.raw.len() {
                let mut rp = params.raw.clone();
                let mut rm = params.raw.clone();
                rp[i] += eps;
                rm[i] -= eps;
                let fd = (eval(&rp) - eval(&rm)) / (2.0 * eps);
                assert!(
                    close(grad[i], fd, 1e-5),
                    "{kind:?} raw[{i}]: grad {} vs fd {}",
                    grad[i],
                    fd
                );
            }
        }
    }
}
