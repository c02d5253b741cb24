//! Bivariate standard normal CDF.
//!
//! Port of Genz's rank-reduced Drezner–Wesolowsky algorithm (the `BVND`
//! routine behind most statistical packages): Gauss–Legendre quadrature on
//! the tetrachoric integral for moderate correlation and an asymptotic
//! expansion near |rho| = 1. Absolute accuracy is around 5e-16, far inside
//! the 1e-7 contract; a slow adaptive 2-D quadrature in the tests serves as
//! the independent oracle.

use std::f64::consts::PI;

use super::norm::norm_cdf;
use crate::error::{Error, Result};

// Gauss–Legendre abscissae/weights (positive half, symmetric rules).
const GL6_W: [f64; 3] = [0.1713244923791704, 0.3607615730481386, 0.4679139345726910];
const GL6_X: [f64; 3] = [0.9324695142031521, 0.6612093864662645, 0.2386191860831969];
const GL12_W: [f64; 6] = [
    0.04717533638651183,
    0.1069393259953184,
    0.1600783285433462,
    0.2031674267230659,
    0.2334925365383548,
    0.2491470458134028,
];
const GL12_X: [f64; 6] = [
    0.9815606342467192,
    0.9041172563704749,
    0.7699026741943047,
    0.5873179542866175,
    0.3678314989981802,
    0.1252334085114689,
];
const GL20_W: [f64; 10] = [
    0.01761400713915212,
    0.04060142980038694,
    0.06267204833410906,
    0.08327674157670475,
    0.1019301198172404,
    0.1181945319615184,
    0.1316886384491766,
    0.1420961093183821,
    0.1491729864726037,
    0.1527533871307259,
];
const GL20_X: [f64; 10] = [
    0.9931285991850949,
    0.9639719272779138,
    0.9122344282513259,
    0.8391169718222188,
    0.7463319064601508,
    0.6360536807265150,
    0.5108670019508271,
    0.3737060887154196,
    0.2277858511416451,
    0.07652652113349733,
];

/// Upper-orthant probability `Pr[X > h, Y > k]` for standard bivariate
/// normals with correlation `r`, |r| < 1.
fn bvnd_upper(h: f64, k: f64, r: f64) -> f64 {
    let (h, mut k) = (h, k);
    let mut hk = h * k;
    let mut bvn = 0.0;

    if r.abs() < 0.925 {
        if r.abs() > 0.0 {
            let hs = (h * h + k * k) / 2.0;
            let asr = r.asin();
            let (w, x): (&[f64], &[f64]) = if r.abs() < 0.3 {
                (&GL6_W, &GL6_X)
            } else if r.abs() < 0.75 {
                (&GL12_W, &GL12_X)
            } else {
                (&GL20_W, &GL20_X)
            };
            for i in 0..w.len() {
                for sgn in [-1.0, 1.0] {
                    let sn = (asr * (sgn * x[i] + 1.0) / 2.0).sin();
                    bvn += w[i] * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
                }
            }
            bvn = bvn * asr / (4.0 * PI);
        }
        bvn + norm_cdf(-h) * norm_cdf(-k)
    } else {
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        if r.abs() < 1.0 {
            let a2 = (1.0 - r) * (1.0 + r);
            let mut a = a2.sqrt();
            let bs = (h - k) * (h - k);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 16.0;
            let asr = -(bs / a2 + hk) / 2.0;
            if asr > -100.0 {
                bvn = a * asr.exp() * (1.0 - c * (bs - a2) * (1.0 - d * bs / 5.0) / 3.0
                    + c * d * a2 * a2 / 5.0);
            }
            if -hk < 100.0 {
                let b = bs.sqrt();
                bvn -= (-hk / 2.0).exp()
                    * (2.0 * PI).sqrt()
                    * norm_cdf(-b / a)
                    * b
                    * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
            }
            a /= 2.0;
            for i in 0..GL20_W.len() {
                for sgn in [-1.0, 1.0] {
                    let xs = (a * (sgn * GL20_X[i] + 1.0)).powi(2);
                    let rs = (1.0 - xs).sqrt();
                    let asr1 = -(bs / xs + hk) / 2.0;
                    if asr1 > -100.0 {
                        bvn += a
                            * GL20_W[i]
                            * asr1.exp()
                            * ((-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs
                                - (1.0 + c * xs * (1.0 + d * xs)));
                    }
                }
            }
            bvn = -bvn / (2.0 * PI);
        }
        if r > 0.0 {
            bvn + norm_cdf(-h.max(k))
        } else {
            let mut out = -bvn;
            if k > h {
                out += norm_cdf(k) - norm_cdf(h);
            }
            out
        }
    }
}

/// `Pr[X <= x, Y <= y]` for standard bivariate normals with correlation
/// `rho`. Returns a domain error for |rho| >= 1.
pub fn bvn_cdf(x: f64, y: f64, rho: f64) -> Result<f64> {
    if !(rho.abs() < 1.0) {
        return Err(Error::Domain(format!(
            "bivariate normal correlation must satisfy |rho| < 1, got {rho}"
        )));
    }
    if x.is_nan() || y.is_nan() {
        return Err(Error::Domain("bivariate normal input is NaN".into()));
    }
    // (X,Y) -> (-X,-Y) keeps the correlation and swaps orthants.
    Ok(bvnd_upper(-x, -y, rho).clamp(0.0, 1.0))
}

/// `d/drho Pr[X <= x, Y <= y]`: the bivariate normal density at `(x, y)`
/// (Plackett's identity). Also the mixed second derivative in `(x, y)`.
pub fn bvn_pdf(x: f64, y: f64, rho: f64) -> f64 {
    let s2 = (1.0 - rho * rho).max(1e-300);
    ((-(x * x - 2.0 * rho * x * y + y * y) / (2.0 * s2)).exp()) / (2.0 * PI * s2.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn independence_at_medians() {
        assert!((bvn_cdf(0.0, 0.0, 0.0).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn median_orthant_identity() {
        // Pr[X<=0, Y<=0] = 1/4 + asin(rho) / (2 pi)
        for rho in [-0.99, -0.9, -0.5, -0.1, 0.0, 0.2, 0.6, 0.925, 0.99, 0.9999] {
            let got = bvn_cdf(0.0, 0.0, rho).unwrap();
            let expect = 0.25 + rho.asin() / (2.0 * PI);
            assert!(
                (got - expect).abs() < 1e-13,
                "rho={rho} got={got} expect={expect}"
            );
        }
    }

    #[test]
    fn degenerates_to_univariate() {
        for rho in [-0.8, 0.0, 0.5, 0.95] {
            for x in [-2.0, -0.3, 0.4, 1.7] {
                let got = bvn_cdf(x, 8.5, rho).unwrap();
                assert!((got - norm_cdf(x)).abs() < 1e-9, "rho={rho} x={x}");
                let zero = bvn_cdf(x, -9.0, rho).unwrap();
                assert!(zero < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_unit_correlation() {
        assert!(bvn_cdf(0.0, 0.0, 1.0).is_err());
        assert!(bvn_cdf(0.0, 0.0, -1.2).is_err());
    }

    #[test]
    fn matches_quadrature_oracle() {
        // Adaptive 2-D Simpson quadrature of the density over
        // (-inf, x] x (-inf, y], truncated at -9 where the mass is < 1e-19.
        let cases = [
            (0.5, -0.3, 0.6),
            (0.3, 0.7, 0.5),
            (-1.2, 0.4, -0.35),
            (1.5, 1.1, 0.93),
            (-0.7, -0.7, -0.97),
            (0.1, -2.3, 0.8),
        ];
        for (x, y, rho) in cases {
            let oracle = quad2_bvn(x, y, rho);
            let got = bvn_cdf(x, y, rho).unwrap();
            assert!(
                (got - oracle).abs() < 1e-7,
                "({x},{y},{rho}): got={got} oracle={oracle} diff={}",
                (got - oracle).abs()
            );
        }
    }

    fn density(x: f64, y: f64, rho: f64) -> f64 {
        bvn_pdf(x, y, rho)
    }

    fn simpson<F: Fn(f64) -> f64 + Copy>(f: F, a: f64, b: f64, tol: f64) -> f64 {
        fn rec<F: Fn(f64) -> f64 + Copy>(
            f: F,
            a: f64,
            b: f64,
            fa: f64,
            fb: f64,
            fm: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(f, a, m, fa, fm, flm, left, tol / 2.0, depth - 1)
                    + rec(f, m, b, fm, fb, frm, right, tol / 2.0, depth - 1)
            }
        }
        let fa = f(a);
        let fb = f(b);
        let m = 0.5 * (a + b);
        let fm = f(m);
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fb, fm, whole, tol, 28)
    }

    fn quad2_bvn(x: f64, y: f64, rho: f64) -> f64 {
        let inner = |t: f64| simpson(|s: f64| density(t, s, rho), -9.0, y, 1e-12);
        simpson(inner, -9.0, x, 1e-10)
    }
}
