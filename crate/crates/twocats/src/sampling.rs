//! Conditional inverse-transform sampling from a trained model.
//!
//! A draw takes `u ~ U(0,1)` and `p ~ U(0,1)` and solves `h_u(v) = p`, where
//! `h_u(v) = ∂H/∂u (u, v)` is the conditional CDF of `V` given `U = u`. The
//! solve is a bracketed Newton iteration whose slope is the mixed second
//! derivative (the model density), with bisection fallback, so it converges
//! on any nondecreasing conditional.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{HSlice, TwoCatsModel};

/// Root-finding and marginal settings for the sampler.
pub struct SamplerConfig {
    pub seed: u64,
    pub tolerance: f64,
    pub max_iter: usize,
    /// Retries (fresh `(u, p)` draws) per sample before giving up.
    pub retry_budget: usize,
    /// Optional marginal quantile functions applied to the pair.
    pub marginals: Option<MarginalQuantiles>,
}

/// Inverse marginal CDFs mapping `(u, v)` into data space.
pub struct MarginalQuantiles {
    pub q1: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub q2: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            seed: crate::copula_ref::DEFAULT_SEED,
            tolerance: 1e-8,
            max_iter: 100,
            retry_budget: 10,
            marginals: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::Contract(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// Conditional CDF `Pr[V <= v | U = u]`: the `u`-derivative of `H`, clipped
/// into the unit interval.
pub fn conditional_h(model: &TwoCatsModel, u: f64, v: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    let slice = HSlice::new(model, u);
    slice.h_and_slope(v).0.clamp(0.0, 1.0)
}

/// Solve `conditional_h(u, v) = p` for `v` by bracketed Newton with
/// bisection fallback.
pub fn inverse_conditional(model: &TwoCatsModel, u: f64, p: f64, cfg: &SamplerConfig) -> Result<f64> {
    cfg.validate()?;
    let slice = HSlice::new(model, u);
    invert_on_slice(&slice, p, cfg.tolerance, cfg.max_iter)
}

fn invert_on_slice(slice: &HSlice<'_>, p: f64, tol: f64, max_iter: usize) -> Result<f64> {
    assert!(p > 0.0 && p < 1.0, "p must be interior");
    // h is nondecreasing with h(0) = 0; bracket the root between lo and hi.
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    let mut v = p; // the independence copula would put the root exactly here
    let mut residual = f64::INFINITY;
    for iter in 0..max_iter {
        let (h, slope) = slice.h_and_slope(v);
        residual = h - p;
        if residual.abs() <= tol {
            return Ok(v);
        }
        if residual > 0.0 {
            hi = v;
        } else {
            lo = v;
        }
        let newton = v - residual / slope;
        v = if slope > 1e-12 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < f64::EPSILON {
            // Bracket collapsed; the target is unreachable (e.g. p beyond
            // the model's h(u, 1)).
            return Err(Error::RootFind {
                msg: "conditional quantile bracket collapsed".into(),
                last_v: v,
                residual,
                iters: iter + 1,
            });
        }
    }
    Err(Error::RootFind {
        msg: "conditional quantile did not converge".into(),
        last_v: v,
        residual,
        iters: max_iter,
    })
}

/// Summary of one sampling run.
pub struct SampleRun {
    pub pairs: Vec<(f64, f64)>,
    /// Draws that needed a retry after a root-find failure.
    pub retries: usize,
}

/// Draw `n` pairs from the model copula.
///
/// Each draw uses its own ChaCha8 substream (`seed`, draw index), so results
/// are independent of evaluation order and reproducible. Failed root finds
/// retry with fresh `(u, p)` from the same substream, up to the budget.
pub fn sample_pairs(model: &TwoCatsModel, n: usize, cfg: &SamplerConfig) -> Result<SampleRun> {
    cfg.validate()?;
    assert!(n > 0);
    let mut pairs = Vec::with_capacity(n);
    let mut retries = 0usize;
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
        let mut last_err = None;
        let mut done = false;
        for attempt in 0..=cfg.retry_budget {
            let u: f64 = interior(rng.random());
            let p: f64 = interior(rng.random());
            let slice = HSlice::new(model, u);
            match invert_on_slice(&slice, p, cfg.tolerance, cfg.max_iter) {
                Ok(v) => {
                    retries += attempt;
                    let (a, b) = match &cfg.marginals {
                        None => (u, v),
                        Some(m) => ((m.q1)(u), (m.q2)(v)),
                    };
                    pairs.push((a, b));
                    done = true;
                    break;
                }
                Err(e) => last_err = Some(e),
            }
        }
        if !done {
            return Err(last_err.expect("retry loop ran at least once"));
        }
    }
    Ok(SampleRun { pairs, retries })
}

fn interior(x: f64) -> f64 {
    x.clamp(1e-9, 1.0 - 1e-9)
}
