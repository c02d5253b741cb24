//! The copula hypothesis: positive MLP, monotone trapezoid transforms, logit
//! link, and a bivariate CDF head, plus the FLEX variant and mixtures.

pub mod bvn;
pub(crate) mod engine;
pub mod head;
pub mod mlp;
pub mod norm;
mod serialize;

pub use bvn::{bvn_cdf, bvn_pdf};
pub use head::{HeadKind, HeadParams};
pub use mlp::{PositiveMlp, DEFAULT_WIDTHS};
pub use norm::{norm_cdf, norm_pdf, norm_quantile};

use crate::diff_engine::{InputDerivs, Layout, ParamVector, Segment};
use crate::error::{Error, Result};

/// Number of trapezoid intervals on each integration axis.
pub const DEFAULT_GRID_SIZE: usize = 200;

/// Integration axis selector for [`transform_t`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Integrate over the first input; the second stays fixed.
    U,
    /// Integrate over the second input; the first stays fixed.
    V,
}

/// The 2-Cats hypothesis: `H(u,v) = G(z(t_v(u)), z(t_u(v)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoCatsModel {
    pub(crate) mlp: PositiveMlp,
    pub(crate) head: HeadParams,
    pub(crate) grid_size: usize,
}

impl TwoCatsModel {
    /// Fresh model with the default architecture and grid.
    pub fn init(kind: HeadKind, seed: u64) -> Self {
        Self::with_widths(&DEFAULT_WIDTHS, kind, seed, DEFAULT_GRID_SIZE)
    }

    pub fn with_widths(widths: &[usize], kind: HeadKind, seed: u64, grid_size: usize) -> Self {
        assert!(grid_size >= 2);
        TwoCatsModel {
            mlp: PositiveMlp::init(widths, seed),
            head: HeadParams::init(kind),
            grid_size,
        }
    }

    pub fn head_kind(&self) -> HeadKind {
        self.head.kind
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    /// Grid refinement is exposed for quadrature-convergence checks only.
    pub fn set_grid_size(&mut self, grid_size: usize) {
        assert!(grid_size >= 2);
        self.grid_size = grid_size;
    }

    pub fn mlp(&self) -> &PositiveMlp {
        &self.mlp
    }

    pub fn n_params(&self) -> usize {
        self.mlp.n_params() + self.head.raw.len()
    }

    /// Flat layout: per layer the weight matrix then its bias, head last.
    pub fn layout(&self) -> Layout {
        let mut segments = Vec::new();
        for (l, (w, b)) in self.mlp.weights.iter().zip(&self.mlp.biases).enumerate() {
            segments.push(Segment {
                name: format!("w{l}"),
                rows: w.nrows(),
                cols: w.ncols(),
            });
            segments.push(Segment {
                name: format!("b{l}"),
                rows: b.len(),
                cols: 1,
            });
        }
        segments.push(Segment {
            name: "head".into(),
            rows: self.head.raw.len(),
            cols: 1,
        });
        Layout::new(segments)
    }

    pub fn to_param_vector(&self) -> ParamVector {
        let mut values = Vec::with_capacity(self.n_params());
        for (w, b) in self.mlp.weights.iter().zip(&self.mlp.biases) {
            values.extend(w.iter());
            values.extend(b.iter());
        }
        values.extend(&self.head.raw);
        ParamVector::new(self.layout(), values).expect("layout matches by construction")
    }

    /// Overwrite all parameters from a flat slice in layout order.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Contract(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                flat.len()
            )));
        }
        let mut off = 0;
        for (w, b) in self.mlp.weights.iter_mut().zip(&mut self.mlp.biases) {
            for x in w.iter_mut() {
                *x = flat[off];
                off += 1;
            }
            for x in b.iter_mut() {
                *x = flat[off];
                off += 1;
            }
        }
        self.head.raw.copy_from_slice(&flat[off..]);
        Ok(())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        serialize::save(self, path)
    }

    pub fn load(path: &std::path::Path) -> Result<TwoCatsModel> {
        serialize::load(path)
    }
}

/// Monotone transform `t(target) = ∫₀^target m dx / ∫₀¹ m dx` along one axis
/// with the other input fixed, by cumulative trapezoid integration over the
/// base knots with the target inserted order-preservingly.
pub fn transform_t(mlp: &PositiveMlp, target: f64, fixed: f64, axis: Axis) -> f64 {
    let integrand = |x: f64| match axis {
        Axis::U => mlp.eval(x, fixed),
        Axis::V => mlp.eval(fixed, x),
    };
    trapezoid_ratio(integrand, DEFAULT_GRID_SIZE, target)
}

/// Core of [`transform_t`] over an arbitrary positive integrand.
pub fn trapezoid_ratio<F: Fn(f64) -> f64>(integrand: F, intervals: usize, target: f64) -> f64 {
    assert!((0.0..=1.0).contains(&target), "target must be in [0,1]");
    if target <= 0.0 {
        return 0.0;
    }
    if target >= 1.0 {
        return 1.0;
    }
    let g = intervals;
    let h = 1.0 / g as f64;
    let k = ((target * g as f64).floor() as usize).min(g - 1);
    let vals: Vec<f64> = (0..=g).map(|j| integrand(j as f64 / g as f64)).collect();
    let m_t = integrand(target);
    let mut pre = 0.0;
    let mut all = 0.0;
    for j in 0..g {
        all += 0.5 * h * (vals[j] + vals[j + 1]);
        if j + 1 == k {
            pre = all;
        }
    }
    if k == 0 {
        pre = 0.0;
    }
    let xk = k as f64 / g as f64;
    let xk1 = (k + 1) as f64 / g as f64;
    let num = pre + 0.5 * (target - xk) * (vals[k] + m_t);
    let den = all - 0.5 * h * (vals[k] + vals[k + 1])
        + 0.5 * (target - xk) * (vals[k] + m_t)
        + 0.5 * (xk1 - target) * (m_t + vals[k + 1]);
    num / den
}

/// Copula hypothesis value. The zero boundaries are exact (the logit of a
/// zero transform is `-inf`, and any CDF vanishes there); everything else is
/// evaluated through the clamped interior path.
pub fn h_value(model: &TwoCatsModel, u: f64, v: f64) -> f64 {
    assert!((0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v));
    if u == 0.0 || v == 0.0 {
        return 0.0;
    }
    engine::point_jet(model, u, v, engine::EvalMode::Value).val
}

/// `H` at many points.
pub fn h_values(model: &TwoCatsModel, pts: &[(f64, f64)]) -> Vec<f64> {
    engine::h_values(model, pts)
}

/// `H` on the grid `us × vs`.
pub fn h_grid(model: &TwoCatsModel, us: &[f64], vs: &[f64]) -> Vec<Vec<f64>> {
    engine::h_grid_values(model, us, vs)
}

/// Value plus exact first and second input derivatives at `(u, v)`.
pub fn h_derivs(model: &TwoCatsModel, u: f64, v: f64) -> Result<InputDerivs> {
    engine::h_derivs_full(model, u, v)
}

pub(crate) use engine::{HSlice, PointSeeds, TrainPass};

/// Value and first/mixed derivatives for training paths. The pure second
/// derivatives are not evaluated on this fast path and are set to NaN.
pub(crate) fn h_train_jet(model: &TwoCatsModel, u: f64, v: f64) -> InputDerivs {
    let j = engine::point_jet(model, u, v, engine::EvalMode::Train4);
    InputDerivs {
        value: j.val,
        d_u: j.du,
        d_v: j.dv,
        d_uv: j.duv,
        d_uu: f64::NAN,
        d_vv: f64::NAN,
    }
}

/// Boundary diagnostics: `(H(u,1), dH/du)` per `u` and `(H(1,v), dH/dv)`
/// per `v`, on the clamped-logit path used by the boundary constraints.
pub fn h_boundary_values(
    model: &TwoCatsModel,
    us: &[f64],
    vs: &[f64],
) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    engine::boundary_values(model, us, vs)
}

/// FLEX variant: unnormalized integral transforms fed to the head directly,
/// with no logit link. Monotone and 2-increasing, but the marginals carry no
/// uniformity guarantee.
pub fn flex_h(model: &TwoCatsModel, u: f64, v: f64) -> f64 {
    assert!((0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v));
    let g = model.grid_size;
    let raw_u = {
        let f = |x: f64| model.mlp.eval(x, v);
        raw_integral(f, g, u)
    };
    let raw_v = {
        let f = |y: f64| model.mlp.eval(u, y);
        raw_integral(f, g, v)
    };
    head::head_cdf(&model.head.constrained_f64(), raw_u, raw_v)
}

/// Cumulative trapezoid integral from 0 to `target` (no normalization).
fn raw_integral<F: Fn(f64) -> f64>(integrand: F, intervals: usize, target: f64) -> f64 {
    if target <= 0.0 {
        return 0.0;
    }
    let g = intervals;
    let k = ((target * g as f64).floor() as usize).min(g - 1);
    let mut acc = 0.0;
    let mut prev = integrand(0.0);
    for j in 1..=k {
        let x = j as f64 / g as f64;
        let cur = integrand(x);
        acc += 0.5 * (cur + prev) / g as f64;
        prev = cur;
    }
    let m_t = integrand(target);
    acc + 0.5 * (target - k as f64 / g as f64) * (prev + m_t)
}

/// Convex mixture of hypotheses with softmax weights.
#[derive(Clone, Debug)]
pub struct MixtureTwoCats {
    components: Vec<TwoCatsModel>,
    logits: Vec<f64>,
}

impl MixtureTwoCats {
    pub fn new(components: Vec<TwoCatsModel>, logits: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Contract(
                "mixture needs at least one component".into(),
            ));
        }
        if components.len() != logits.len() {
            return Err(Error::Contract(format!(
                "{} components but {} mixture logits",
                components.len(),
                logits.len()
            )));
        }
        Ok(MixtureTwoCats { components, logits })
    }

    pub fn weights(&self) -> Vec<f64> {
        let max = self
            .logits
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = self.logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.iter().map(|e| e / total).collect()
    }

    pub fn h(&self, u: f64, v: f64) -> f64 {
        let w = self.weights();
        self.components
            .iter()
            .zip(w.iter())
            .map(|(m, wi)| wi * h_value(m, u, v))
            .sum()
    }
}
