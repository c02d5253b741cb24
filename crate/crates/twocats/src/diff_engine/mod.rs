//! Differentiation contract: exact input derivatives of scalar fields on the
//! unit square, and parameter gradients of scalar losses.
//!
//! Input derivatives come from forward-mode second-order jets ([`Jet2`]);
//! parameter gradients come from a reverse-mode tape ([`Tape`]) or, for the
//! batched network layers, from closed-form layer rules in the model module.
//! Finite differences are only ever used as test oracles, never as the
//! computation scheme.

mod jet;
mod tape;

pub use jet::{sigmoid, softplus, Jet2, Scalar};
pub use tape::{Rv, Tape};

use crate::error::{Error, Result};

/// Interior clamp applied to inputs before the logit link so derivative
/// evaluation never sits exactly on the square's boundary.
pub const INPUT_CLAMP: f64 = 1e-6;

/// Value and input derivatives of a scalar field at a point.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct InputDerivs {
    pub value: f64,
    pub d_u: f64,
    pub d_v: f64,
    pub d_uu: f64,
    pub d_vv: f64,
    pub d_uv: f64,
}

impl InputDerivs {
    pub fn from_jet(j: &Jet2<f64>) -> Self {
        InputDerivs {
            value: j.val,
            d_u: j.du,
            d_v: j.dv,
            d_uu: j.duu,
            d_vv: j.dvv,
            d_uv: j.duv,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.d_u.is_finite()
            && self.d_v.is_finite()
            && self.d_uu.is_finite()
            && self.d_vv.is_finite()
            && self.d_uv.is_finite()
    }
}

/// Evaluate `f` together with its exact gradient and Hessian in the two
/// inputs at `(u, v)`, clamped into the interior.
///
/// The derivatives are those of the discretization `f` actually computes, to
/// machine precision; central finite differences of `f` itself serve as the
/// independent oracle in tests.
pub fn input_hessian<F>(f: F, u: f64, v: f64) -> Result<InputDerivs>
where
    F: Fn(Jet2<f64>, Jet2<f64>) -> Jet2<f64>,
{
    let uc = u.clamp(INPUT_CLAMP, 1.0 - INPUT_CLAMP);
    let vc = v.clamp(INPUT_CLAMP, 1.0 - INPUT_CLAMP);
    let j = f(Jet2::var_u(uc), Jet2::var_v(vc));
    if !j.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite input derivatives at ({uc}, {vc})"
        )));
    }
    Ok(InputDerivs::from_jet(&j))
}

/// Finite-difference estimate of value, gradient, and Hessian of a scalar
/// field — the independent oracle used to verify jet evaluation.
///
/// Central differences at `step`, combined with a half-step pass (Richardson
/// extrapolation) so the oracle's own truncation error is O(step⁴) and stays
/// well below the comparison tolerances even where higher derivatives are
/// large. Never used as a computation scheme.
pub fn fd_input_derivs<F>(f: &F, u: f64, v: f64, step: f64) -> InputDerivs
where
    F: Fn(f64, f64) -> f64,
{
    let at = |h: f64| {
        let d_u = (f(u + h, v) - f(u - h, v)) / (2.0 * h);
        let d_v = (f(u, v + h) - f(u, v - h)) / (2.0 * h);
        let d_uu = (f(u + h, v) - 2.0 * f(u, v) + f(u - h, v)) / (h * h);
        let d_vv = (f(u, v + h) - 2.0 * f(u, v) + f(u, v - h)) / (h * h);
        let d_uv = (f(u + h, v + h) - f(u + h, v - h) - f(u - h, v + h) + f(u - h, v - h))
            / (4.0 * h * h);
        (d_u, d_v, d_uu, d_vv, d_uv)
    };
    let full = at(step);
    let half = at(step / 2.0);
    let rich = |a: f64, b: f64| (4.0 * b - a) / 3.0;
    InputDerivs {
        value: f(u, v),
        d_u: rich(full.0, half.0),
        d_v: rich(full.1, half.1),
        d_uu: rich(full.2, half.2),
        d_vv: rich(full.3, half.3),
        d_uv: rich(full.4, half.4),
    }
}

/// Gradient of a scalar loss with respect to a flat parameter vector via the
/// reverse tape.
///
/// The loss builder receives one tape variable per parameter and must express
/// the loss through [`Scalar`] operations (custom partials can be attached
/// with [`Tape::custom`]).
pub fn grad_params<F>(f: F, theta: &[f64]) -> Result<Vec<f64>>
where
    F: for<'t> Fn(&'t Tape, &[Rv<'t>]) -> Rv<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Rv<'_>> = theta.iter().map(|&x| tape.leaf(x)).collect();
    let loss = f(&tape, &vars);
    if !loss.value().is_finite() {
        return Err(Error::Numeric("non-finite loss value".into()));
    }
    let adj = tape.reverse(&[(loss, 1.0)]);
    let grad: Vec<f64> = vars.iter().map(|v| v.adjoint_in(&adj)).collect();
    for (i, g) in grad.iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient at coordinate {i}"
            )));
        }
    }
    Ok(grad)
}

/// Named, shaped segment of a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Layout descriptor mapping named segments onto a flat array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    segments: Vec<Segment>,
}

impl Layout {
    pub fn new(segments: Vec<Segment>) -> Self {
        Layout { segments }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_len(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }

    /// Byte offset (in elements) and length of a named segment.
    pub fn span(&self, name: &str) -> Option<(usize, usize)> {
        let mut off = 0;
        for s in &self.segments {
            if s.name == name {
                return Some((off, s.len()));
            }
            off += s.len();
        }
        None
    }
}

/// Flat parameter array together with its layout descriptor.
///
/// Flattening a set of shaped segments and unflattening the result is the
/// identity: segment views are disjoint windows into `values`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    layout: Layout,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(layout: Layout) -> Self {
        let n = layout.total_len();
        ParamVector {
            layout,
            values: vec![0.0; n],
        }
    }

    pub fn new(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::Contract(format!(
                "parameter vector length {} does not match layout length {}",
                values.len(),
                layout.total_len()
            )));
        }
        Ok(ParamVector { layout, values })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        let (off, len) = self.layout.span(name)?;
        Some(&self.values[off..off + len])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let (off, len) = self.layout.span(name)?;
        Some(&mut self.values[off..off + len])
    }
}
