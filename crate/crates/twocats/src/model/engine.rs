//! Batched model evaluation and the fused training pass.
//!
//! Evaluating `H(u, v)` needs the positive network at every base knot of the
//! integration grid along both axes. Those rows share one tangent direction
//! apiece, so the heavy work is a value+tangent batch through the layers,
//! done as matrix products; only the single inserted point `(u, v)` carries a
//! full second-order jet. The per-point combiner (trapezoid sums, the ratio,
//! logit link, head CDF) is cheap and generic over [`Scalar`], so the same
//! code runs on `f64` for evaluation and on tape variables when parameter
//! gradients are required. Network-layer gradients use closed-form layer
//! rules; the tape never sees the layers themselves.

use ndarray::{Array1, Array2};

use super::head::{head_jet, HeadOn, HeadScalar};
use super::mlp::{elu1, elu1_d1, elu1_d2, elu1_d3, PositiveMlp};
use super::TwoCatsModel;
use crate::diff_engine::{InputDerivs, Jet2, Rv, Scalar, Tape, INPUT_CLAMP};
use crate::error::{Error, Result};

/// Interior clamp applied to the monotone transforms before the logit link.
pub(crate) const T_CLAMP: f64 = 1e-6;

pub(crate) fn knots(grid_size: usize) -> Vec<f64> {
    (0..=grid_size)
        .map(|j| j as f64 / grid_size as f64)
        .collect()
}

// ---------------------------------------------------------------------------
// Value + tangent batches through the network
// ---------------------------------------------------------------------------

/// Stored activations of one value+tangent batch, for the backward pass.
pub(crate) struct BatchTrace {
    input_v: Array2<f64>,
    input_t: Array2<f64>,
    pre_v: Vec<Array2<f64>>,
    pre_t: Vec<Array2<f64>>,
    post_v: Vec<Array2<f64>>,
    post_t: Vec<Array2<f64>>,
}

/// Forward a batch of rows carrying a value and one directional tangent.
///
/// `inputs` is (rows, 2); `tangents` holds the per-row seed of the tangent
/// channel (one-hot of whichever input coordinate the row differentiates).
fn forward_vt(
    mlp: &PositiveMlp,
    inputs: Array2<f64>,
    tangents: Array2<f64>,
    store: bool,
) -> (Vec<f64>, Vec<f64>, Option<BatchTrace>) {
    let rows = inputs.nrows();
    let mut zv = inputs.clone();
    let mut zt = tangents.clone();
    let mut trace = store.then(|| BatchTrace {
        input_v: inputs,
        input_t: tangents,
        pre_v: Vec::new(),
        pre_t: Vec::new(),
        post_v: Vec::new(),
        post_t: Vec::new(),
    });
    for (w, b) in mlp.weights.iter().zip(&mlp.biases) {
        let mut av = zv.dot(&w.t());
        let at = zt.dot(&w.t());
        for mut row in av.rows_mut() {
            row += b;
        }
        let mut pv = av.clone();
        let mut pt = at.clone();
        ndarray::Zip::from(&mut pv).and(&mut pt).for_each(|v, t| {
            let d1 = elu1_d1(*v);
            *t *= d1;
            *v = elu1(*v);
        });
        if let Some(tr) = trace.as_mut() {
            tr.pre_v.push(av);
            tr.pre_t.push(at);
            tr.post_v.push(pv.clone());
            tr.post_t.push(pt.clone());
        }
        zv = pv;
        zt = pt;
    }
    let out_v = (0..rows).map(|r| zv[[r, 0]]).collect();
    let out_t = (0..rows).map(|r| zt[[r, 0]]).collect();
    (out_v, out_t, trace)
}

/// Per-layer parameter gradients.
pub(crate) struct MlpGrad {
    pub dw: Vec<Array2<f64>>,
    pub db: Vec<Array1<f64>>,
}

impl MlpGrad {
    pub(crate) fn zeros(mlp: &PositiveMlp) -> Self {
        MlpGrad {
            dw: mlp.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            db: mlp.biases.iter().map(|b| Array1::zeros(b.dim())).collect(),
        }
    }
}

/// Reverse pass of [`forward_vt`], accumulating parameter gradients.
fn backward_vt(
    mlp: &PositiveMlp,
    trace: &BatchTrace,
    adj_out_v: &[f64],
    adj_out_t: &[f64],
    grad: &mut MlpGrad,
) {
    let rows = adj_out_v.len();
    let n_layers = mlp.weights.len();
    let mut abar_v = Array2::zeros((rows, 1));
    let mut abar_t = Array2::zeros((rows, 1));
    for r in 0..rows {
        abar_v[[r, 0]] = adj_out_v[r];
        abar_t[[r, 0]] = adj_out_t[r];
    }
    for l in (0..n_layers).rev() {
        // abar_* currently hold adjoints of layer l's POST-activations.
        let pre_v = &trace.pre_v[l];
        let pre_t = &trace.pre_t[l];
        ndarray::Zip::from(&mut abar_v)
            .and(&mut abar_t)
            .and(pre_v)
            .and(pre_t)
            .for_each(|zv, zt, &pv, &pt| {
                let d1 = elu1_d1(pv);
                let d2 = elu1_d2(pv);
                let av = *zv * d1 + *zt * d2 * pt;
                let at = *zt * d1;
                *zv = av;
                *zt = at;
            });
        let (prev_v, prev_t) = if l == 0 {
            (&trace.input_v, &trace.input_t)
        } else {
            (&trace.post_v[l - 1], &trace.post_t[l - 1])
        };
        grad.dw[l] += &(abar_v.t().dot(prev_v) + abar_t.t().dot(prev_t));
        grad.db[l] += &abar_v.sum_axis(ndarray::Axis(0));
        let w = &mlp.weights[l];
        abar_v = abar_v.dot(w);
        abar_t = abar_t.dot(w);
    }
}

// ---------------------------------------------------------------------------
// Inserted point: full jet forward with storage, plus backward
// ---------------------------------------------------------------------------

pub(crate) struct JetTrace {
    pre: Vec<Vec<Jet2<f64>>>,
    post: Vec<Vec<Jet2<f64>>>,
}

fn forward_jet_stored(mlp: &PositiveMlp, x: Jet2<f64>, y: Jet2<f64>) -> (Jet2<f64>, JetTrace) {
    let mut trace = JetTrace {
        pre: Vec::new(),
        post: Vec::new(),
    };
    let mut acts = vec![x, y];
    for (w, b) in mlp.weights.iter().zip(&mlp.biases) {
        let mut pre = Vec::with_capacity(w.nrows());
        for i in 0..w.nrows() {
            let mut a = Jet2::constant(b[i]);
            for (j, act) in acts.iter().enumerate() {
                a = a + act.scale(w[[i, j]]);
            }
            pre.push(a);
        }
        let post: Vec<Jet2<f64>> = pre.iter().map(|a| a.elu1()).collect();
        trace.pre.push(pre);
        trace.post.push(post.clone());
        acts = post;
    }
    (acts[0], trace)
}

fn zero_jet() -> Jet2<f64> {
    Jet2::constant(0.0)
}

/// Backward through the jet activation: `post = elu1(pre)` componentwise in
/// the jet algebra. `adj` carries adjoints of the post components.
fn jet_act_backward(adj: &Jet2<f64>, pre: &Jet2<f64>) -> Jet2<f64> {
    let d1 = elu1_d1(pre.val);
    let d2 = elu1_d2(pre.val);
    let d3 = elu1_d3(pre.val);
    Jet2 {
        val: adj.val * d1
            + d2 * (adj.du * pre.du + adj.dv * pre.dv)
            + adj.duv * (d3 * pre.du * pre.dv + d2 * pre.duv)
            + adj.duu * (d3 * pre.du * pre.du + d2 * pre.duu)
            + adj.dvv * (d3 * pre.dv * pre.dv + d2 * pre.dvv),
        du: adj.du * d1 + adj.duv * d2 * pre.dv + 2.0 * adj.duu * d2 * pre.du,
        dv: adj.dv * d1 + adj.duv * d2 * pre.du + 2.0 * adj.dvv * d2 * pre.dv,
        duv: adj.duv * d1,
        duu: adj.duu * d1,
        dvv: adj.dvv * d1,
    }
}

fn jet_dot(a: &Jet2<f64>, b: &Jet2<f64>) -> f64 {
    a.val * b.val + a.du * b.du + a.dv * b.dv + a.duv * b.duv + a.duu * b.duu + a.dvv * b.dvv
}

fn jet_axpy(acc: &mut Jet2<f64>, c: f64, x: &Jet2<f64>) {
    acc.val += c * x.val;
    acc.du += c * x.du;
    acc.dv += c * x.dv;
    acc.duv += c * x.duv;
    acc.duu += c * x.duu;
    acc.dvv += c * x.dvv;
}

fn backward_jet(
    mlp: &PositiveMlp,
    trace: &JetTrace,
    inputs: (Jet2<f64>, Jet2<f64>),
    out_adj: Jet2<f64>,
    grad: &mut MlpGrad,
) {
    let n_layers = mlp.weights.len();
    let mut post_adj = vec![out_adj];
    for l in (0..n_layers).rev() {
        let w = &mlp.weights[l];
        let pre = &trace.pre[l];
        let pre_adj: Vec<Jet2<f64>> = post_adj
            .iter()
            .zip(pre.iter())
            .map(|(a, p)| jet_act_backward(a, p))
            .collect();
        let prev: Vec<Jet2<f64>> = if l == 0 {
            vec![inputs.0, inputs.1]
        } else {
            trace.post[l - 1].clone()
        };
        for (i, ai) in pre_adj.iter().enumerate() {
            grad.db[l][i] += ai.val;
            for (j, pj) in prev.iter().enumerate() {
                grad.dw[l][[i, j]] += jet_dot(ai, pj);
            }
        }
        let mut prev_adj = vec![zero_jet(); prev.len()];
        for (i, ai) in pre_adj.iter().enumerate() {
            for (j, pa) in prev_adj.iter_mut().enumerate() {
                jet_axpy(pa, w[[i, j]], ai);
            }
        }
        post_adj = prev_adj;
    }
}

// ---------------------------------------------------------------------------
// Combiner: trapezoid transforms, logit link, head — generic over Scalar
// ---------------------------------------------------------------------------

/// Network values along one integration axis at the base knots.
pub(crate) struct DirGrid<'a, S> {
    pub val: &'a [S],
    /// Derivative with respect to the *other* (fixed) coordinate.
    pub tan: Option<&'a [S]>,
    /// Second derivative with respect to the fixed coordinate.
    pub tan2: Option<&'a [S]>,
}

fn swap_uv<S: Scalar>(j: Jet2<S>) -> Jet2<S> {
    Jet2 {
        val: j.val,
        du: j.dv,
        dv: j.du,
        duv: j.duv,
        duu: j.dvv,
        dvv: j.duu,
    }
}

/// Monotone transform along the first jet variable.
///
/// `t(u) = ∫₀ᵘ m(x, v) dx / ∫₀¹ m(x, v) dx`, both integrals by the trapezoid
/// rule over the base knots with `u` inserted order-preservingly. The result
/// is the exact jet of that discretization. `target` must be interior; exact
/// 0/1 targets are handled by the callers as constant jets.
fn t_dir<S: Scalar>(kn: &[f64], grid: &DirGrid<'_, S>, m_ins: &Jet2<S>, target: f64) -> Jet2<S> {
    let g = kn.len() - 1;
    let h = 1.0 / g as f64;
    let k = ((target * g as f64).floor() as usize).min(g - 1);
    let zero = S::from_f64(0.0);

    // Single sweep: trapezoid prefix at knot k, then the full integral.
    let sum_channel = |m: &[S]| -> (S, S) {
        let mut acc = zero;
        let mut pre = zero;
        for j in 0..g {
            acc = acc + (m[j] + m[j + 1]) * S::from_f64(h * 0.5);
            if j + 1 == k {
                pre = acc;
            }
        }
        if k == 0 {
            pre = zero;
        }
        (pre, acc)
    };

    let (pre_v, all_v) = sum_channel(grid.val);
    let (pre_t, all_t) = match grid.tan {
        Some(t) => sum_channel(t),
        None => (zero, zero),
    };
    let (pre_t2, all_t2) = match grid.tan2 {
        Some(t) => sum_channel(t),
        None => (zero, zero),
    };

    let wa = 0.5 * (target - kn[k]);
    let wb = 0.5 * (kn[k + 1] - target);
    let mk = grid.val[k];
    let mk1 = grid.val[k + 1];
    let (tk, tk1) = match grid.tan {
        Some(t) => (t[k], t[k + 1]),
        None => (zero, zero),
    };
    let (t2k, t2k1) = match grid.tan2 {
        Some(t) => (t[k], t[k + 1]),
        None => (zero, zero),
    };
    let half = S::from_f64(0.5);
    let sa = S::from_f64(wa);
    let sb = S::from_f64(wb);

    let num = Jet2 {
        val: pre_v + sa * (mk + m_ins.val),
        du: half * (mk + m_ins.val) + sa * m_ins.du,
        dv: pre_t + sa * (tk + m_ins.dv),
        duv: half * (tk + m_ins.dv) + sa * m_ins.duv,
        duu: m_ins.du + sa * m_ins.duu,
        dvv: pre_t2 + sa * (t2k + m_ins.dvv),
    };
    let den = Jet2 {
        val: all_v - S::from_f64(h * 0.5) * (mk + mk1) + sa * (mk + m_ins.val)
            + sb * (m_ins.val + mk1),
        du: half * (mk - mk1) + (sa + sb) * m_ins.du,
        dv: all_t - S::from_f64(h * 0.5) * (tk + tk1) + sa * (tk + m_ins.dv)
            + sb * (m_ins.dv + tk1),
        duv: half * (tk - tk1) + (sa + sb) * m_ins.duv,
        duu: (sa + sb) * m_ins.duu,
        dvv: all_t2 - S::from_f64(h * 0.5) * (t2k + t2k1) + sa * (t2k + m_ins.dvv)
            + sb * (m_ins.dvv + t2k1),
    };
    num / den
}

/// Clamp the transform into the open interval, then apply the logit.
fn clamp_logit<S: Scalar>(t: Jet2<S>) -> Jet2<S> {
    t.clamp_value(T_CLAMP, 1.0 - T_CLAMP).logit()
}

fn const_jet<S: Scalar>(x: f64) -> Jet2<S> {
    Jet2::constant(S::from_f64(x))
}

/// Assemble the copula hypothesis jet from grid evaluations.
///
/// `xg` holds `m(x_j, v)` with tangent `∂/∂v`; `yg` holds `m(u, y_j)` with
/// tangent `∂/∂u`; `m_ins` is the full jet of `m(u, v)`.
#[allow(clippy::too_many_arguments)]
fn h_from_grids<S: HeadScalar>(
    kn: &[f64],
    xg: &DirGrid<'_, S>,
    yg: &DirGrid<'_, S>,
    m_ins: &Jet2<S>,
    u: f64,
    v: f64,
    head: &HeadOn<S>,
) -> Jet2<S> {
    let t_v = t_dir(kn, xg, m_ins, u);
    let t_u = swap_uv(t_dir(kn, yg, &swap_uv(*m_ins), v));
    let z_u = clamp_logit(t_v);
    let z_v = clamp_logit(t_u);
    head_jet(head, z_u, z_v)
}

/// `H(u, 1)` and its `u`-derivative from the shared `v = 1` grid.
///
/// The second transform is identically 1 there (its numerator equals its
/// denominator for every `u`), so only the first carries derivatives; the
/// boundary goes through the clamped logit, keeping Eq-style derivatives
/// finite. Only the returned (value, d/du) pair is meaningful.
fn h_boundary<S: HeadScalar>(
    kn: &[f64],
    grid1: &DirGrid<'_, S>,
    m_b: &Jet2<S>,
    target: f64,
    head: &HeadOn<S>,
    u_side: bool,
) -> (S, S) {
    let t = t_dir(kn, grid1, m_b, target);
    let z = clamp_logit(t);
    let z_one = clamp_logit(const_jet::<S>(1.0));
    if u_side {
        let h = head_jet(head, z, z_one);
        (h.val, h.du)
    } else {
        // z was built along the "first variable" axis; swapped it carries
        // d/dv, which is what the (1, v) boundary term needs.
        let h = head_jet(head, z_one, swap_uv(z));
        (h.val, h.dv)
    }
}

// ---------------------------------------------------------------------------
// f64 evaluation entry points
// ---------------------------------------------------------------------------

#[derive(Copy, Clone, PartialEq, Eq)]
pub(crate) enum EvalMode {
    Value,
    Train4,
    Full6,
}

fn grid_inputs(u: f64, v: f64, kn: &[f64]) -> (Array2<f64>, Array2<f64>) {
    let g = kn.len();
    let rows = 2 * g;
    let mut inputs = Array2::zeros((rows, 2));
    let mut tangents = Array2::zeros((rows, 2));
    for (j, &x) in kn.iter().enumerate() {
        inputs[[j, 0]] = x;
        inputs[[j, 1]] = v;
        tangents[[j, 1]] = 1.0;
        inputs[[g + j, 0]] = u;
        inputs[[g + j, 1]] = x;
        tangents[[g + j, 0]] = 1.0;
    }
    (inputs, tangents)
}

/// Jet of `H` at one interior point, `f64` path.
pub(crate) fn point_jet(model: &TwoCatsModel, u: f64, v: f64, mode: EvalMode) -> Jet2<f64> {
    let kn = knots(model.grid_size);
    let g = kn.len();
    let u = u.clamp(INPUT_CLAMP, 1.0 - INPUT_CLAMP);
    let v = v.clamp(INPUT_CLAMP, 1.0 - INPUT_CLAMP);
    let (inputs, tangents) = grid_inputs(u, v, &kn);
    let (vals, tans, _) = forward_vt(&model.mlp, inputs, tangents, false);
    let m_ins = model
        .mlp
        .eval_jet(Jet2::<f64>::var_u(u), Jet2::<f64>::var_v(v));

    let (tan2x, tan2y) = if mode == EvalMode::Full6 {
        // Second tangent channel via jet evaluation along each grid.
        let mut t2x = Vec::with_capacity(g);
        let mut t2y = Vec::with_capacity(g);
        for (j, &x) in kn.iter().enumerate() {
            let jx = model
                .mlp
                .eval_jet(Jet2::<f64>::constant(x), Jet2::<f64>::var_v(v));
            t2x.push(jx.dvv);
            let jy = model
                .mlp
                .eval_jet(Jet2::<f64>::var_u(u), Jet2::<f64>::constant(kn[j]));
            t2y.push(jy.duu);
        }
        (Some(t2x), Some(t2y))
    } else {
        (None, None)
    };

    let want_tan = mode != EvalMode::Value;
    let xg = DirGrid {
        val: &vals[..g],
        tan: want_tan.then_some(&tans[..g]),
        tan2: tan2x.as_deref(),
    };
    let yg = DirGrid {
        val: &vals[g..],
        tan: want_tan.then_some(&tans[g..]),
        tan2: tan2y.as_deref(),
    };
    let head = model.head.constrained_f64();
    h_from_grids(&kn, &xg, &yg, &m_ins, u, v, &head)
}

/// Full value/gradient/Hessian of `H` at a point.
pub(crate) fn h_derivs_full(model: &TwoCatsModel, u: f64, v: f64) -> Result<InputDerivs> {
    let j = point_jet(model, u, v, EvalMode::Full6);
    if !j.is_finite() {
        return Err(non_finite_diagnosis(model, u, v));
    }
    Ok(InputDerivs::from_jet(&j))
}

/// Locate which layer produced a non-finite value, for the error message.
fn non_finite_diagnosis(model: &TwoCatsModel, u: f64, v: f64) -> Error {
    let mut acts = vec![u, v];
    for (l, (w, b)) in model.mlp.weights.iter().zip(&model.mlp.biases).enumerate() {
        let mut next = Vec::with_capacity(w.nrows());
        for i in 0..w.nrows() {
            let mut a = b[i];
            for j in 0..w.ncols() {
                a += w[[i, j]] * acts[j];
            }
            next.push(elu1(a));
        }
        if next.iter().any(|x| !x.is_finite()) {
            return Error::Numeric(format!(
                "non-finite activation in layer {l} evaluating m({u}, {v})"
            ));
        }
        acts = next;
    }
    Error::Numeric(format!("non-finite result evaluating H({u}, {v})"))
}

/// `H` values at many points (value channel only).
pub(crate) fn h_values(model: &TwoCatsModel, pts: &[(f64, f64)]) -> Vec<f64> {
    pts.iter()
        .map(|&(u, v)| {
            if u <= 0.0 || v <= 0.0 {
                0.0
            } else {
                point_jet(model, u, v, EvalMode::Value).val
            }
        })
        .collect()
}

/// Boundary values `H(u_i, 1)` with d/du, and `H(1, v_i)` with d/dv.
pub(crate) fn boundary_values(
    model: &TwoCatsModel,
    us: &[f64],
    vs: &[f64],
) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    let kn = knots(model.grid_size);
    let g = kn.len();
    let mut inputs = Array2::zeros((2 * g, 2));
    let tangents = Array2::zeros((2 * g, 2));
    for (j, &x) in kn.iter().enumerate() {
        inputs[[j, 0]] = x;
        inputs[[j, 1]] = 1.0;
        inputs[[g + j, 0]] = 1.0;
        inputs[[g + j, 1]] = x;
    }
    let (vals, _, _) = forward_vt(&model.mlp, inputs, tangents, false);
    let head = model.head.constrained_f64();
    let g1x = DirGrid {
        val: &vals[..g],
        tan: None,
        tan2: None,
    };
    let g1y = DirGrid {
        val: &vals[g..],
        tan: None,
        tan2: None,
    };
    let bu = us
        .iter()
        .map(|&u| {
            let uc = u.clamp(INPUT_CLAMP, 1.0 - INPUT_CLAMP);
            let m_b = model
                .mlp
                .eval_jet(Jet2::<f64>::var_u(uc), Jet2::<f64>::constant(1.0));
            h_boundary(&kn, &g1x, &m_b, uc, &head, true)
        })
        .collect();
    let bv = vs
        .iter()
        .map(|&v| {
            let vc = v.clamp(INPUT_CLAMP, 1.0 - INPUT_CLAMP);
            let m_b = model
                .mlp
                .eval_jet(Jet2::<f64>::constant(1.0), Jet2::<f64>::var_v(vc));
            // Orient along the integration axis: first variable is v there.
            h_boundary(&kn, &g1y, &swap_uv(m_b), vc, &head, false)
        })
        .collect();
    (bu, bv)
}

/// `H` on a grid `us × vs`, batched so each axis slice shares its knot rows.
pub(crate) fn h_grid_values(model: &TwoCatsModel, us: &[f64], vs: &[f64]) -> Vec<Vec<f64>> {
    let kn = knots(model.grid_size);
    let g = kn.len();
    let head = model.head.constrained_f64();
    let clamped =
        |x: f64| x.clamp(INPUT_CLAMP, 1.0 - INPUT_CLAMP);

    // t_v(u_i) for every v_j: one knot batch per v.
    let mut t1 = vec![vec![0.0; vs.len()]; us.len()];
    for (jv, &v) in vs.iter().enumerate() {
        let vc = clamped(v);
        let mut inputs = Array2::zeros((g + us.len(), 2));
        for (j, &x) in kn.iter().enumerate() {
            inputs[[j, 0]] = x;
            inputs[[j, 1]] = vc;
        }
        for (i, &u) in us.iter().enumerate() {
            inputs[[g + i, 0]] = clamped(u);
            inputs[[g + i, 1]] = vc;
        }
        let tangents = Array2::zeros((g + us.len(), 2));
        let (vals, _, _) = forward_vt(&model.mlp, inputs, tangents, false);
        let grid = DirGrid {
            val: &vals[..g],
            tan: None,
            tan2: None,
        };
        for (i, &u) in us.iter().enumerate() {
            let m_ins = Jet2::constant(vals[g + i]);
            t1[i][jv] = t_dir(&kn, &grid, &m_ins, clamped(u)).val;
        }
    }
    // t_u(v_j) for every u_i.
    let mut t2 = vec![vec![0.0; vs.len()]; us.len()];
    for (iu, &u) in us.iter().enumerate() {
        let uc = clamped(u);
        let mut inputs = Array2::zeros((g + vs.len(), 2));
        for (j, &y) in kn.iter().enumerate() {
            inputs[[j, 0]] = uc;
            inputs[[j, 1]] = y;
        }
        for (j, &v) in vs.iter().enumerate() {
            inputs[[g + j, 0]] = uc;
            inputs[[g + j, 1]] = clamped(v);
        }
        let tangents = Array2::zeros((g + vs.len(), 2));
        let (vals, _, _) = forward_vt(&model.mlp, inputs, tangents, false);
        let grid = DirGrid {
            val: &vals[..g],
            tan: None,
            tan2: None,
        };
        for (j, &v) in vs.iter().enumerate() {
            let m_ins = Jet2::constant(vals[g + j]);
            t2[iu][j] = t_dir(&kn, &grid, &m_ins, clamped(v)).val;
        }
    }
    let logit = |t: f64| {
        let t = t.clamp(T_CLAMP, 1.0 - T_CLAMP);
        t.ln() - (1.0 - t).ln()
    };
    us.iter()
        .enumerate()
        .map(|(i, &u)| {
            vs.iter()
                .enumerate()
                .map(|(j, &v)| {
                    if u <= 0.0 || v <= 0.0 {
                        0.0
                    } else {
                        super::head::head_cdf(&head, logit(t1[i][j]), logit(t2[i][j]))
                    }
                })
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Fused training pass
// ---------------------------------------------------------------------------

/// Values the training loop needs from one point's forward pass.
pub(crate) struct PointJets {
    pub h: InputDerivs,
    /// `(H(u,1), dH/du(u,1))`, present when constraints are enabled.
    pub bu: Option<(f64, f64)>,
    /// `(H(1,v), dH/dv(1,v))`.
    pub bv: Option<(f64, f64)>,
}

/// Loss derivative seeds for one point, mirroring [`PointJets`].
#[derive(Default, Copy, Clone)]
pub(crate) struct PointSeeds {
    pub h_val: f64,
    pub h_du: f64,
    pub h_dv: f64,
    pub h_duv: f64,
    pub bu_val: f64,
    pub bu_du: f64,
    pub bv_val: f64,
    pub bv_dv: f64,
}

struct SharedGrid {
    vals: Vec<f64>,
    trace: BatchTrace,
    adj: Vec<f64>,
}

// Output ids are optional: a clamped transform folds a component to a
// constant, and a constant output has zero gradient by construction.
struct JetIds {
    val: Option<u32>,
    du: Option<u32>,
    dv: Option<u32>,
    duv: Option<u32>,
}

struct BoundaryState {
    leaves: (u32, u32), // leaves of the inserted boundary row: (val, deriv)
    grid_leaves: Vec<u32>,
    out: (Option<u32>, Option<u32>),
    trace: JetTrace,
    inputs: (Jet2<f64>, Jet2<f64>),
}

struct PointState {
    trace: BatchTrace,
    jet_trace: JetTrace,
    ins_inputs: (Jet2<f64>, Jet2<f64>),
    xg_val: Vec<u32>,
    xg_tan: Vec<u32>,
    yg_val: Vec<u32>,
    yg_tan: Vec<u32>,
    ins: [u32; 6],
    head_leaves: Vec<u32>,
    out_h: JetIds,
    bu: Option<BoundaryState>,
    bv: Option<BoundaryState>,
}

/// Streaming loss-gradient pass over data points.
///
/// `forward_point` returns the jet values a loss needs; the caller turns them
/// into seeds (derivatives of its loss with respect to each jet component)
/// and hands them back to `backward_point`, which accumulates parameter
/// gradients. `finish` closes out the shared boundary grids and returns the
/// flat gradient in model layout order.
pub(crate) struct TrainPass<'m> {
    model: &'m TwoCatsModel,
    kn: Vec<f64>,
    constraints: bool,
    tape: Tape,
    grad: MlpGrad,
    head_grad: Vec<f64>,
    g1x: Option<SharedGrid>,
    g1y: Option<SharedGrid>,
    state: Option<PointState>,
}

impl<'m> TrainPass<'m> {
    pub(crate) fn new(model: &'m TwoCatsModel, constraints: bool) -> Self {
        let kn = knots(model.grid_size);
        let g = kn.len();
        let (g1x, g1y) = if constraints {
            let mut ix = Array2::zeros((g, 2));
            let mut iy = Array2::zeros((g, 2));
            for (j, &x) in kn.iter().enumerate() {
                ix[[j, 0]] = x;
                ix[[j, 1]] = 1.0;
                iy[[j, 0]] = 1.0;
                iy[[j, 1]] = x;
            }
            let (vx, _, tx) = forward_vt(&model.mlp, ix, Array2::zeros((g, 2)), true);
            let (vy, _, ty) = forward_vt(&model.mlp, iy, Array2::zeros((g, 2)), true);
            (
                Some(SharedGrid {
                    vals: vx,
                    trace: tx.unwrap(),
                    adj: vec![0.0; g],
                }),
                Some(SharedGrid {
                    vals: vy,
                    trace: ty.unwrap(),
                    adj: vec![0.0; g],
                }),
            )
        } else {
            (None, None)
        };
        TrainPass {
            model,
            kn,
            constraints,
            tape: Tape::new(),
            grad: MlpGrad::zeros(&model.mlp),
            head_grad: vec![0.0; model.head.raw.len()],
            g1x,
            g1y,
            state: None,
        }
    }

    pub(crate) fn forward_point(&mut self, u: f64, v: f64) -> Result<PointJets> {
        let u = u.clamp(INPUT_CLAMP, 1.0 - INPUT_CLAMP);
        let v = v.clamp(INPUT_CLAMP, 1.0 - INPUT_CLAMP);
        let g = self.kn.len();
        let (inputs, tangents) = grid_inputs(u, v, &self.kn);
        let (vals, tans, trace) = forward_vt(&self.model.mlp, inputs, tangents, true);
        let ins_inputs = (Jet2::<f64>::var_u(u), Jet2::<f64>::var_v(v));
        let (m_ins, jet_trace) = forward_jet_stored(&self.model.mlp, ins_inputs.0, ins_inputs.1);

        self.tape.reset();
        let tape = &self.tape;
        let leaf_vec = |xs: &[f64]| -> Vec<u32> {
            xs.iter()
                .map(|&x| tape.leaf(x).node_id().unwrap())
                .collect()
        };
        let xg_val = leaf_vec(&vals[..g]);
        let xg_tan = leaf_vec(&tans[..g]);
        let yg_val = leaf_vec(&vals[g..]);
        let yg_tan = leaf_vec(&tans[g..]);
        let ins_leaves = [
            tape.leaf(m_ins.val).node_id().unwrap(),
            tape.leaf(m_ins.du).node_id().unwrap(),
            tape.leaf(m_ins.dv).node_id().unwrap(),
            tape.leaf(m_ins.duv).node_id().unwrap(),
            tape.leaf(m_ins.duu).node_id().unwrap(),
            tape.leaf(m_ins.dvv).node_id().unwrap(),
        ];
        let head_rv: Vec<Rv<'_>> = self.model.head.raw.iter().map(|&r| tape.leaf(r)).collect();
        let head_leaves: Vec<u32> = head_rv.iter().map(|r| r.node_id().unwrap()).collect();
        let head = self.model.head.constrained(&head_rv);

        let rv = |id: u32| tape.var(id);
        let rv_slice = |ids: &[u32]| -> Vec<Rv<'_>> { ids.iter().map(|&i| rv(i)).collect() };
        let xv = rv_slice(&xg_val);
        let xt = rv_slice(&xg_tan);
        let yv = rv_slice(&yg_val);
        let yt = rv_slice(&yg_tan);
        let m_ins_rv = Jet2 {
            val: rv(ins_leaves[0]),
            du: rv(ins_leaves[1]),
            dv: rv(ins_leaves[2]),
            duv: rv(ins_leaves[3]),
            duu: rv(ins_leaves[4]),
            dvv: rv(ins_leaves[5]),
        };
        let xg = DirGrid {
            val: &xv,
            tan: Some(&xt),
            tan2: None,
        };
        let yg = DirGrid {
            val: &yv,
            tan: Some(&yt),
            tan2: None,
        };
        let h = h_from_grids(&self.kn, &xg, &yg, &m_ins_rv, u, v, &head);
        if !h.is_finite() {
            return Err(non_finite_diagnosis(self.model, u, v));
        }
        let out_h = JetIds {
            val: h.val.node_id(),
            du: h.du.node_id(),
            dv: h.dv.node_id(),
            duv: h.duv.node_id(),
        };

        let mut bu_state = None;
        let mut bv_state = None;
        let mut bu_pair = None;
        let mut bv_pair = None;
        if self.constraints {
            // m(u, 1) with its u-derivative.
            let bx_inputs = (Jet2::<f64>::var_u(u), Jet2::<f64>::constant(1.0));
            let (bx_j, bx_trace) = forward_jet_stored(&self.model.mlp, bx_inputs.0, bx_inputs.1);
            let by_inputs = (Jet2::<f64>::constant(1.0), Jet2::<f64>::var_v(v));
            let (by_j, by_trace) = forward_jet_stored(&self.model.mlp, by_inputs.0, by_inputs.1);

            let g1x_leaves = leaf_vec(&self.g1x.as_ref().unwrap().vals);
            let g1y_leaves = leaf_vec(&self.g1y.as_ref().unwrap().vals);
            let bx_ids = (
                tape.leaf(bx_j.val).node_id().unwrap(),
                tape.leaf(bx_j.du).node_id().unwrap(),
            );
            let by_ids = (
                tape.leaf(by_j.val).node_id().unwrap(),
                tape.leaf(by_j.dv).node_id().unwrap(),
            );
            let g1x_rv = rv_slice(&g1x_leaves);
            let g1y_rv = rv_slice(&g1y_leaves);
            let zero = Rv::from_f64(0.0);
            let mbx = Jet2 {
                val: rv(bx_ids.0),
                du: rv(bx_ids.1),
                dv: zero,
                duv: zero,
                duu: zero,
                dvv: zero,
            };
            let mby_swapped = Jet2 {
                val: rv(by_ids.0),
                du: rv(by_ids.1), // after swap the v-tangent sits in du
                dv: zero,
                duv: zero,
                duu: zero,
                dvv: zero,
            };
            let grid1x = DirGrid {
                val: &g1x_rv,
                tan: None,
                tan2: None,
            };
            let grid1y = DirGrid {
                val: &g1y_rv,
                tan: None,
                tan2: None,
            };
            let (hu, hu_du) = h_boundary(&self.kn, &grid1x, &mbx, u, &head, true);
            let (hv, hv_dv) = h_boundary(&self.kn, &grid1y, &mby_swapped, v, &head, false);
            bu_pair = Some((hu.value(), hu_du.value()));
            bv_pair = Some((hv.value(), hv_dv.value()));
            bu_state = Some(BoundaryState {
                leaves: bx_ids,
                grid_leaves: g1x_leaves,
                out: (hu.node_id(), hu_du.node_id()),
                trace: bx_trace,
                inputs: bx_inputs,
            });
            bv_state = Some(BoundaryState {
                leaves: by_ids,
                grid_leaves: g1y_leaves,
                out: (hv.node_id(), hv_dv.node_id()),
                trace: by_trace,
                inputs: by_inputs,
            });
        }

        let jets = PointJets {
            h: InputDerivs {
                value: h.val.value(),
                d_u: h.du.value(),
                d_v: h.dv.value(),
                d_uv: h.duv.value(),
                d_uu: f64::NAN,
                d_vv: f64::NAN,
            },
            bu: bu_pair,
            bv: bv_pair,
        };
        self.state = Some(PointState {
            trace: trace.unwrap(),
            jet_trace,
            ins_inputs,
            xg_val,
            xg_tan,
            yg_val,
            yg_tan,
            ins: ins_leaves,
            head_leaves,
            out_h,
            bu: bu_state,
            bv: bv_state,
        });
        Ok(jets)
    }

    pub(crate) fn backward_point(&mut self, seeds: &PointSeeds) -> Result<()> {
        let state = self
            .state
            .take()
            .ok_or_else(|| Error::Contract("backward_point without forward_point".into()))?;
        let mut seed_list: Vec<(Rv<'_>, f64)> = Vec::with_capacity(8);
        let mut push_seed = |id: Option<u32>, s: f64| {
            if let Some(id) = id {
                seed_list.push((self.tape.var(id), s));
            }
        };
        push_seed(state.out_h.val, seeds.h_val);
        push_seed(state.out_h.du, seeds.h_du);
        push_seed(state.out_h.dv, seeds.h_dv);
        push_seed(state.out_h.duv, seeds.h_duv);
        if let (Some(bu), Some(bv)) = (&state.bu, &state.bv) {
            push_seed(bu.out.0, seeds.bu_val);
            push_seed(bu.out.1, seeds.bu_du);
            push_seed(bv.out.0, seeds.bv_val);
            push_seed(bv.out.1, seeds.bv_dv);
        }
        let adj = self.tape.reverse(&seed_list);
        let get = |id: u32| adj[id as usize];

        // Grid rows: [x-grid, y-grid] in the same order as forward.
        let g = self.kn.len();
        let mut adj_v = Vec::with_capacity(2 * g);
        let mut adj_t = Vec::with_capacity(2 * g);
        for j in 0..g {
            adj_v.push(get(state.xg_val[j]));
            adj_t.push(get(state.xg_tan[j]));
        }
        for j in 0..g {
            adj_v.push(get(state.yg_val[j]));
            adj_t.push(get(state.yg_tan[j]));
        }
        backward_vt(
            &self.model.mlp,
            &state.trace,
            &adj_v,
            &adj_t,
            &mut self.grad,
        );

        let ins_adj = Jet2 {
            val: get(state.ins[0]),
            du: get(state.ins[1]),
            dv: get(state.ins[2]),
            duv: get(state.ins[3]),
            duu: get(state.ins[4]),
            dvv: get(state.ins[5]),
        };
        backward_jet(
            &self.model.mlp,
            &state.jet_trace,
            state.ins_inputs,
            ins_adj,
            &mut self.grad,
        );

        if let Some(bu) = &state.bu {
            let adj_jet = Jet2 {
                val: get(bu.leaves.0),
                du: get(bu.leaves.1),
                dv: 0.0,
                duv: 0.0,
                duu: 0.0,
                dvv: 0.0,
            };
            backward_jet(&self.model.mlp, &bu.trace, bu.inputs, adj_jet, &mut self.grad);
            let g1x = self.g1x.as_mut().unwrap();
            for (j, leaf) in bu.grid_leaves.iter().enumerate() {
                g1x.adj[j] += get(*leaf);
            }
        }
        if let Some(bv) = &state.bv {
            let adj_jet = Jet2 {
                val: get(bv.leaves.0),
                dv: get(bv.leaves.1),
                du: 0.0,
                duv: 0.0,
                duu: 0.0,
                dvv: 0.0,
            };
            backward_jet(&self.model.mlp, &bv.trace, bv.inputs, adj_jet, &mut self.grad);
            let g1y = self.g1y.as_mut().unwrap();
            for (j, leaf) in bv.grid_leaves.iter().enumerate() {
                g1y.adj[j] += get(*leaf);
            }
        }

        for (i, hg) in self.head_grad.iter_mut().enumerate() {
            *hg += get(state.head_leaves[i]);
        }
        Ok(())
    }

    /// Close out shared boundary grids and return the flat gradient.
    pub(crate) fn finish(mut self) -> Vec<f64> {
        let g = self.kn.len();
        if let Some(g1x) = self.g1x.take() {
            backward_vt(
                &self.model.mlp,
                &g1x.trace,
                &g1x.adj,
                &vec![0.0; g],
                &mut self.grad,
            );
        }
        if let Some(g1y) = self.g1y.take() {
            backward_vt(
                &self.model.mlp,
                &g1y.trace,
                &g1y.adj,
                &vec![0.0; g],
                &mut self.grad,
            );
        }
        let mut flat = Vec::with_capacity(self.model.n_params());
        for (dw, db) in self.grad.dw.iter().zip(&self.grad.db) {
            flat.extend(dw.iter());
            flat.extend(db.iter());
        }
        flat.extend(&self.head_grad);
        flat
    }
}

// ---------------------------------------------------------------------------
// Conditional slice for sampling
// ---------------------------------------------------------------------------

/// Evaluations of `h_u(v) = dH/du` and its `v`-derivative at fixed `u`.
///
/// The grid along the second axis depends only on `u`, so it is evaluated
/// once; each query costs one knot batch along the first axis.
pub(crate) struct HSlice<'m> {
    model: &'m TwoCatsModel,
    kn: Vec<f64>,
    u: f64,
    yg_val: Vec<f64>,
    yg_tan: Vec<f64>,
}

impl<'m> HSlice<'m> {
    pub(crate) fn new(model: &'m TwoCatsModel, u: f64) -> Self {
        let kn = knots(model.grid_size);
        let u = u.clamp(INPUT_CLAMP, 1.0 - INPUT_CLAMP);
        let g = kn.len();
        let mut inputs = Array2::zeros((g, 2));
        let mut tangents = Array2::zeros((g, 2));
        for (j, &y) in kn.iter().enumerate() {
            inputs[[j, 0]] = u;
            inputs[[j, 1]] = y;
            tangents[[j, 0]] = 1.0;
        }
        let (yg_val, yg_tan, _) = forward_vt(&model.mlp, inputs, tangents, false);
        HSlice {
            model,
            kn,
            u,
            yg_val,
            yg_tan,
        }
    }

    /// `(dH/du, d²H/du dv)` at `(u, v)`.
    pub(crate) fn h_and_slope(&self, v: f64) -> (f64, f64) {
        let v = v.clamp(INPUT_CLAMP, 1.0 - INPUT_CLAMP);
        let g = self.kn.len();
        let mut inputs = Array2::zeros((g, 2));
        let mut tangents = Array2::zeros((g, 2));
        for (j, &x) in self.kn.iter().enumerate() {
            inputs[[j, 0]] = x;
            inputs[[j, 1]] = v;
            tangents[[j, 1]] = 1.0;
        }
        let (xv, xt, _) = forward_vt(&self.model.mlp, inputs, tangents, false);
        let m_ins = self
            .model
            .mlp
            .eval_jet(Jet2::<f64>::var_u(self.u), Jet2::<f64>::var_v(v));
        let xg = DirGrid {
            val: &xv,
            tan: Some(&xt),
            tan2: None,
        };
        let yg = DirGrid {
            val: &self.yg_val,
            tan: Some(&self.yg_tan),
            tan2: None,
        };
        let head = self.model.head.constrained_f64();
        let h = h_from_grids(&self.kn, &xg, &yg, &m_ins, self.u, v, &head);
        (h.du, h.duv)
    }
}
