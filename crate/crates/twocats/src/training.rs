//! Loss assembly and barrier-scheduled Adam training.
//!
//! The objective is a weighted sum of three Sobolev terms — squared error of
//! `H` against the bivariate ECDF, squared error of its first derivatives
//! against the empirical derivative estimates, and the negative mean log of
//! the mixed second derivative (the pseudo-likelihood) — optionally wrapped
//! in a boundary-constraint barrier: each step minimizes `λ·L + r` with
//! `λ` decaying geometrically, so optimization progressively prioritizes the
//! uniform-marginal requirements.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::empirical::{pseudo_obs, Ecdf2, EmpiricalDerivativeTable, PseudoObservations, RawDataset};
use crate::error::{Error, Result};
use crate::model::{HeadKind, PointSeeds, TrainPass, TwoCatsModel};

/// Mixed second derivatives are floored here before the log.
pub const DENSITY_FLOOR: f64 = 1e-12;

/// Loss weights; the density term is the pivotal one.
#[derive(Copy, Clone, Debug)]
pub struct LossWeights {
    /// Weight of the ECDF value term.
    pub w_cdf: f64,
    /// Weight of the first-derivative (Sobolev) term.
    pub w_deriv: f64,
    /// Weight of the log-density term.
    pub w_density: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_cdf: 0.01,
            w_deriv: 0.5,
            w_density: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.w_cdf < 0.0 || self.w_deriv < 0.0 || self.w_density < 0.0 {
            return Err(Error::Contract("loss weights must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Copy, Clone, Debug)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Geometric barrier schedule: epoch `t` uses `lambda0 * alpha^t`.
#[derive(Copy, Clone, Debug)]
pub struct BarrierSchedule {
    pub lambda0: f64,
    pub alpha: f64,
}

impl Default for BarrierSchedule {
    fn default() -> Self {
        BarrierSchedule {
            lambda0: 1.0,
            alpha: 0.95,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Minibatch size; `None` takes full-batch steps.
    pub batch: Option<usize>,
    pub adam: AdamParams,
    pub lagrangian: Option<BarrierSchedule>,
    pub early_stop: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch: None,
            adam: AdamParams::default(),
            lagrangian: None,
            early_stop: true,
            seed: crate::copula_ref::DEFAULT_SEED,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Contract("epochs must be positive".into()));
        }
        if let Some(b) = self.batch {
            if b == 0 {
                return Err(Error::Contract("batch size must be positive".into()));
            }
        }
        if let Some(l) = &self.lagrangian {
            if !(l.lambda0 > 0.0 && l.lambda0 <= 1.0) {
                return Err(Error::Contract(format!(
                    "lambda0 must lie in (0,1], got {}",
                    l.lambda0
                )));
            }
            if !(l.alpha > 0.0 && l.alpha < 1.0) {
                return Err(Error::Contract(format!(
                    "alpha must lie in (0,1), got {}",
                    l.alpha
                )));
            }
        }
        Ok(())
    }
}

/// Per-epoch record. Losses are the unweighted term values over the full
/// pass; `total` is the stepped objective `λ·(weighted sum) + r`.
#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lambda: f64,
    pub loss_cdf: f64,
    pub loss_deriv: f64,
    pub loss_density: f64,
    pub constraint: f64,
    pub total: f64,
    pub floored_frac: f64,
}

/// Training history. The final row is a loss-only evaluation of the
/// post-training parameters.
#[derive(Clone, Debug, Default)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub warnings: Vec<String>,
}

impl TrainTrace {
    /// Pseudo-log-likelihood of the recorded epoch: `-L^c`.
    pub fn pll(&self, epoch: usize) -> f64 {
        -self.epochs[epoch].loss_density
    }
}

/// Data-derived targets shared by every epoch: ECDF values at the raw rows
/// and the empirical derivative table at the pseudo-observations.
#[derive(Clone, Debug)]
pub struct TrainTargets {
    pub pobs: PseudoObservations,
    pub ecdf_targets: Vec<f64>,
    pub table: EmpiricalDerivativeTable,
}

impl TrainTargets {
    pub fn new(raw: &RawDataset) -> Result<Self> {
        let pobs = pseudo_obs(raw);
        let ecdf = Ecdf2::new(raw.rows())?;
        let ecdf_targets = raw.rows().iter().map(|&(a, b)| ecdf.eval(a, b)).collect();
        let table = EmpiricalDerivativeTable::new(&pobs)?;
        Ok(TrainTargets {
            pobs,
            ecdf_targets,
            table,
        })
    }
}

// ---------------------------------------------------------------------------
// Loss kernels over precomputed values (shared by ops, training, and tests)
// ---------------------------------------------------------------------------

/// `(1/n) Σ (h_i - target_i)²`.
pub fn loss_cdf_values(h: &[f64], targets: &[f64]) -> Result<f64> {
    if h.len() != targets.len() || h.is_empty() {
        return Err(Error::Contract(format!(
            "value/target lengths differ: {} vs {}",
            h.len(),
            targets.len()
        )));
    }
    let n = h.len() as f64;
    Ok(h.iter()
        .zip(targets)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// `(1/2n) Σ [(du_i - d̂u_i)² + (dv_i - d̂v_i)²]`.
pub fn loss_deriv_values(du: &[f64], dv: &[f64], du_hat: &[f64], dv_hat: &[f64]) -> Result<f64> {
    let n = du.len();
    if n == 0 || dv.len() != n || du_hat.len() != n || dv_hat.len() != n {
        return Err(Error::Contract(
            "derivative estimate table is misaligned with the data".into(),
        ));
    }
    let mut acc = 0.0;
    for i in 0..n {
        acc += (du[i] - du_hat[i]).powi(2) + (dv[i] - dv_hat[i]).powi(2);
    }
    Ok(acc / (2.0 * n as f64))
}

/// `-(1/n) Σ log(max(duv_i, floor))`; also reports how many were floored.
pub fn loss_density_values(duv: &[f64]) -> (f64, usize) {
    let n = duv.len() as f64;
    let mut floored = 0usize;
    let sum: f64 = duv
        .iter()
        .map(|&d| {
            if d < DENSITY_FLOOR {
                floored += 1;
                DENSITY_FLOOR.ln()
            } else {
                d.ln()
            }
        })
        .sum();
    (-sum / n, floored)
}

/// One boundary requirement `2 (H(u,1) - u) (dH/du(u,1) - 1)`.
pub fn constraint_term(boundary_val: f64, boundary_deriv: f64, coord: f64) -> f64 {
    2.0 * (boundary_val - coord) * (boundary_deriv - 1.0)
}

// ---------------------------------------------------------------------------
// Loss operations on a model
// ---------------------------------------------------------------------------

fn train_jets(
    model: &TwoCatsModel,
    pts: &[(f64, f64)],
) -> Result<Vec<crate::diff_engine::InputDerivs>> {
    pts.iter()
        .map(|&(u, v)| {
            let j = crate::model::h_train_jet(model, u, v);
            if j.value.is_finite() && j.d_u.is_finite() && j.d_v.is_finite() && j.d_uv.is_finite()
            {
                Ok(j)
            } else {
                Err(Error::Numeric(format!(
                    "non-finite hypothesis jet at ({u}, {v})"
                )))
            }
        })
        .collect()
}

/// ECDF-matching loss of the model over the data.
pub fn loss_cdf(
    model: &TwoCatsModel,
    data: &PseudoObservations,
    ecdf: &Ecdf2,
    raw: &RawDataset,
) -> Result<f64> {
    let h = crate::model::h_values(model, data.rows());
    let targets: Vec<f64> = raw.rows().iter().map(|&(a, b)| ecdf.eval(a, b)).collect();
    loss_cdf_values(&h, &targets)
}

/// Sobolev first-derivative loss against an empirical derivative table.
pub fn loss_deriv(
    model: &TwoCatsModel,
    data: &PseudoObservations,
    table: &EmpiricalDerivativeTable,
) -> Result<f64> {
    if table.len() != data.len() {
        return Err(Error::Contract(
            "derivative estimate table is misaligned with the data".into(),
        ));
    }
    let jets = train_jets(model, data.rows())?;
    let du: Vec<f64> = jets.iter().map(|j| j.d_u).collect();
    let dv: Vec<f64> = jets.iter().map(|j| j.d_v).collect();
    loss_deriv_values(&du, &dv, &table.d_du, &table.d_dv)
}

/// Negative mean log pseudo-likelihood, with the flooring count.
pub fn loss_density(model: &TwoCatsModel, data: &PseudoObservations) -> Result<(f64, usize)> {
    let jets = train_jets(model, data.rows())?;
    let duv: Vec<f64> = jets.iter().map(|j| j.d_uv).collect();
    Ok(loss_density_values(&duv))
}

/// Boundary requirement sum `Σ r¹(u_i) + Σ r²(v_i)` over the data.
pub fn constraints_r(model: &TwoCatsModel, data: &PseudoObservations) -> Result<f64> {
    let us: Vec<f64> = data.rows().iter().map(|r| r.0).collect();
    let vs: Vec<f64> = data.rows().iter().map(|r| r.1).collect();
    let (bu, bv) = crate::model::h_boundary_values(model, &us, &vs);
    let mut r = 0.0;
    for (i, &(val, deriv)) in bu.iter().enumerate() {
        r += constraint_term(val, deriv, us[i]);
    }
    for (i, &(val, deriv)) in bv.iter().enumerate() {
        r += constraint_term(val, deriv, vs[i]);
    }
    Ok(r)
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    p: AdamParams,
}

impl Adam {
    fn new(n: usize, p: AdamParams) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            p,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let b1t = 1.0 - self.p.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.p.beta2.powi(self.t as i32);
        for i in 0..theta.len() {
            self.m[i] = self.p.beta1 * self.m[i] + (1.0 - self.p.beta1) * grad[i];
            self.v[i] = self.p.beta2 * self.v[i] + (1.0 - self.p.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / b1t;
            let vhat = self.v[i] / b2t;
            theta[i] -= self.p.lr * mhat / (vhat.sqrt() + self.p.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// The training loop
// ---------------------------------------------------------------------------

struct BatchStats {
    l_cdf: f64,
    l_deriv: f64,
    l_density: f64,
    r: f64,
    floored: usize,
    count: usize,
}

/// One pass over `idxs`, accumulating loss parts and (optionally) the
/// gradient of `λ·L_B + r_B`, where `r_B` is rescaled by `n_total / |B|` so
/// minibatch steps estimate the full-data objective.
#[allow(clippy::too_many_arguments)]
fn pass_over(
    model: &TwoCatsModel,
    targets: &TrainTargets,
    idxs: &[usize],
    weights: &LossWeights,
    lambda: f64,
    constraints: bool,
    n_total: usize,
    with_grad: bool,
) -> Result<(BatchStats, Option<Vec<f64>>)> {
    let rows = targets.pobs.rows();
    let b = idxs.len() as f64;
    let r_scale = n_total as f64 / b;
    let mut stats = BatchStats {
        l_cdf: 0.0,
        l_deriv: 0.0,
        l_density: 0.0,
        r: 0.0,
        floored: 0,
        count: idxs.len(),
    };
    let mut pass = TrainPass::new(model, constraints);
    for &i in idxs {
        let (u, v) = rows[i];
        let jets = pass.forward_point(u, v)?;
        let h = jets.h;
        let f_hat = targets.ecdf_targets[i];
        let du_hat = targets.table.d_du[i];
        let dv_hat = targets.table.d_dv[i];
        stats.l_cdf += (h.value - f_hat).powi(2);
        stats.l_deriv += 0.5 * ((h.d_u - du_hat).powi(2) + (h.d_v - dv_hat).powi(2));
        let floored = h.d_uv < DENSITY_FLOOR;
        stats.l_density -= h.d_uv.max(DENSITY_FLOOR).ln();
        stats.floored += floored as usize;
        let mut seeds = PointSeeds {
            h_val: lambda * weights.w_cdf * 2.0 * (h.value - f_hat) / b,
            h_du: lambda * weights.w_deriv * (h.d_u - du_hat) / b,
            h_dv: lambda * weights.w_deriv * (h.d_v - dv_hat) / b,
            h_duv: if floored {
                0.0
            } else {
                -lambda * weights.w_density / (b * h.d_uv)
            },
            ..PointSeeds::default()
        };
        if constraints {
            let (bu_val, bu_du) = jets.bu.expect("constraints enabled");
            let (bv_val, bv_dv) = jets.bv.expect("constraints enabled");
            stats.r += constraint_term(bu_val, bu_du, u) + constraint_term(bv_val, bv_dv, v);
            seeds.bu_val = r_scale * 2.0 * (bu_du - 1.0);
            seeds.bu_du = r_scale * 2.0 * (bu_val - u);
            seeds.bv_val = r_scale * 2.0 * (bv_dv - 1.0);
            seeds.bv_dv = r_scale * 2.0 * (bv_val - v);
        }
        if with_grad {
            pass.backward_point(&seeds)?;
        }
    }
    stats.l_cdf /= b;
    stats.l_deriv /= b;
    stats.l_density /= b;
    let grad = with_grad.then(|| pass.finish());
    Ok((stats, grad))
}

fn record_from(stats: &BatchStats, epoch: usize, lambda: f64, weights: &LossWeights) -> EpochRecord {
    let weighted = weights.w_cdf * stats.l_cdf
        + weights.w_deriv * stats.l_deriv
        + weights.w_density * stats.l_density;
    EpochRecord {
        epoch,
        lambda,
        loss_cdf: stats.l_cdf,
        loss_deriv: stats.l_deriv,
        loss_density: stats.l_density,
        constraint: stats.r,
        total: lambda * weighted + stats.r,
        floored_frac: stats.floored as f64 / stats.count.max(1) as f64,
    }
}

/// Gradient of the full objective `λ·(weighted losses) + r` at the model's
/// current parameters, in flat layout order.
pub fn objective_gradient(
    model: &TwoCatsModel,
    data: &RawDataset,
    weights: &LossWeights,
    lambda: f64,
    constraints: bool,
) -> Result<Vec<f64>> {
    let targets = TrainTargets::new(data)?;
    let idxs: Vec<usize> = (0..data.len()).collect();
    let (_, grad) = pass_over(
        model, &targets, &idxs, weights, lambda, constraints, data.len(), true,
    )?;
    Ok(grad.expect("gradient requested"))
}

/// Train a fresh default-architecture model on raw data.
pub fn train(
    data: &RawDataset,
    cfg: &TrainConfig,
    weights: &LossWeights,
    head: HeadKind,
) -> Result<(TwoCatsModel, TrainTrace)> {
    let model = TwoCatsModel::init(head, cfg.seed);
    train_model(model, data, cfg, weights)
}

/// Train a caller-supplied model (any architecture or grid size).
pub fn train_model(
    mut model: TwoCatsModel,
    data: &RawDataset,
    cfg: &TrainConfig,
    weights: &LossWeights,
) -> Result<(TwoCatsModel, TrainTrace)> {
    cfg.validate()?;
    weights.validate()?;
    if data.len() < 10 {
        return Err(Error::Contract(format!(
            "training needs at least 10 rows, got {}",
            data.len()
        )));
    }
    let targets = TrainTargets::new(data)?;
    let n = data.len();
    let constraints = cfg.lagrangian.is_some();
    let mut lambda = cfg.lagrangian.map(|l| l.lambda0).unwrap_or(1.0);
    let alpha = cfg.lagrangian.map(|l| l.alpha).unwrap_or(1.0);

    let mut flat = model.to_param_vector().values().to_vec();
    let mut adam = Adam::new(flat.len(), cfg.adam);
    // Separate stream for batch shuffling; the offset keeps it distinct from
    // the initialization stream at the same seed.
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    let mut trace = TrainTrace::default();
    let mut floored_warned = false;
    let mut best: Option<(f64, usize, Vec<f64>)> = None;

    for epoch in 0..cfg.epochs {
        // Epoch records are measured starting from these parameters; they are
        // what an early-stop snapshot of this epoch restores.
        let epoch_start = flat.clone();
        let mut order: Vec<usize> = (0..n).collect();
        let batches: Vec<Vec<usize>> = match cfg.batch {
            None => vec![order],
            Some(b) => {
                order.shuffle(&mut shuffle_rng);
                order.chunks(b).map(|c| c.to_vec()).collect()
            }
        };
        let mut agg = BatchStats {
            l_cdf: 0.0,
            l_deriv: 0.0,
            l_density: 0.0,
            r: 0.0,
            floored: 0,
            count: 0,
        };
        for batch in &batches {
            model.set_flat(&flat)?;
            let (stats, grad) = pass_over(
                &model, &targets, batch, weights, lambda, constraints, n, true,
            )?;
            let grad = grad.expect("gradient requested");
            if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::TrainAbort {
                    epoch,
                    msg: format!("non-finite gradient at coordinate {bad}"),
                    trace: Box::new(trace),
                });
            }
            let w = batch.len() as f64;
            agg.l_cdf += stats.l_cdf * w;
            agg.l_deriv += stats.l_deriv * w;
            agg.l_density += stats.l_density * w;
            agg.r += stats.r;
            agg.floored += stats.floored;
            agg.count += stats.count;
            adam.step(&mut flat, &grad);
        }
        agg.l_cdf /= n as f64;
        agg.l_deriv /= n as f64;
        agg.l_density /= n as f64;
        let record = record_from(&agg, epoch, lambda, weights);
        if !record.total.is_finite() {
            return Err(Error::TrainAbort {
                epoch,
                msg: format!("non-finite loss {}", record.total),
                trace: Box::new(trace),
            });
        }
        if record.floored_frac > 0.5 && !floored_warned {
            floored_warned = true;
            trace.warnings.push(format!(
                "epoch {epoch}: {:.0}% of density evaluations hit the {DENSITY_FLOOR} floor",
                100.0 * record.floored_frac
            ));
        }
        if cfg.early_stop {
            let pll = -record.loss_density;
            if best.as_ref().map_or(true, |(b, _, _)| pll > *b) {
                best = Some((pll, epoch, epoch_start));
            }
        }
        trace.epochs.push(record);
        lambda *= alpha;
    }

    // Final loss-only evaluation of the post-training parameters.
    model.set_flat(&flat)?;
    let all: Vec<usize> = (0..n).collect();
    let (stats, _) = pass_over(
        &model, &targets, &all, weights, lambda, constraints, n, false,
    )?;
    let final_record = record_from(&stats, cfg.epochs, lambda, weights);
    if cfg.early_stop {
        let pll = -final_record.loss_density;
        if best.as_ref().map_or(true, |(b, _, _)| pll > *b) {
            best = Some((pll, cfg.epochs, flat.clone()));
        }
    }
    trace.epochs.push(final_record);

    if let Some((_, epoch, params)) = best {
        trace.best_epoch = Some(epoch);
        model.set_flat(&params)?;
    } else {
        model.set_flat(&flat)?;
    }
    Ok((model, trace))
}
