//! Likelihood evaluation with KDE marginals, bootstrap confidence intervals,
//! marginal-deviation reports, min-max scaling, and the ablation grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::empirical::{quantile_sorted, Ecdf1, KdeEstimator, PseudoObservations, RawDataset};
use crate::error::{Error, Result};
use crate::model::{HeadKind, TwoCatsModel};
use crate::training::{
    loss_cdf_values, loss_density_values, loss_deriv_values, train_model, LossWeights,
    TrainConfig, TrainTargets,
};

/// Floor applied to the model density inside the log, matching training.
const DENSITY_FLOOR: f64 = crate::training::DENSITY_FLOOR;

/// Negative log-likelihood report over a test set.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub per_point: Vec<f64>,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub level: f64,
    pub resamples: usize,
    pub n: usize,
}

/// Marginal-deviation statistics: mean absolute and mean relative (percent)
/// deviations of the boundary slices from the ideal uniform marginals.
#[derive(Copy, Clone, Debug)]
pub struct P3Report {
    pub abs_u: f64,
    pub abs_v: f64,
    pub rel_u: f64,
    pub rel_v: f64,
}

/// Relative deviations skip coordinates below this cutoff; the relative
/// score is dominated by the tail otherwise.
const REL_CUTOFF: f64 = 1e-6;

/// Percentile bootstrap interval for the mean of `values`.
pub fn bootstrap_ci(values: &[f64], resamples: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Contract("bootstrap needs nonempty values".into()));
    }
    if resamples < 100 {
        return Err(Error::Contract(format!(
            "bootstrap needs at least 100 resamples, got {resamples}"
        )));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::Contract(format!("level must be in (0,1), got {level}")));
    }
    let n = values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut acc = 0.0;
        for _ in 0..n {
            acc += values[rng.random_range(0..n)];
        }
        means.push(acc / n as f64);
    }
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((
        quantile_sorted(&means, tail),
        quantile_sorted(&means, 1.0 - tail),
    ))
}

/// Test negative log-likelihood with KDE marginals.
///
/// Marginal densities and marginal ECDFs are fit on the training split; each
/// test point contributes `-log f1(x1) - log f2(x2) - log c(u, v)` where
/// `(u, v)` are the training-ECDF images clamped interior and `c` is the
/// model's mixed second derivative (floored like the training loss).
pub fn nll(
    model: &TwoCatsModel,
    train_raw: &RawDataset,
    test_raw: &RawDataset,
    resamples: usize,
    seed: u64,
) -> Result<EvalReport> {
    let kde1 = KdeEstimator::new(&train_raw.column(0))?;
    let kde2 = KdeEstimator::new(&train_raw.column(1))?;
    let density = |u: f64, v: f64| -> f64 {
        crate::model::h_train_jet(model, u, v).d_uv
    };
    nll_with(
        &density, &kde1, &kde2, train_raw, test_raw, resamples, seed,
    )
}

/// [`nll`] with the copula density supplied directly; the seam used by tests
/// to substitute a closed-form density.
pub fn nll_with(
    copula_density: &dyn Fn(f64, f64) -> f64,
    kde1: &KdeEstimator,
    kde2: &KdeEstimator,
    train_raw: &RawDataset,
    test_raw: &RawDataset,
    resamples: usize,
    seed: u64,
) -> Result<EvalReport> {
    if test_raw.is_empty() {
        return Err(Error::Contract("empty test set".into()));
    }
    let ecdf1 = Ecdf1::new(&train_raw.column(0))?;
    let ecdf2 = Ecdf1::new(&train_raw.column(1))?;
    let n_train = train_raw.len() as f64;
    let clamp = |f: f64| f.clamp(1.0 / (n_train + 1.0), n_train / (n_train + 1.0));
    let per_point: Vec<f64> = test_raw
        .rows()
        .iter()
        .map(|&(x1, x2)| {
            let u = clamp(ecdf1.eval(x1));
            let v = clamp(ecdf2.eval(x2));
            let c = copula_density(u, v).max(DENSITY_FLOOR);
            -kde1.pdf(x1).max(DENSITY_FLOOR).ln() - kde2.pdf(x2).max(DENSITY_FLOOR).ln() - c.ln()
        })
        .collect();
    if per_point.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite test log-likelihood".into()));
    }
    let mean = per_point.iter().sum::<f64>() / per_point.len() as f64;
    let (ci_lo, ci_hi) = bootstrap_ci(&per_point, resamples, 0.95, seed)?;
    Ok(EvalReport {
        n: per_point.len(),
        per_point,
        mean,
        ci_lo,
        ci_hi,
        level: 0.95,
        resamples,
    })
}

/// Deviation statistics from precomputed boundary values; the seam used by
/// tests with stub boundaries.
pub fn p3_stats(bu_vals: &[f64], us: &[f64], bv_vals: &[f64], vs: &[f64]) -> P3Report {
    let mean_abs = |vals: &[f64], coords: &[f64]| -> f64 {
        vals.iter()
            .zip(coords)
            .map(|(h, c)| (h - c).abs())
            .sum::<f64>()
            / vals.len() as f64
    };
    let mean_rel = |vals: &[f64], coords: &[f64]| -> f64 {
        let mut acc = 0.0;
        let mut count = 0usize;
        for (h, c) in vals.iter().zip(coords) {
            if *c >= REL_CUTOFF {
                acc += 100.0 * (h - c).abs() / c;
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            acc / count as f64
        }
    };
    P3Report {
        abs_u: mean_abs(bu_vals, us),
        abs_v: mean_abs(bv_vals, vs),
        rel_u: mean_rel(bu_vals, us),
        rel_v: mean_rel(bv_vals, vs),
    }
}

/// Boundary-deviation report of a model over pseudo-observations.
pub fn p3_report(model: &TwoCatsModel, data: &PseudoObservations) -> Result<P3Report> {
    if data.is_empty() {
        return Err(Error::Contract("empty data for deviation report".into()));
    }
    let us: Vec<f64> = data.rows().iter().map(|r| r.0).collect();
    let vs: Vec<f64> = data.rows().iter().map(|r| r.1).collect();
    let (bu, bv) = crate::model::h_boundary_values(model, &us, &vs);
    let bu_vals: Vec<f64> = bu.iter().map(|p| p.0).collect();
    let bv_vals: Vec<f64> = bv.iter().map(|p| p.0).collect();
    Ok(p3_stats(&bu_vals, &us, &bv_vals, &vs))
}

/// Min-max scale each split by its own per-column extrema.
pub fn minmax_scale(train: &RawDataset, test: &RawDataset) -> Result<(RawDataset, RawDataset)> {
    Ok((scale_one(train)?, scale_one(test)?))
}

fn scale_one(data: &RawDataset) -> Result<RawDataset> {
    let mut cols = Vec::new();
    for c in 0..2 {
        let col = data.column(c);
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo <= 0.0 {
            return Err(Error::Degenerate(format!(
                "column {c} has zero range; cannot min-max scale"
            )));
        }
        cols.push((lo, hi - lo));
    }
    let rows = data
        .rows()
        .iter()
        .map(|&(a, b)| ((a - cols[0].0) / cols[0].1, (b - cols[1].0) / cols[1].1))
        .collect();
    RawDataset::new(rows)
}

/// One row of the ablation grid: which loss terms were active and the
/// held-in (training-set) raw metrics of the resulting model.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub label: String,
    pub loss_cdf: f64,
    pub loss_deriv: f64,
    pub loss_density: f64,
}

/// Train the four loss-term configurations (no barrier) and report held-in
/// metrics for each: density only, density+derivative, density+CDF, all
/// three.
pub fn ablation_run(
    base: &TwoCatsModel,
    data: &RawDataset,
    cfg: &TrainConfig,
    weights: &LossWeights,
) -> Result<Vec<AblationRow>> {
    let configs: [(&str, bool, bool); 4] = [
        ("density", false, false),
        ("density+deriv", false, true),
        ("density+cdf", true, false),
        ("all", true, true),
    ];
    let targets = TrainTargets::new(data)?;
    let mut rows = Vec::new();
    for (label, use_cdf, use_deriv) in configs {
        let w = LossWeights {
            w_cdf: if use_cdf { weights.w_cdf } else { 0.0 },
            w_deriv: if use_deriv { weights.w_deriv } else { 0.0 },
            w_density: weights.w_density,
        };
        let run_cfg = TrainConfig {
            lagrangian: None,
            ..cfg.clone()
        };
        let (model, _) = train_model(base.clone(), data, &run_cfg, &w)?;
        // Held-in raw metrics, unweighted.
        let jets: Vec<crate::diff_engine::InputDerivs> = targets
            .pobs
            .rows()
            .iter()
            .map(|&(u, v)| crate::model::h_train_jet(&model, u, v))
            .collect();
        let h: Vec<f64> = jets.iter().map(|j| j.value).collect();
        let du: Vec<f64> = jets.iter().map(|j| j.d_u).collect();
        let dv: Vec<f64> = jets.iter().map(|j| j.d_v).collect();
        let duv: Vec<f64> = jets.iter().map(|j| j.d_uv).collect();
        rows.push(AblationRow {
            label: label.to_string(),
            loss_cdf: loss_cdf_values(&h, &targets.ecdf_targets)?,
            loss_deriv: loss_deriv_values(&du, &dv, &targets.table.d_du, &targets.table.d_dv)?,
            loss_density: loss_density_values(&duv).0,
        });
    }
    Ok(rows)
}

/// One row of the derivative-estimator validation: R² of the empirical
/// first-derivative estimates against the family's closed form.
#[derive(Clone, Debug)]
pub struct DerivValidationRow {
    pub family: crate::copula_ref::CopulaFamily,
    pub param: f64,
    pub r2_du: f64,
    pub r2_dv: f64,
}

/// Run the estimator validation across the standard family/parameter grid.
pub fn validate_derivative_estimator(n: usize, seed: u64) -> Result<Vec<DerivValidationRow>> {
    use crate::copula_ref::{CopulaFamily, ReferenceCopula};
    use crate::empirical::{empirical_dc_du, empirical_dc_dv, pseudo_obs, r_squared};
    let mut settings = Vec::new();
    for rho in [0.1, 0.5, 0.9] {
        settings.push((CopulaFamily::Gaussian, rho));
    }
    for theta in [1.0, 5.0, 10.0] {
        settings.push((CopulaFamily::Clayton, theta));
        settings.push((CopulaFamily::Frank, theta));
    }
    let mut rows = Vec::new();
    for (family, param) in settings {
        let c = ReferenceCopula::new(family, param)?;
        let raw = RawDataset::new(c.sample(n, seed))?;
        let pobs = pseudo_obs(&raw);
        let est_du = empirical_dc_du(&pobs)?;
        let est_dv = empirical_dc_dv(&pobs)?;
        let truth_du: Vec<f64> = pobs
            .rows()
            .iter()
            .map(|&(u, v)| c.h_function(u, v))
            .collect();
        let truth_dv: Vec<f64> = pobs
            .rows()
            .iter()
            .map(|&(u, v)| c.h_function(v, u))
            .collect();
        rows.push(DerivValidationRow {
            family,
            param,
            r2_du: r_squared(&est_du, &truth_du),
            r2_dv: r_squared(&est_dv, &truth_dv),
        });
    }
    Ok(rows)
}

/// Train a default-architecture model, convenience for the CLI.
pub fn fit_default(
    data: &RawDataset,
    cfg: &TrainConfig,
    weights: &LossWeights,
    head: HeadKind,
) -> Result<(TwoCatsModel, crate::training::TrainTrace)> {
    crate::training::train(data, cfg, weights, head)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::norm_pdf;

    #[test]
    fn bootstrap_of_constant_vector_is_degenerate_interval() {
        let (lo, hi) = bootstrap_ci(&[3.25; 40], 500, 0.95, 7).unwrap();
        assert_eq!(lo, 3.25);
        assert_eq!(hi, 3.25);
    }

    #[test]
    fn bootstrap_width_tracks_clt() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values: Vec<f64> = (0..500)
            .map(|_| crate::model::norm_quantile(rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12)))
            .collect();
        let (lo, hi) = bootstrap_ci(&values, 1000, 0.95, 11).unwrap();
        let width = hi - lo;
        let clt = 2.0 * 1.96 / (500.0f64).sqrt();
        assert!(
            (width - clt).abs() < 0.3 * clt,
            "width {width} vs CLT {clt}"
        );
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        assert!(lo <= mean && mean <= hi);
    }

    #[test]
    fn bootstrap_contract_checks() {
        assert!(bootstrap_ci(&[], 500, 0.95, 1).is_err());
        assert!(bootstrap_ci(&[1.0], 50, 0.95, 1).is_err());
    }

    #[test]
    fn nll_of_independence_density_near_analytic_normal() {
        use rand::{Rng, SeedableRng};
        // Train columns are standard normal, so the KDE sits near the true
        // density; an independence copula contributes nothing at the median.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut draw = || crate::model::norm_quantile(rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12));
        let train_rows: Vec<(f64, f64)> = (0..2000).map(|_| (draw(), draw())).collect();
        let train = RawDataset::new(train_rows).unwrap();
        let test = RawDataset::new(vec![(0.0, 0.0), (0.0, 0.0)]).unwrap();
        let kde1 = KdeEstimator::new(&train.column(0)).unwrap();
        let kde2 = KdeEstimator::new(&train.column(1)).unwrap();
        let report = nll_with(&|_, _| 1.0, &kde1, &kde2, &train, &test, 200, 5).unwrap();
        let expect = -2.0 * norm_pdf(0.0).ln();
        assert!(
            (report.mean - expect).abs() < 0.1,
            "nll {} vs analytic {expect}",
            report.mean
        );
    }

    #[test]
    fn nll_mean_invariant_to_test_row_order() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let rows: Vec<(f64, f64)> = (0..60)
            .map(|_| (rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0))
            .collect();
        let train = RawDataset::new(rows.clone()).unwrap();
        let test = RawDataset::new(rows[..30].to_vec()).unwrap();
        let mut reversed_rows = rows[..30].to_vec();
        reversed_rows.reverse();
        let reversed = RawDataset::new(reversed_rows).unwrap();
        let kde1 = KdeEstimator::new(&train.column(0)).unwrap();
        let kde2 = KdeEstimator::new(&train.column(1)).unwrap();
        let density = |u: f64, v: f64| 1.0 + 0.2 * (u - 0.5) * (v - 0.5);
        let a = nll_with(&density, &kde1, &kde2, &train, &test, 200, 9).unwrap();
        let b = nll_with(&density, &kde1, &kde2, &train, &reversed, 200, 9).unwrap();
        assert!((a.mean - b.mean).abs() < 1e-12);
    }

    #[test]
    fn p3_stats_stub_arithmetic() {
        // Stub boundary H(u,1) = u/2 at u = 0.5: abs 0.25, rel 50%.
        let r = p3_stats(&[0.25], &[0.5], &[0.5], &[0.5]);
        assert!((r.abs_u - 0.25).abs() < 1e-15);
        assert!((r.rel_u - 50.0).abs() < 1e-12);
        assert_eq!(r.abs_v, 0.0);
        // The exact independence copula M(u,v) = u·v has H(u,1) = u.
        let us = [0.2, 0.4, 0.9];
        let ideal = p3_stats(&us, &us, &us, &us);
        assert_eq!(ideal.abs_u, 0.0);
        assert_eq!(ideal.rel_u, 0.0);
    }

    #[test]
    fn p3_rel_skips_tiny_coordinates() {
        let r = p3_stats(&[0.5, 1e-9], &[0.5, 1e-9], &[0.1], &[0.2]);
        assert_eq!(r.rel_u, 0.0);
    }

    #[test]
    fn minmax_scaling_basics() {
        let train = RawDataset::new(vec![(1.0, 10.0), (3.0, 30.0)]).unwrap();
        let test = RawDataset::new(vec![(0.0, 5.0), (10.0, 6.0)]).unwrap();
        let (strain, stest) = minmax_scale(&train, &test).unwrap();
        assert_eq!(strain.rows(), &[(0.0, 0.0), (1.0, 1.0)]);
        // Test is scaled by its own extrema, not the training ones.
        assert_eq!(stest.rows(), &[(0.0, 0.0), (1.0, 1.0)]);
        // Already-[0,1] data with 0/1 extremes is a fixed point.
        let (again, _) = minmax_scale(&strain, &stest).unwrap();
        assert_eq!(again.rows(), strain.rows());
    }

    #[test]
    fn minmax_rejects_constant_column() {
        let train = RawDataset::new(vec![(2.0, 1.0), (2.0, 3.0)]).unwrap();
        let test = RawDataset::new(vec![(0.0, 1.0), (1.0, 2.0)]).unwrap();
        assert!(matches!(
            minmax_scale(&train, &test),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn ablation_produces_four_finite_rows() {
        use crate::copula_ref::*;
        let c = ReferenceCopula::new(CopulaFamily::Gaussian, 0.8).unwrap();
        let spec = SyntheticSpec::new(c, 80, 10, Marginal::StdNormal, 5).unwrap();
        let (data, _) = make_synthetic(&spec).unwrap();
        let base = TwoCatsModel::with_widths(&[2, 8, 4, 1], HeadKind::Logistic, 3, 40);
        let cfg = TrainConfig {
            epochs: 6,
            batch: Some(40),
            ..Default::default()
        };
        let rows = ablation_run(&base, &data, &cfg, &LossWeights::default()).unwrap();
        assert_eq!(rows.len(), 4);
        let labels: Vec<&str> = rows.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels, ["density", "density+deriv", "density+cdf", "all"]);
        for r in &rows {
            assert!(r.loss_cdf.is_finite());
            assert!(r.loss_deriv.is_finite());
            assert!(r.loss_density.is_finite());
        }
    }

    #[test]
    fn derivative_validation_grid_shape() {
        let rows = validate_derivative_estimator(200, 3).unwrap();
        assert_eq!(rows.len(), 9);
        assert!(rows.iter().all(|r| r.r2_du.is_finite() && r.r2_dv.is_finite()));
    }
}
