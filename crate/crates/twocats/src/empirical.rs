//! Data-driven estimators: pseudo-observations, bivariate ECDF, Gaussian KDE
//! with Silverman bandwidth, and the empirical copula first-derivative
//! estimator.
//!
//! The derivative estimator exploits that a copula's conditional CDF can be
//! written `∂C/∂u = v · c(U = u | V <= v)`: sweeping the sample in ascending
//! `v`, the conditioning set `{j : v_j <= v_i}` is exactly the rows already
//! visited, so a one-dimensional KDE over their `u` values evaluated at `u_i`
//! estimates the conditional density.

use crate::error::{Error, Result};

/// Paired raw observations.
#[derive(Clone, Debug)]
pub struct RawDataset {
    rows: Vec<(f64, f64)>,
}

impl RawDataset {
    pub fn new(rows: Vec<(f64, f64)>) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::Contract(format!(
                "dataset needs at least 2 rows, got {}",
                rows.len()
            )));
        }
        if rows.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return Err(Error::Contract("dataset contains non-finite values".into()));
        }
        Ok(RawDataset { rows })
    }

    pub fn rows(&self) -> &[(f64, f64)] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, idx: usize) -> Vec<f64> {
        match idx {
            0 => self.rows.iter().map(|r| r.0).collect(),
            1 => self.rows.iter().map(|r| r.1).collect(),
            _ => panic!("column index must be 0 or 1"),
        }
    }
}

/// Rank-transformed observations on the open unit square.
#[derive(Clone, Debug)]
pub struct PseudoObservations {
    rows: Vec<(f64, f64)>,
    source_n: usize,
}

impl PseudoObservations {
    pub fn rows(&self) -> &[(f64, f64)] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn source_n(&self) -> usize {
        self.source_n
    }

    /// Directly wrap points already inside the open unit square.
    pub fn from_unit_rows(rows: Vec<(f64, f64)>) -> Result<Self> {
        if rows
            .iter()
            .any(|&(u, v)| !(u > 0.0 && u < 1.0 && v > 0.0 && v < 1.0))
        {
            return Err(Error::Contract(
                "pseudo-observations must lie strictly inside the unit square".into(),
            ));
        }
        let source_n = rows.len();
        Ok(PseudoObservations { rows, source_n })
    }
}

/// Average ranks of `values`, ties averaged, starting at 1.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Rank transform with `n + 1` denominator, so points stay interior.
pub fn pseudo_obs(data: &RawDataset) -> PseudoObservations {
    let n = data.len();
    let den = (n + 1) as f64;
    let r1 = average_ranks(&data.column(0));
    let r2 = average_ranks(&data.column(1));
    let rows = r1
        .iter()
        .zip(r2.iter())
        .map(|(&a, &b)| (a / den, b / den))
        .collect();
    PseudoObservations { rows, source_n: n }
}

/// Bivariate empirical CDF over a fixed point set.
#[derive(Clone, Debug)]
pub struct Ecdf2 {
    points: Vec<(f64, f64)>,
}

impl Ecdf2 {
    pub fn new(points: &[(f64, f64)]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Contract("ECDF needs at least one point".into()));
        }
        Ok(Ecdf2 {
            points: points.to_vec(),
        })
    }

    /// Fraction of points dominated by `(a, b)`.
    pub fn eval(&self, a: f64, b: f64) -> f64 {
        let count = self
            .points
            .iter()
            .filter(|(x, y)| *x <= a && *y <= b)
            .count();
        count as f64 / self.points.len() as f64
    }
}

/// Univariate empirical CDF.
#[derive(Clone, Debug)]
pub struct Ecdf1 {
    sorted: Vec<f64>,
}

impl Ecdf1 {
    pub fn new(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Contract("ECDF needs at least one value".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Ecdf1 { sorted })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let count = self.sorted.partition_point(|&s| s <= x);
        count as f64 / self.sorted.len() as f64
    }

    pub fn n(&self) -> usize {
        self.sorted.len()
    }
}

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// Silverman's rule-of-thumb bandwidth `0.9 · min(σ̂, IQR/1.34) · n^{-1/5}`.
///
/// A zero candidate (exact ties across a quartile span) falls back to the
/// other; all-zero spread is a degenerate-data error.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Contract(
            "bandwidth selection needs at least 2 samples".into(),
        ));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let mut scale = f64::INFINITY;
    if sd > 0.0 {
        scale = scale.min(sd);
    }
    if iqr > 0.0 {
        scale = scale.min(iqr / 1.34);
    }
    if !scale.is_finite() {
        return Err(Error::Degenerate(
            "sample has zero spread; no bandwidth exists".into(),
        ));
    }
    Ok(0.9 * scale * n.powf(-0.2))
}

/// Linear-interpolation quantile of a sorted slice (R type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Gaussian-kernel density estimator with a fixed bandwidth.
#[derive(Clone, Debug)]
pub struct KdeEstimator {
    samples: Vec<f64>,
    bandwidth: f64,
}

impl KdeEstimator {
    /// Build with Silverman's rule.
    pub fn new(samples: &[f64]) -> Result<Self> {
        let bandwidth = silverman_bandwidth(samples)?;
        Ok(KdeEstimator {
            samples: samples.to_vec(),
            bandwidth,
        })
    }

    pub fn with_bandwidth(samples: &[f64], bandwidth: f64) -> Result<Self> {
        if bandwidth <= 0.0 {
            return Err(Error::Domain(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(KdeEstimator {
            samples: samples.to_vec(),
            bandwidth,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let sum: f64 = self
            .samples
            .iter()
            .map(|&s| {
                let z = (x - s) / h;
                (-0.5 * z * z).exp()
            })
            .sum();
        sum / (self.samples.len() as f64 * h * SQRT_2PI)
    }
}

/// Convenience form of the KDE evaluated at one point.
pub fn kde_pdf(samples: &[f64], x: f64) -> Result<f64> {
    Ok(KdeEstimator::new(samples)?.pdf(x))
}

/// Per-row estimates of both copula first derivatives.
#[derive(Clone, Debug)]
pub struct EmpiricalDerivativeTable {
    pub d_du: Vec<f64>,
    pub d_dv: Vec<f64>,
}

impl EmpiricalDerivativeTable {
    pub fn new(p: &PseudoObservations) -> Result<Self> {
        Ok(EmpiricalDerivativeTable {
            d_du: empirical_dc_du(p)?,
            d_dv: empirical_dc_dv(p)?,
        })
    }

    pub fn len(&self) -> usize {
        self.d_du.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_du.is_empty()
    }
}

/// Estimate `∂C/∂u` at every row: sweep ascending in `v`, KDE the `u` values
/// of the rows already seen, evaluate at `u_i`, multiply by `v_i`.
///
/// Prefixes smaller than two rows (or with zero spread) fall back to the
/// independence value `v_i`.
pub fn empirical_dc_du(p: &PseudoObservations) -> Result<Vec<f64>> {
    prefix_estimates(p.rows(), |&(u, v)| (v, u))
}

/// Symmetric estimate of `∂C/∂v`: sweep ascending in `u`, KDE over `v`.
pub fn empirical_dc_dv(p: &PseudoObservations) -> Result<Vec<f64>> {
    prefix_estimates(p.rows(), |&(u, v)| (u, v))
}

/// Shared sweep: `select` maps a row to (sort key, KDE coordinate).
fn prefix_estimates<F>(rows: &[(f64, f64)], select: F) -> Result<Vec<f64>>
where
    F: Fn(&(f64, f64)) -> (f64, f64),
{
    let n = rows.len();
    if n < 10 {
        return Err(Error::Contract(format!(
            "derivative estimation needs at least 10 rows, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| select(&rows[a]).0.total_cmp(&select(&rows[b]).0));

    let mut out = vec![0.0; n];
    // Insert-sorted prefix buffer plus running mean/M2 for the std deviation.
    let mut buf: Vec<f64> = Vec::with_capacity(n);
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (step, &i) in order.iter().enumerate() {
        let (key, coord) = select(&rows[i]);
        out[i] = if step < 2 {
            key
        } else {
            match prefix_kde(&buf, m2, coord) {
                Some(density) => key * density,
                None => key,
            }
        };
        let pos = buf.partition_point(|&x| x <= coord);
        buf.insert(pos, coord);
        let k = buf.len() as f64;
        let delta = coord - mean;
        mean += delta / k;
        m2 += delta * (coord - mean);
    }
    Ok(out)
}

/// KDE of the prefix evaluated at one point, `None` when no bandwidth exists.
fn prefix_kde(sorted: &[f64], m2: f64, at: f64) -> Option<f64> {
    let n = sorted.len() as f64;
    let sd = (m2 / (n - 1.0)).max(0.0).sqrt();
    let iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    let mut scale = f64::INFINITY;
    if sd > 0.0 {
        scale = scale.min(sd);
    }
    if iqr > 0.0 {
        scale = scale.min(iqr / 1.34);
    }
    if !scale.is_finite() {
        return None;
    }
    let h = 0.9 * scale * n.powf(-0.2);
    let sum: f64 = sorted
        .iter()
        .map(|&s| {
            let z = (at - s) / h;
            (-0.5 * z * z).exp()
        })
        .sum();
    Some(sum / (n * h * SQRT_2PI))
}

/// Coefficient of determination of `estimates` against `truths`.
pub fn r_squared(estimates: &[f64], truths: &[f64]) -> f64 {
    assert_eq!(estimates.len(), truths.len());
    let n = truths.len() as f64;
    let mean = truths.iter().sum::<f64>() / n;
    let ss_tot: f64 = truths.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = estimates
        .iter()
        .zip(truths.iter())
        .map(|(e, t)| (e - t).powi(2))
        .sum();
    1.0 - ss_res / ss_tot
}

/// Kolmogorov–Smirnov statistic of a sample against Uniform(0,1).
pub fn ks_uniform(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = x.clamp(0.0, 1.0);
        d = d.max(((i + 1) as f64 / n - f).abs());
        d = d.max((f - i as f64 / n).abs());
    }
    d
}

/// Asymptotic KS critical value at level `alpha`.
pub fn ks_critical(alpha: f64, n: usize) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

/// Empirical Kendall tau (tau-a).
pub fn kendall_tau(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len();
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            let s = (pairs[i].0 - pairs[j].0) * (pairs[i].1 - pairs[j].1);
            if s > 0.0 {
                concordant += 1;
            } else if s < 0.0 {
                discordant += 1;
            }
        }
    }
    (concordant - discordant) as f64 / (n as f64 * (n as f64 - 1.0) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(rows: Vec<(f64, f64)>) -> RawDataset {
        RawDataset::new(rows).unwrap()
    }

    #[test]
    fn pseudo_obs_simple_ranks() {
        let d = dataset(vec![(1.0, 10.0), (2.0, 20.0), (3.0, 30.0)]);
        let p = pseudo_obs(&d);
        let expect = [(0.25, 0.25), (0.5, 0.5), (0.75, 0.75)];
        for (got, want) in p.rows().iter().zip(expect.iter()) {
            assert!((got.0 - want.0).abs() < 1e-15);
            assert!((got.1 - want.1).abs() < 1e-15);
        }
    }

    #[test]
    fn pseudo_obs_ties_average_to_half() {
        let d = dataset(vec![(5.0, 1.0), (5.0, 2.0), (5.0, 3.0), (5.0, 4.0)]);
        let p = pseudo_obs(&d);
        for (u, _) in p.rows() {
            assert!((u - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn pseudo_obs_invariant_under_monotone_transform() {
        let d1 = dataset(vec![(0.3, 2.0), (1.7, -1.0), (0.9, 0.4), (2.4, 1.1)]);
        let d2 = dataset(
            d1.rows()
                .iter()
                .map(|&(a, b)| (a.exp(), b.powi(3)))
                .collect(),
        );
        let p1 = pseudo_obs(&d1);
        let p2 = pseudo_obs(&d2);
        for (a, b) in p1.rows().iter().zip(p2.rows().iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn pseudo_obs_columns_are_rank_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<(f64, f64)> = (0..40)
            .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
            .collect();
        let p = pseudo_obs(&dataset(rows));
        let n = p.len();
        let mut us: Vec<f64> = p.rows().iter().map(|r| r.0).collect();
        us.sort_by(f64::total_cmp);
        for (i, u) in us.iter().enumerate() {
            assert!((u - (i + 1) as f64 / (n + 1) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn ecdf2_counts() {
        let e = Ecdf2::new(&[(0.1, 0.1), (0.9, 0.9)]).unwrap();
        assert_eq!(e.eval(0.5, 0.5), 0.5);
        assert_eq!(e.eval(1.0, 1.0), 1.0);
        assert_eq!(e.eval(0.0, 0.0), 0.0);
    }

    #[test]
    fn ecdf2_close_to_product_under_independence() {
        // Glivenko–Cantelli style Monte Carlo check.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<(f64, f64)> = (0..5000)
            .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
            .collect();
        let e = Ecdf2::new(&pts).unwrap();
        let mut worst: f64 = 0.0;
        for i in 1..=10 {
            for j in 1..=10 {
                let (a, b) = (i as f64 / 10.0, j as f64 / 10.0);
                worst = worst.max((e.eval(a, b) - a * b).abs());
            }
        }
        assert!(worst < 0.03, "max deviation {worst}");
    }

    #[test]
    fn ecdf2_monotone_and_marginal_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<(f64, f64)> = (0..200)
            .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
            .collect();
        let e = Ecdf2::new(&pts).unwrap();
        let mut prev = 0.0;
        for i in 0..=20 {
            let a = i as f64 / 20.0;
            let val = e.eval(a, 1.0);
            assert!(val >= prev);
            prev = val;
            let marginal = pts.iter().filter(|(x, _)| *x <= a).count() as f64 / pts.len() as f64;
            assert_eq!(val, marginal);
        }
    }

    #[test]
    fn kde_matches_normal_density_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples: Vec<f64> = (0..2000).map(|_| normal_draw(&mut rng)).collect();
        let kde = KdeEstimator::new(&samples).unwrap();
        let at0 = kde.pdf(0.0);
        assert!((at0 - 0.3989).abs() < 0.05, "kde(0) = {at0}");
    }

    #[test]
    fn kde_integrates_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples: Vec<f64> = (0..400).map(|_| normal_draw(&mut rng) * 2.5 + 1.0).collect();
        let kde = KdeEstimator::new(&samples).unwrap();
        let h = kde.bandwidth();
        let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min) - 5.0 * h;
        let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 5.0 * h;
        let m = 20_000;
        let dx = (hi - lo) / m as f64;
        let integral: f64 = (0..m)
            .map(|i| kde.pdf(lo + (i as f64 + 0.5) * dx) * dx)
            .sum();
        assert!((integral - 1.0).abs() < 1e-3, "integral = {integral}");
    }

    #[test]
    fn kde_rejects_zero_spread() {
        let err = KdeEstimator::new(&[2.0; 50]).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn bandwidth_is_scale_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let samples: Vec<f64> = (0..300).map(|_| rng.random::<f64>()).collect();
        let h1 = silverman_bandwidth(&samples).unwrap();
        let scaled: Vec<f64> = samples.iter().map(|x| 7.5 * x).collect();
        let h2 = silverman_bandwidth(&scaled).unwrap();
        assert!((h2 / h1 - 7.5).abs() < 1e-12);
        assert!(h1 > 0.0);
    }

    #[test]
    fn derivative_estimator_independence() {
        let mut rng = ChaCha8Rng::seed_from_u64(30091985);
        let rows: Vec<(f64, f64)> = (0..1500)
            .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
            .collect();
        let p = pseudo_obs(&dataset(rows));
        let est = empirical_dc_du(&p).unwrap();
        // Under independence dC/du = v; check points with v near 1/2.
        let mut errs = Vec::new();
        for (i, &(_, v)) in p.rows().iter().enumerate() {
            if (v - 0.5).abs() < 0.1 {
                errs.push((est[i] - v).abs());
            }
        }
        let mean_err = errs.iter().sum::<f64>() / errs.len() as f64;
        assert!(mean_err < 0.05, "mean abs err {mean_err}");
        assert!(est.iter().all(|&e| e >= 0.0));
    }

    #[test]
    fn derivative_estimator_tracks_closed_form_conditional() {
        use crate::copula_ref::{CopulaFamily, ReferenceCopula, DEFAULT_SEED};
        let c = ReferenceCopula::new(CopulaFamily::Gaussian, 0.5).unwrap();
        let raw = dataset(c.sample(1500, DEFAULT_SEED));
        let p = pseudo_obs(&raw);
        let est = empirical_dc_du(&p).unwrap();
        let truth: Vec<f64> = p.rows().iter().map(|&(u, v)| c.h_function(u, v)).collect();
        let r2 = r_squared(&est, &truth);
        assert!(r2 >= 0.899, "R2 = {r2}");
    }

    #[test]
    fn derivative_estimator_rejects_small_samples() {
        let d = dataset(vec![(0.1, 0.2), (0.3, 0.4), (0.5, 0.6)]);
        let p = pseudo_obs(&d);
        assert!(empirical_dc_du(&p).is_err());
    }

    #[test]
    fn ks_uniform_statistic_behaves() {
        let uniform: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!(ks_uniform(&uniform) < 0.002);
        let skewed: Vec<f64> = uniform.iter().map(|x| x * x).collect();
        assert!(ks_uniform(&skewed) > ks_critical(0.01, 1000));
    }

    #[test]
    fn kendall_tau_of_monotone_data_is_one() {
        let pairs: Vec<(f64, f64)> = (0..50).map(|i| (i as f64, i as f64 * 2.0)).collect();
        assert_eq!(kendall_tau(&pairs), 1.0);
    }

    fn normal_draw(rng: &mut ChaCha8Rng) -> f64 {
        crate::model::norm_quantile(rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12))
    }
}
