//! Behavior of sampling and conditional quantities on trained models.
//!
//! These checks need real fits, so the models are shared across tests and
//! sized for desk-scale runtimes (reduced widths and grids; the architecture
//! itself is exercised by the acceptance suite).

use std::sync::OnceLock;

use twocats::copula_ref::{
    make_synthetic, CopulaFamily, Marginal, ReferenceCopula, SyntheticSpec,
};
use twocats::model::{HeadKind, TwoCatsModel};
use twocats::sampling::{conditional_h, inverse_conditional, SamplerConfig};
use twocats::training::{
    train_model, AdamParams, BarrierSchedule, LossWeights, TrainConfig,
};

fn fit(family: CopulaFamily, param: f64, n: usize, epochs: usize) -> TwoCatsModel {
    let c = ReferenceCopula::new(family, param).unwrap();
    let spec = SyntheticSpec::new(c, n, 10, Marginal::Uniform, 20_240_901).unwrap();
    let (data, _) = make_synthetic(&spec).unwrap();
    let cfg = TrainConfig {
        epochs,
        batch: Some(64),
        lagrangian: Some(BarrierSchedule::default()),
        early_stop: false,
        adam: AdamParams {
            lr: 3e-3,
            ..Default::default()
        },
        ..Default::default()
    };
    let base = TwoCatsModel::with_widths(&[2, 32, 16, 1], HeadKind::Logistic, 11, 100);
    train_model(base, &data, &cfg, &LossWeights::default())
        .unwrap()
        .0
}

fn independence_fit() -> &'static TwoCatsModel {
    static M: OnceLock<TwoCatsModel> = OnceLock::new();
    // A Gaussian copula with tiny correlation is numerically independent.
    M.get_or_init(|| fit(CopulaFamily::Gaussian, 1e-9, 400, 300))
}

fn gauss08_fit() -> &'static TwoCatsModel {
    static M: OnceLock<TwoCatsModel> = OnceLock::new();
    M.get_or_init(|| fit(CopulaFamily::Gaussian, 0.8, 400, 300))
}

#[test]
fn conditional_of_independence_fit_is_near_v() {
    let model = independence_fit();
    let mut errs = Vec::new();
    for i in 1..10 {
        for j in 1..10 {
            let (u, v) = (i as f64 / 10.0, j as f64 / 10.0);
            errs.push((conditional_h(model, u, v) - v).abs());
        }
    }
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    assert!(mean < 0.05, "mean |h(u,v) - v| = {mean}");
}

#[test]
fn inverse_conditional_matches_gaussian_closed_form() {
    let model = gauss08_fit();
    let cfg = SamplerConfig::default();
    let truth = ReferenceCopula::new(CopulaFamily::Gaussian, 0.8).unwrap();
    let got = inverse_conditional(model, 0.5, 0.5, &cfg).unwrap();
    let expect = truth.h_inverse(0.5, 0.5);
    assert!(
        (got - expect).abs() < 0.05,
        "model inverse {got} vs closed form {expect}"
    );
}

#[test]
fn sampled_dependence_matches_training_data() {
    use twocats::empirical::kendall_tau;
    use twocats::sampling::sample_pairs;
    let model = gauss08_fit();
    let run = sample_pairs(
        model,
        2000,
        &SamplerConfig {
            seed: 99,
            ..Default::default()
        },
    )
    .unwrap();
    let tau = kendall_tau(&run.pairs);
    let expect = 2.0 * 0.8f64.asin() / std::f64::consts::PI;
    assert!((tau - expect).abs() < 0.08, "tau {tau} vs {expect}");
}
