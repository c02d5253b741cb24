use std::time::Instant;
use twocats::copula_ref::*;
use twocats::eval::nll;
use twocats::model::HeadKind;
use twocats::training::*;

fn run_one(label: &str, fam: CopulaFamily, p: f64, lr: f64, epochs: usize, batch: usize, target: f64) {
    let c = ReferenceCopula::new(fam, p).unwrap();
    let spec = SyntheticSpec::new(c, 1500, 500, Marginal::StdNormal, DEFAULT_SEED).unwrap();
    let (train_d, test_d) = make_synthetic(&spec).unwrap();
    let t0 = Instant::now();
    let cfg = TrainConfig {
        epochs,
        batch: Some(batch),
        adam: AdamParams { lr, ..Default::default() },
        ..Default::default()
    };
    let (model, trace) = train(&train_d, &cfg, &LossWeights::default(), HeadKind::Logistic).unwrap();
    let report = nll(&model, &train_d, &test_d, 1000, DEFAULT_SEED).unwrap();
    println!(
        "{label} lr={lr} ep={epochs} b={batch}: NLL={:.3} (target {target}±0.25/0.30) best_ep={:?} last_pll={:.3} [{:.0}s]",
        report.mean, trace.best_epoch, -trace.epochs.last().unwrap().loss_density,
        t0.elapsed().as_secs_f64()
    );
}

fn main() {
    run_one("gauss0.9", CopulaFamily::Gaussian, 0.9, 1e-3, 60, 128, 1.91);
    run_one("gauss0.9", CopulaFamily::Gaussian, 0.9, 3e-3, 60, 128, 1.91);
    run_one("gauss0.5", CopulaFamily::Gaussian, 0.5, 1e-3, 60, 128, 2.79);
    run_one("clayton5", CopulaFamily::Clayton, 5.0, 1e-3, 60, 128, 2.01);
}
