use std::time::Instant;
use twocats::copula_ref::*;
use twocats::empirical::*;
use twocats::eval::*;
use twocats::model::HeadKind;
use twocats::sampling::*;
use twocats::training::*;

fn data_for(fam: CopulaFamily, p: f64) -> (RawDataset, RawDataset) {
    let c = ReferenceCopula::new(fam, p).unwrap();
    let spec = SyntheticSpec::new(c, 1500, 500, Marginal::StdNormal, DEFAULT_SEED).unwrap();
    make_synthetic(&spec).unwrap()
}

fn oracle_nll(fam: CopulaFamily, p: f64) {
    let (train_d, test_d) = data_for(fam, p);
    let c = ReferenceCopula::new(fam, p).unwrap();
    let kde1 = KdeEstimator::new(&train_d.column(0)).unwrap();
    let kde2 = KdeEstimator::new(&train_d.column(1)).unwrap();
    let rep = nll_with(&|u, v| c.pdf(u, v), &kde1, &kde2, &train_d, &test_d, 500, 1).unwrap();
    println!("oracle {fam:?}({p}): NLL={:.3}", rep.mean);
}

fn fit_nll(fam: CopulaFamily, p: f64, epochs: usize, target: f64) {
    let (train_d, test_d) = data_for(fam, p);
    let t0 = Instant::now();
    let cfg = TrainConfig { epochs, batch: Some(128), ..Default::default() };
    let (m, tr) = train(&train_d, &cfg, &LossWeights::default(), HeadKind::Logistic).unwrap();
    let rep = nll(&m, &train_d, &test_d, 1000, DEFAULT_SEED).unwrap();
    println!("fit {fam:?}({p}) ep={epochs}: NLL={:.3} (target {target}) best={:?} [{:.0}s]",
        rep.mean, tr.best_epoch, t0.elapsed().as_secs_f64());
}

fn main() {
    oracle_nll(CopulaFamily::Gaussian, 0.5);
    oracle_nll(CopulaFamily::Gaussian, 0.9);
    oracle_nll(CopulaFamily::Clayton, 5.0);
    fit_nll(CopulaFamily::Clayton, 5.0, 40, 2.01);
    fit_nll(CopulaFamily::Gaussian, 0.9, 120, 1.91);

    // ---- criterion 5 probe: Clayton theta=10, n=250
    let c = ReferenceCopula::new(CopulaFamily::Clayton, 10.0).unwrap();
    let spec = SyntheticSpec::new(c, 250, 10, Marginal::StdNormal, DEFAULT_SEED).unwrap();
    let (d5, _) = make_synthetic(&spec).unwrap();
    let pobs = pseudo_obs(&d5);
    let base = TrainConfig {
        epochs: 1000, batch: Some(125), early_stop: false,
        adam: AdamParams { lr: 3e-3, ..Default::default() }, ..Default::default()
    };
    let t0 = Instant::now();
    let (plain, _) = train(&d5, &TrainConfig { lagrangian: None, ..base.clone() },
        &LossWeights::default(), HeadKind::Logistic).unwrap();
    let before = p3_report(&plain, &pobs).unwrap();
    println!("C5 unconstrained: abs_u={:.4} abs_v={:.4} [{:.0}s]", before.abs_u, before.abs_v, t0.elapsed().as_secs_f64());
    let t0 = Instant::now();
    let (con, _) = train(&d5, &TrainConfig { lagrangian: Some(BarrierSchedule::default()), ..base },
        &LossWeights::default(), HeadKind::Logistic).unwrap();
    let after = p3_report(&con, &pobs).unwrap();
    println!("C5 constrained:   abs_u={:.4} abs_v={:.4} [{:.0}s]", after.abs_u, after.abs_v, t0.elapsed().as_secs_f64());

    // ---- criterion 6 probe: Gaussian 0.8, n=500, 500 epochs constrained
    let c = ReferenceCopula::new(CopulaFamily::Gaussian, 0.8).unwrap();
    let spec = SyntheticSpec::new(c, 500, 10, Marginal::StdNormal, DEFAULT_SEED).unwrap();
    let (d6, _) = make_synthetic(&spec).unwrap();
    let t0 = Instant::now();
    let cfg6 = TrainConfig {
        epochs: 500, batch: Some(125), early_stop: false,
        lagrangian: Some(BarrierSchedule::default()),
        adam: AdamParams { lr: 3e-3, ..Default::default() }, ..Default::default()
    };
    let (m6, _) = train(&d6, &cfg6, &LossWeights::default(), HeadKind::Logistic).unwrap();
    let p36 = p3_report(&m6, &pseudo_obs(&d6)).unwrap();
    println!("C6 fit: abs_u={:.4} abs_v={:.4} [{:.0}s]", p36.abs_u, p36.abs_v, t0.elapsed().as_secs_f64());
    let t0 = Instant::now();
    let run = sample_pairs(&m6, 10_000, &SamplerConfig { seed: DEFAULT_SEED, ..Default::default() }).unwrap();
    let vs: Vec<f64> = run.pairs.iter().map(|p| p.1).collect();
    let tau_train = kendall_tau(pseudo_obs(&d6).rows());
    let tau_s = kendall_tau(&run.pairs);
    println!("C6 sample: tau={:.3} vs train {:.3}; v-KS={:.4} (crit {:.4}); retries={} [{:.0}s]",
        tau_s, tau_train, ks_uniform(&vs), ks_critical(0.01, vs.len()), run.retries, t0.elapsed().as_secs_f64());
}
