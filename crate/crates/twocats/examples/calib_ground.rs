use twocats::copula_ref::*;
use twocats::empirical::pseudo_obs;
use twocats::eval::p3_report;
use twocats::model::*;
use twocats::training::*;
use std::time::Instant;

fn main() {
    let c = ReferenceCopula::new(CopulaFamily::Gaussian, 0.5).unwrap();
    let spec = SyntheticSpec::new(c, 250, 10, Marginal::StdNormal, 7).unwrap();
    let (data, _) = make_synthetic(&spec).unwrap();
    let pobs = pseudo_obs(&data);
    for (epochs, widths, kind, lr) in [
        (160usize, vec![2usize,16,8,1], HeadKind::Logistic, 1e-3),
        (400, vec![2,16,8,1], HeadKind::Logistic, 1e-3),
        (400, vec![2,16,8,1], HeadKind::Logistic, 3e-3),
        (800, vec![2,16,8,1], HeadKind::Logistic, 3e-3),
        (400, vec![2,16,8,1], HeadKind::Gaussian, 3e-3),
    ] {
        let t0 = Instant::now();
        let cfg = TrainConfig {
            epochs,
            batch: Some(64),
            lagrangian: Some(BarrierSchedule::default()),
            early_stop: false,
            adam: AdamParams { lr, ..Default::default() },
            ..Default::default()
        };
        let base = TwoCatsModel::with_widths(&widths, kind, 5, 50);
        let (m, tr) = train_model(base, &data, &cfg, &LossWeights::default()).unwrap();
        let p3 = p3_report(&m, &pobs).unwrap();
        let h85 = {
            let (bu, _) = h_boundary_values(&m, &[0.85], &[0.5]);
            bu[0].1
        };
        println!(
            "{kind:?} ep={epochs} lr={lr}: abs_u={:.4} abs_v={:.4} r_last={:.2e} dH/du(0.85,1)={:.3} [{:.1}s]",
            p3.abs_u, p3.abs_v, tr.epochs.last().unwrap().constraint, h85, t0.elapsed().as_secs_f64()
        );
    }
}
