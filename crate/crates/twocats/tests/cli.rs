//! End-to-end command-line tests: each command runs as a real process via
//! the compiled binary.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_twocats")
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("spawn twocats")
}

fn run_ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn path_str(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

struct Workdir {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workdir {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Workdir { _dir: dir, root }
    }

    fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

/// Generate a small dataset pair used by several tests.
fn gen_small(w: &Workdir, seed: &str) -> (PathBuf, PathBuf) {
    let train = w.file(&format!("train_{seed}.csv"));
    let test = w.file(&format!("test_{seed}.csv"));
    run_ok(&[
        "gen-synth",
        "--family",
        "gaussian",
        "--param",
        "0.8",
        "--n-train",
        "64",
        "--n-test",
        "32",
        "--seed",
        seed,
        "--out-train",
        &path_str(&train),
        "--out-test",
        &path_str(&test),
    ]);
    (train, test)
}

#[test]
fn gen_synth_writes_expected_row_counts() {
    let w = Workdir::new();
    let (train, test) = gen_small(&w, "30091985");
    let t = std::fs::read_to_string(&train).unwrap();
    assert_eq!(t.lines().count(), 65); // header + rows
    assert_eq!(t.lines().next().unwrap(), "x1,x2");
    let e = std::fs::read_to_string(&test).unwrap();
    assert_eq!(e.lines().count(), 33);
}

#[test]
fn unknown_family_fails_with_one_line_error() {
    let w = Workdir::new();
    let out = run(&[
        "gen-synth",
        "--family",
        "gumbel",
        "--param",
        "2.0",
        "--out-train",
        &path_str(&w.file("a.csv")),
        "--out-test",
        &path_str(&w.file("b.csv")),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.lines().count(), 1, "stderr: {stderr}");
    assert!(stderr.starts_with("error: "));
}

#[test]
fn fit_eval_sample_p3_pipeline() {
    let w = Workdir::new();
    let (train, test) = gen_small(&w, "30091985");
    let model = w.file("model.bin");
    let trace = w.file("trace.csv");
    let config = w.file("train.cfg");
    std::fs::write(&config, "epochs=4\nbatch=32\nhead=logistic\n").unwrap();
    run_ok(&[
        "fit",
        "--train",
        &path_str(&train),
        "--model-out",
        &path_str(&model),
        "--trace-out",
        &path_str(&trace),
        "--config",
        &path_str(&config),
        "--seed",
        "5",
    ]);
    let trace_text = std::fs::read_to_string(&trace).unwrap();
    assert_eq!(
        trace_text.lines().next().unwrap(),
        "epoch,lambda,loss_cdf,loss_deriv,loss_density,constraint,total"
    );
    assert_eq!(trace_text.lines().count(), 1 + 4 + 1); // header + epochs + final row

    let report = w.file("report.csv");
    run_ok(&[
        "eval",
        "--model",
        &path_str(&model),
        "--train",
        &path_str(&train),
        "--test",
        &path_str(&test),
        "--bootstrap",
        "200",
        "--out",
        &path_str(&report),
    ]);
    let report_text = std::fs::read_to_string(&report).unwrap();
    assert!(report_text.starts_with("mean_nll,ci_lo,ci_hi"));

    let samples = w.file("samples.csv");
    run_ok(&[
        "sample",
        "--model",
        &path_str(&model),
        "--n",
        "40",
        "--seed",
        "9",
        "--out",
        &path_str(&samples),
    ]);
    assert_eq!(std::fs::read_to_string(&samples).unwrap().lines().count(), 41);

    let p3 = w.file("p3.csv");
    run_ok(&[
        "p3-report",
        "--model",
        &path_str(&model),
        "--data",
        &path_str(&train),
        "--out",
        &path_str(&p3),
    ]);
    let p3_text = std::fs::read_to_string(&p3).unwrap();
    assert!(p3_text.starts_with("abs_u,abs_v,rel_u,rel_v"));
}

#[test]
fn fit_then_eval_reproduces_in_process_results_bit_exactly() {
    let w = Workdir::new();
    let (train, test) = gen_small(&w, "30091985");
    let model_path = w.file("model.bin");
    run_ok(&[
        "fit",
        "--train",
        &path_str(&train),
        "--model-out",
        &path_str(&model_path),
        "--epochs",
        "3",
        "--batch",
        "32",
        "--seed",
        "7",
    ]);
    // In-process: same data, same config, same seed.
    let data = twocats::cli::read_dataset(&train).unwrap();
    let cfg = twocats::training::TrainConfig {
        epochs: 3,
        batch: Some(32),
        seed: 7,
        ..Default::default()
    };
    let (in_proc, _) = twocats::training::train(
        &data,
        &cfg,
        &twocats::training::LossWeights::default(),
        twocats::model::HeadKind::Logistic,
    )
    .unwrap();
    let loaded = twocats::model::TwoCatsModel::load(&model_path).unwrap();
    let a = in_proc.to_param_vector();
    let b = loaded.to_param_vector();
    for (x, y) in a.values().iter().zip(b.values()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
    // And the evaluation agrees bit-for-bit through the CLI.
    let test_data = twocats::cli::read_dataset(&test).unwrap();
    let in_proc_report =
        twocats::eval::nll(&in_proc, &data, &test_data, 200, 30_091_985).unwrap();
    let report = w.file("report.csv");
    run_ok(&[
        "eval",
        "--model",
        &path_str(&model_path),
        "--train",
        &path_str(&train),
        "--test",
        &path_str(&test),
        "--bootstrap",
        "200",
        "--out",
        &path_str(&report),
    ]);
    let text = std::fs::read_to_string(&report).unwrap();
    let row = text.lines().nth(1).unwrap();
    let mean: f64 = row.split(',').next().unwrap().parse().unwrap();
    assert_eq!(mean.to_bits(), in_proc_report.mean.to_bits());
}

#[test]
fn eval_rejects_mismatched_csv() {
    let w = Workdir::new();
    let (train, _) = gen_small(&w, "30091985");
    let model = w.file("model.bin");
    run_ok(&[
        "fit",
        "--train",
        &path_str(&train),
        "--model-out",
        &path_str(&model),
        "--epochs",
        "2",
        "--batch",
        "32",
    ]);
    let bad = w.file("bad.csv");
    std::fs::write(&bad, "a,b,c\n1.0,2.0,3.0\n").unwrap();
    let out = run(&[
        "eval",
        "--model",
        &path_str(&model),
        "--train",
        &path_str(&train),
        "--test",
        &path_str(&bad),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error: parse:"), "stderr: {stderr}");
}

#[test]
fn validate_derivs_reports_grid() {
    let w = Workdir::new();
    let out_path = w.file("r2.csv");
    run_ok(&[
        "validate-derivs",
        "--n",
        "150",
        "--seed",
        "3",
        "--out",
        &path_str(&out_path),
    ]);
    let text = std::fs::read_to_string(&out_path).unwrap();
    assert_eq!(text.lines().next().unwrap(), "family,param,r2_du,r2_dv");
    assert_eq!(text.lines().count(), 10);
}

#[test]
fn ablate_writes_four_rows() {
    let w = Workdir::new();
    let (train, _) = gen_small(&w, "30091985");
    let out_path = w.file("ablation.csv");
    run_ok(&[
        "ablate",
        "--train",
        &path_str(&train),
        "--epochs",
        "2",
        "--batch",
        "32",
        "--out",
        &path_str(&out_path),
    ]);
    let text = std::fs::read_to_string(&out_path).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().nth(1).unwrap().starts_with("density,"));
}

#[test]
fn fixed_seed_commands_are_byte_identical_across_runs() {
    let w = Workdir::new();
    // gen-synth twice
    let (t1, e1) = gen_small(&w, "12345");
    let t1_bytes = std::fs::read(&t1).unwrap();
    let e1_bytes = std::fs::read(&e1).unwrap();
    std::fs::remove_file(&t1).unwrap();
    std::fs::remove_file(&e1).unwrap();
    let (t2, e2) = gen_small(&w, "12345");
    assert_eq!(t1_bytes, std::fs::read(&t2).unwrap());
    assert_eq!(e1_bytes, std::fs::read(&e2).unwrap());

    // fit + sample twice
    let model = w.file("m.bin");
    let samples = w.file("s.csv");
    let mut artifacts = Vec::new();
    for _ in 0..2 {
        run_ok(&[
            "fit",
            "--train",
            &path_str(&t2),
            "--model-out",
            &path_str(&model),
            "--epochs",
            "2",
            "--batch",
            "32",
            "--seed",
            "11",
        ]);
        run_ok(&[
            "sample",
            "--model",
            &path_str(&model),
            "--n",
            "25",
            "--seed",
            "13",
            "--out",
            &path_str(&samples),
        ]);
        artifacts.push((
            std::fs::read(&model).unwrap(),
            std::fs::read(&samples).unwrap(),
        ));
    }
    assert_eq!(artifacts[0].0, artifacts[1].0);
    assert_eq!(artifacts[0].1, artifacts[1].1);
}
