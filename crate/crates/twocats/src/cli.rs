//! Command-line surface: synthetic data generation, fitting, evaluation,
//! sampling, deviation reports, the ablation grid, and the derivative
//! estimator validation.
//!
//! All file formats are plain UTF-8 CSV with a header row, `.` decimals and
//! comma separators; floats are written in shortest round-trip form, so a
//! write/read cycle reproduces values exactly. Config files are flat
//! `key=value` lines mirroring the long flag names; explicit flags win.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::copula_ref::{
    make_synthetic, CopulaFamily, Marginal, ReferenceCopula, SyntheticSpec, DEFAULT_SEED,
};
use crate::empirical::{pseudo_obs, RawDataset};
use crate::error::{Error, Result};
use crate::eval;
use crate::model::{HeadKind, TwoCatsModel};
use crate::training::{AdamParams, BarrierSchedule, LossWeights, TrainConfig, TrainTrace};

#[derive(Parser)]
#[command(name = "twocats", version, about = "Neural bivariate copula toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/test pair from a reference copula.
    GenSynth(GenSynthArgs),
    /// Fit a model to a training CSV.
    Fit(FitArgs),
    /// Evaluate test negative log-likelihood with KDE marginals.
    Eval(EvalArgs),
    /// Draw pairs from a fitted model.
    Sample(SampleArgs),
    /// Report marginal deviations of a fitted model over a dataset.
    P3Report(P3Args),
    /// Train the four loss-term configurations and tabulate held-in metrics.
    Ablate(AblateArgs),
    /// Validate the empirical derivative estimator against closed forms.
    ValidateDerivs(ValidateArgs),
}

#[derive(Args)]
struct GenSynthArgs {
    /// Copula family: gaussian, clayton, or frank.
    #[arg(long)]
    family: String,
    /// Family parameter (correlation or theta).
    #[arg(long)]
    param: f64,
    #[arg(long, default_value_t = 1500)]
    n_train: usize,
    #[arg(long, default_value_t = 500)]
    n_test: usize,
    /// Marginal law: std-normal or uniform.
    #[arg(long, default_value = "std-normal")]
    marginal: String,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out_train: PathBuf,
    #[arg(long)]
    out_test: PathBuf,
}

#[derive(Args, Default)]
struct TrainFlags {
    /// Flat key=value config file; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Head CDF: logistic or gaussian.
    #[arg(long)]
    head: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Minibatch size (omit for full-batch steps).
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    /// Enable the boundary-constraint barrier.
    #[arg(long)]
    lagrangian: bool,
    #[arg(long)]
    lambda0: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Disable early stopping.
    #[arg(long)]
    no_early_stop: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    w_cdf: Option<f64>,
    #[arg(long)]
    w_deriv: Option<f64>,
    #[arg(long)]
    w_density: Option<f64>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    model_out: PathBuf,
    /// Per-epoch loss trace CSV.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct P3Args {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, default_value_t = 1500)]
    n: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Entry point: returns the process exit code.
pub fn run(args: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are success paths.
            if e.use_stderr() {
                let first = e.to_string();
                let first = first.lines().next().unwrap_or("bad arguments");
                eprintln!("error: usage: {first}");
                return 2;
            }
            print!("{e}");
            return 0;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynth(a) => gen_synth(a),
        Command::Fit(a) => fit(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Sample(a) => sample(a),
        Command::P3Report(a) => p3(a),
        Command::Ablate(a) => ablate(a),
        Command::ValidateDerivs(a) => validate(a),
    }
}

fn gen_synth(a: GenSynthArgs) -> Result<()> {
    let family = parse_family(&a.family)?;
    let marginal = match a.marginal.as_str() {
        "std-normal" => Marginal::StdNormal,
        "uniform" => Marginal::Uniform,
        other => {
            return Err(Error::Parse(format!(
                "unknown marginal '{other}' (expected std-normal or uniform)"
            )))
        }
    };
    let copula = ReferenceCopula::new(family, a.param)?;
    let spec = SyntheticSpec::new(copula, a.n_train, a.n_test, marginal, a.seed)?;
    let (train, test) = make_synthetic(&spec)?;
    write_dataset(&a.out_train, &train)?;
    write_dataset(&a.out_test, &test)?;
    println!(
        "wrote {} train rows to {} and {} test rows to {}",
        train.len(),
        a.out_train.display(),
        test.len(),
        a.out_test.display()
    );
    Ok(())
}

fn fit(a: FitArgs) -> Result<()> {
    let data = read_dataset(&a.train)?;
    let (cfg, weights, head) = resolve_train_config(&a.flags)?;
    let (model, trace) = crate::training::train(&data, &cfg, &weights, head)?;
    model.save(&a.model_out)?;
    if let Some(path) = &a.trace_out {
        write_trace(path, &trace)?;
    }
    for w in &trace.warnings {
        eprintln!("warning: {w}");
    }
    let last = trace.epochs.last().expect("at least one epoch");
    println!(
        "fit complete: {} epochs, final density loss {}, best epoch {}",
        cfg.epochs,
        last.loss_density,
        trace
            .best_epoch
            .map(|e| e.to_string())
            .unwrap_or_else(|| "-".into())
    );
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let model = TwoCatsModel::load(&a.model)?;
    let train = read_dataset(&a.train)?;
    let test = read_dataset(&a.test)?;
    let report = eval::nll(&model, &train, &test, a.bootstrap, a.seed)?;
    let line = format!(
        "mean_nll,ci_lo,ci_hi,level,resamples,n\n{},{},{},{},{},{}\n",
        report.mean, report.ci_lo, report.ci_hi, report.level, report.resamples, report.n
    );
    match &a.out {
        Some(path) => fs::write(path, &line)?,
        None => print!("{line}"),
    }
    if a.out.is_some() {
        println!(
            "mean NLL {} (95% CI [{}, {}], n={})",
            report.mean, report.ci_lo, report.ci_hi, report.n
        );
    }
    Ok(())
}

fn sample(a: SampleArgs) -> Result<()> {
    let model = TwoCatsModel::load(&a.model)?;
    let cfg = crate::sampling::SamplerConfig {
        seed: a.seed,
        ..Default::default()
    };
    let run = crate::sampling::sample_pairs(&model, a.n, &cfg)?;
    let mut out = String::from("u,v\n");
    for (u, v) in &run.pairs {
        out.push_str(&format!("{u},{v}\n"));
    }
    fs::write(&a.out, out)?;
    println!(
        "wrote {} samples to {} ({} retries)",
        run.pairs.len(),
        a.out.display(),
        run.retries
    );
    Ok(())
}

fn p3(a: P3Args) -> Result<()> {
    let model = TwoCatsModel::load(&a.model)?;
    let data = read_dataset(&a.data)?;
    let pobs = pseudo_obs(&data);
    let report = eval::p3_report(&model, &pobs)?;
    let line = format!(
        "abs_u,abs_v,rel_u,rel_v\n{},{},{},{}\n",
        report.abs_u, report.abs_v, report.rel_u, report.rel_v
    );
    match &a.out {
        Some(path) => fs::write(path, &line)?,
        None => print!("{line}"),
    }
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let data = read_dataset(&a.train)?;
    let (cfg, weights, head) = resolve_train_config(&a.flags)?;
    let base = TwoCatsModel::init(head, cfg.seed);
    let rows = eval::ablation_run(&base, &data, &cfg, &weights)?;
    let mut out = String::from("config,loss_cdf,loss_deriv,loss_density\n");
    for r in &rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.label, r.loss_cdf, r.loss_deriv, r.loss_density
        ));
    }
    fs::write(&a.out, out)?;
    println!("wrote ablation grid to {}", a.out.display());
    Ok(())
}

fn validate(a: ValidateArgs) -> Result<()> {
    let rows = eval::validate_derivative_estimator(a.n, a.seed)?;
    let mut out = String::from("family,param,r2_du,r2_dv\n");
    for r in &rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.family, r.param, r.r2_du, r.r2_dv
        ));
    }
    match &a.out {
        Some(path) => fs::write(path, &out)?,
        None => print!("{out}"),
    }
    Ok(())
}

fn parse_family(s: &str) -> Result<CopulaFamily> {
    match s.to_ascii_lowercase().as_str() {
        "gaussian" => Ok(CopulaFamily::Gaussian),
        "clayton" => Ok(CopulaFamily::Clayton),
        "frank" => Ok(CopulaFamily::Frank),
        other => Err(Error::Parse(format!(
            "unknown family '{other}' (expected gaussian, clayton, or frank)"
        ))),
    }
}

fn parse_head(s: &str) -> Result<HeadKind> {
    match s.to_ascii_lowercase().as_str() {
        "gaussian" => Ok(HeadKind::Gaussian),
        "logistic" => Ok(HeadKind::Logistic),
        other => Err(Error::Parse(format!(
            "unknown head '{other}' (expected gaussian or logistic)"
        ))),
    }
}

/// Merge defaults, config file, and explicit flags (flags win).
fn resolve_train_config(flags: &TrainFlags) -> Result<(TrainConfig, LossWeights, HeadKind)> {
    let file = match &flags.config {
        Some(path) => parse_config_file(path)?,
        None => BTreeMap::new(),
    };
    let get_f64 = |key: &str| -> Result<Option<f64>> {
        file.get(key)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("config key {key}: bad number '{v}'")))
            })
            .transpose()
    };
    let get_usize = |key: &str| -> Result<Option<usize>> {
        file.get(key)
            .map(|v| {
                v.parse::<usize>()
                    .map_err(|_| Error::Parse(format!("config key {key}: bad count '{v}'")))
            })
            .transpose()
    };
    let get_bool = |key: &str| -> Result<Option<bool>> {
        file.get(key)
            .map(|v| {
                v.parse::<bool>()
                    .map_err(|_| Error::Parse(format!("config key {key}: bad bool '{v}'")))
            })
            .transpose()
    };

    let defaults = TrainConfig::default();
    let adam_defaults = AdamParams::default();
    let w_defaults = LossWeights::default();

    let lagrangian_on = flags.lagrangian || get_bool("lagrangian")?.unwrap_or(false);
    let lagrangian = if lagrangian_on {
        let d = BarrierSchedule::default();
        Some(BarrierSchedule {
            lambda0: flags.lambda0.or(get_f64("lambda0")?).unwrap_or(d.lambda0),
            alpha: flags.alpha.or(get_f64("alpha")?).unwrap_or(d.alpha),
        })
    } else {
        None
    };
    let early_stop = if flags.no_early_stop {
        false
    } else {
        get_bool("early_stop")?.unwrap_or(true)
    };
    let cfg = TrainConfig {
        epochs: flags.epochs.or(get_usize("epochs")?).unwrap_or(defaults.epochs),
        batch: flags.batch.or(get_usize("batch")?),
        adam: AdamParams {
            lr: flags.lr.or(get_f64("lr")?).unwrap_or(adam_defaults.lr),
            beta1: flags.beta1.or(get_f64("beta1")?).unwrap_or(adam_defaults.beta1),
            beta2: flags.beta2.or(get_f64("beta2")?).unwrap_or(adam_defaults.beta2),
            eps: flags.eps.or(get_f64("eps")?).unwrap_or(adam_defaults.eps),
        },
        lagrangian,
        early_stop,
        seed: flags
            .seed
            .or(file
                .get("seed")
                .map(|v| {
                    v.parse::<u64>()
                        .map_err(|_| Error::Parse(format!("config key seed: bad value '{v}'")))
                })
                .transpose()?)
            .unwrap_or(defaults.seed),
    };
    let weights = LossWeights {
        w_cdf: flags.w_cdf.or(get_f64("w_cdf")?).unwrap_or(w_defaults.w_cdf),
        w_deriv: flags
            .w_deriv
            .or(get_f64("w_deriv")?)
            .unwrap_or(w_defaults.w_deriv),
        w_density: flags
            .w_density
            .or(get_f64("w_density")?)
            .unwrap_or(w_defaults.w_density),
    };
    let head = match (&flags.head, file.get("head")) {
        (Some(h), _) => parse_head(h)?,
        (None, Some(h)) => parse_head(h)?,
        (None, None) => HeadKind::Logistic,
    };
    cfg.validate()?;
    weights.validate()?;
    Ok((cfg, weights, head))
}

fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read config {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Parse(format!(
                "config {}:{}: expected key=value",
                path.display(),
                lineno + 1
            ))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Write a two-column dataset with header `x1,x2`.
pub fn write_dataset(path: &Path, data: &RawDataset) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "x1,x2")?;
    for (a, b) in data.rows() {
        writeln!(f, "{a},{b}")?;
    }
    Ok(())
}

/// Read a two-column CSV with one header row.
pub fn read_dataset(path: &Path) -> Result<RawDataset> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            continue; // header
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (a, b) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(Error::Parse(format!(
                    "{}:{}: expected exactly two comma-separated values",
                    path.display(),
                    lineno + 1
                )))
            }
        };
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|_| {
                Error::Parse(format!(
                    "{}:{}: '{s}' is not a number",
                    path.display(),
                    lineno + 1
                ))
            })
        };
        rows.push((parse(a)?, parse(b)?));
    }
    RawDataset::new(rows)
}

fn write_trace(path: &Path, trace: &TrainTrace) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(
        f,
        "epoch,lambda,loss_cdf,loss_deriv,loss_density,constraint,total"
    )?;
    for e in &trace.epochs {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            e.epoch, e.lambda, e.loss_cdf, e.loss_deriv, e.loss_density, e.constraint, e.total
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_round_trip_is_value_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let rows = vec![
            (0.1234567890123456, -7.062e-212),
            (std::f64::consts::PI, 1.0 / 3.0),
            (-0.0, 1e300),
        ];
        let data = RawDataset::new(rows.clone()).unwrap();
        write_dataset(&path, &data).unwrap();
        let back = read_dataset(&path).unwrap();
        for (a, b) in rows.iter().zip(back.rows()) {
            assert_eq!(a.0.to_bits(), b.0.to_bits());
            assert_eq!(a.1.to_bits(), b.1.to_bits());
        }
    }

    #[test]
    fn malformed_csv_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "x1,x2\n1.0,2.0,3.0\n").unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Parse(_))));
        fs::write(&path, "x1,x2\n1.0,abc\n").unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Parse(_))));
    }

    #[test]
    fn config_file_merges_under_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg");
        fs::write(&path, "epochs=7\nlr=0.05\nlagrangian=true\nhead=gaussian\n").unwrap();
        let flags = TrainFlags {
            config: Some(path),
            lr: Some(0.25),
            ..Default::default()
        };
        let (cfg, _, head) = resolve_train_config(&flags).unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.adam.lr, 0.25); // flag beats config
        assert!(cfg.lagrangian.is_some());
        assert_eq!(head, HeadKind::Gaussian);
    }

    #[test]
    fn bad_config_values_are_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg");
        fs::write(&path, "epochs=banana\n").unwrap();
        let flags = TrainFlags {
            config: Some(path),
            ..Default::default()
        };
        assert!(resolve_train_config(&flags).is_err());
    }

    #[test]
    fn unknown_flag_exits_nonzero() {
        let code = run(vec!["twocats".into(), "--definitely-not-a-flag".into()]);
        assert_ne!(code, 0);
    }
}
