//! `gpcal` command line.
//!
//! Exit codes: 0 success, 1 config error, 2 run failure(s).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gpcal::acquisition::Strategy;
use gpcal::gp::{Hyperparams, OptimizerSettings};
use gpcal::harness::{
    load_config, residual_histogram, run_experiment, run_single, sweep_perturbation, Experiment, ExperimentConfig,
    OutputDir,
};
use gpcal::kinematics::{forward_kinematics, Vec7};
use gpcal::residual::ResidualModel;
use gpcal::Error;

#[derive(Parser)]
#[command(name = "gpcal", version, about = "GP residual calibration of serial manipulators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML). Without it, the built-in `--robot` is used with defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in robot used when no config is given.
    #[arg(long, default_value = "planar2")]
    robot: String,
    /// Overrides the config's seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the measurement budget.
    #[arg(long)]
    budget: Option<usize>,
    /// Overrides the strategy list (repeatable).
    #[arg(long)]
    strategy: Vec<Strategy>,
    /// Output directory; defaults to the config's `out_dir`, else `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Nominal end-effector pose `[qw,qx,qy,qz,px,py,pz]` at the given joint values.
    Fk {
        #[command(flatten)]
        common: Common,
        /// Joint values in radians.
        #[arg(allow_negative_numbers = true, num_args = 1.., required = true)]
        q: Vec<f64>,
    },
    /// Fit the seven residual GPs offline from a CSV of `q1..qn,r_qw,r_qx,r_qy,r_qz,r_px,r_py,r_pz` rows.
    FitGp {
        #[command(flatten)]
        common: Common,
        csv: PathBuf,
    },
    /// One campaign of one strategy.
    Calibrate {
        #[command(flatten)]
        common: Common,
    },
    /// Every configured strategy over every seed.
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Holdout error of GP-UCB and the linearized baseline across perturbation levels.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Residual histogram over random configurations and arm draws.
    Histogram {
        #[command(flatten)]
        common: Common,
        /// Number of sampled configurations; defaults to the config value.
        #[arg(long)]
        samples: Option<usize>,
    },
}

enum Failure {
    Config(Error),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::ConfigParse(_) | Error::ConfigInvalid { .. } => Failure::Config(e),
            other => Failure::Run(other.to_string()),
        }
    }
}

fn experiment(common: &Common) -> Result<(Experiment, OutputDir), Failure> {
    let mut cfg = match &common.config {
        Some(path) => load_config(path).map_err(|e| match e {
            Error::Io { .. } => Failure::Config(e),
            other => other.into(),
        })?,
        None => ExperimentConfig::for_robot(&common.robot, vec![Strategy::GpUcb], 30, vec![0]),
    };
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(budget) = common.budget {
        cfg.budget = budget;
    }
    if !common.strategy.is_empty() {
        cfg.strategies = common.strategy.clone();
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let exp = Experiment::new(cfg).map_err(Failure::Config)?;
    Ok((exp, OutputDir::new(out)))
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn fk(common: &Common, q: &[f64]) -> Result<(), Failure> {
    let (exp, _) = experiment(common)?;
    if q.len() != exp.nominal.dof() {
        return Err(Failure::Config(Error::ConfigInvalid {
            field: "q".into(),
            reason: format!("{} has {} joints, got {} values", exp.robot.name, exp.nominal.dof(), q.len()),
        }));
    }
    let pose = forward_kinematics(&exp.nominal, q)?;
    let v = pose.to_vec7();
    let fields: Vec<String> = v.iter().map(|x| format!("{x:.12}")).collect();
    println!("qw,qx,qy,qz,px,py,pz");
    println!("{}", fields.join(","));
    Ok(())
}

fn read_residual_csv(path: &Path, dof: usize) -> Result<Vec<(Vec<f64>, Vec7)>, Failure> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Failure::Config(Error::ConfigParse(format!("{}: {e}", path.display()))))?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Failure::Config(Error::ConfigParse(format!("{}: {e}", path.display()))))?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| Failure::Config(Error::ConfigParse(format!("{} row {}: {e}", path.display(), i + 1))))?;
        if vals.len() != dof + 7 {
            return Err(Failure::Config(Error::ConfigParse(format!(
                "{} row {}: expected {} columns, found {}",
                path.display(),
                i + 1,
                dof + 7,
                vals.len()
            ))));
        }
        rows.push((vals[..dof].to_vec(), Vec7::from_column_slice(&vals[dof..])));
    }
    if rows.is_empty() {
        return Err(Failure::Config(Error::ConfigParse(format!("{}: no data rows", path.display()))));
    }
    Ok(rows)
}

fn fit_gp(common: &Common, csv_path: &Path) -> Result<(), Failure> {
    let (exp, out) = experiment(common)?;
    let obs = read_residual_csv(csv_path, exp.nominal.dof())?;
    let init: Hyperparams = exp.config.gp.hyper(exp.nominal.dof());
    let settings = OptimizerSettings {
        seed: exp.config.seeds[0],
        ..OptimizerSettings::default()
    };
    let n = obs.len();
    let model = ResidualModel::from_observations(exp.nominal.clone(), init, obs, Some(&settings))?;
    let snap = model.snapshot();
    let json = serde_json::to_vec_pretty(&snap).map_err(|e| Failure::Run(e.to_string()))?;
    let path = out.root().join("gp_model.json");
    gpcal::harness::output::write_atomic(&path, &json)?;
    println!("fitted {n} observations");
    for (axis, h) in model.hypers().iter().enumerate() {
        println!(
            "axis {axis}: lengthscale {:?} signal_std {:.4e} obs_noise_std {:.4e}",
            h.lengthscales, h.signal_std, h.obs_noise_std
        );
    }
    print_written(&[path]);
    Ok(())
}

fn calibrate(common: &Common) -> Result<(), Failure> {
    let (exp, out) = experiment(common)?;
    let strategy = exp.config.strategies[0];
    let seed = exp.config.seeds[0];
    let record = run_single(&exp, strategy, seed)?;
    let h = &record.holdout;
    println!(
        "{} seed {seed}: {} measurements, holdout mean error {:.6e} -> {:.6e}",
        strategy,
        record.rows.len(),
        h.mean_uncal,
        h.mean_cal
    );
    print_written(&out.write_run(&record)?);
    Ok(())
}

fn compare(common: &Common) -> Result<(), Failure> {
    let (exp, out) = experiment(common)?;
    let outcome = run_experiment(&exp, Some(&out))?;
    println!("{:<10} {:>6} {:>14} {:>14}", "strategy", "seed", "uncal", "cal");
    for r in &outcome.records {
        println!(
            "{:<10} {:>6} {:>14.6e} {:>14.6e}",
            r.strategy.name(),
            r.seed,
            r.holdout.mean_uncal,
            r.holdout.mean_cal
        );
    }
    if !outcome.records.is_empty() {
        print_written(&gpcal::harness::emit_outputs(&outcome.records, &out)?);
    }
    if let Some(p) = out.write_failures(&outcome.failures)? {
        print_written(&[p]);
    }
    if outcome.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Run(format!("{} run(s) failed", outcome.failures.len())))
    }
}

fn sweep(common: &Common) -> Result<(), Failure> {
    let (exp, out) = experiment(common)?;
    let table = sweep_perturbation(&exp, &exp.config.sweep.levels)?;
    println!("{:>8} {:<12} {:>5} {:>14}", "level", "method", "runs", "median");
    for s in &table.summary {
        println!("{:>8} {:<12} {:>5} {:>14.6e}", s.level, s.method.name(), s.runs, s.median_error);
    }
    print_written(&out.write_sweep(&table)?);
    if table.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Run(format!("{} sweep cell(s) failed", table.failures.len())))
    }
}

fn histogram(common: &Common, samples: Option<usize>) -> Result<(), Failure> {
    let (exp, out) = experiment(common)?;
    let n = samples.unwrap_or(exp.config.histogram.samples);
    let h = residual_histogram(&exp, n, exp.config.seeds[0])?;
    println!("{:<5} {:>14} {:>14} {:>10} {:>10}", "axis", "mean", "std", "skew", "kurt");
    for a in &h.axes {
        let m = &a.moments;
        println!(
            "{:<5} {:>14.6e} {:>14.6e} {:>10.4} {:>10.4}",
            a.axis, m.mean, m.std, m.skewness, m.excess_kurtosis
        );
    }
    print_written(&out.write_histogram(&h)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fk { common, q } => fk(common, q),
        Command::FitGp { common, csv } => fit_gp(common, csv),
        Command::Calibrate { common } => calibrate(common),
        Command::Compare { common } => compare(common),
        Command::Sweep { common } => sweep(common),
        Command::Histogram { common, samples } => histogram(common, *samples),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("run failed: {msg}");
            ExitCode::from(2)
        }
    }
}
