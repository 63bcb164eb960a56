//! Holdout error of GP-UCB and the linearized baseline as the parameter
//! perturbation grows, with noisy measurements.
//!
//! ```text
//! cargo run --release --example perturbation_sweep -- 5
//! ```

use gpcal::acquisition::Strategy;
use gpcal::harness::config::{NoiseConfig, PerturbationConfig};
use gpcal::harness::experiment::SweepMethod;
use gpcal::harness::{sweep_perturbation, Experiment, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n_seeds: u64 = std::env::args().nth(1).map_or(Ok(5), |s| s.parse())?;
    let mut cfg = ExperimentConfig::for_robot("planar2", vec![Strategy::GpUcb], 30, (0..n_seeds).collect());
    cfg.noise_std = NoiseConfig::Isotropic(0.1);
    cfg.perturbation = PerturbationConfig::Scaled { percent: 100.0, theta_bound: Some(0.05) };
    let levels = cfg.sweep.levels.clone();
    let exp = Experiment::new(cfg)?;
    let table = sweep_perturbation(&exp, &levels)?;

    println!("{:>6} {:>12} {:>12}", "level", "gp-ucb", "linearized");
    for level in levels {
        let gp = table.median(level, SweepMethod::GpUcb).unwrap_or(f64::NAN);
        let lin = table.median(level, SweepMethod::Linearized).unwrap_or(f64::NAN);
        println!("{level:>5}% {gp:>12.4e} {lin:>12.4e}");
    }
    Ok(())
}
