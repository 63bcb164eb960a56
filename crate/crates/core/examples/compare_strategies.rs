//! Run every sampling strategy on one robot and print median holdout errors.
//!
//! ```text
//! cargo run --release --example compare_strategies -- planar2 30 10
//! ```

use std::time::Instant;

use gpcal::acquisition::Strategy;
use gpcal::harness::{run_experiment, Experiment, ExperimentConfig};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let robot = args.first().map_or("planar2", String::as_str);
    let budget: usize = args.get(1).map_or(Ok(30), |s| s.parse())?;
    let n_seeds: u64 = args.get(2).map_or(Ok(5), |s| s.parse())?;

    let cfg = ExperimentConfig::for_robot(robot, Strategy::ALL.to_vec(), budget, (0..n_seeds).collect());
    let exp = Experiment::new(cfg)?;
    let started = Instant::now();
    let outcome = run_experiment(&exp, None)?;
    println!("{robot}: budget {budget}, {n_seeds} seeds, {:.1}s", started.elapsed().as_secs_f64());
    println!("{:>10} {:>12} {:>12} {:>8}", "strategy", "uncal", "cal", "ratio");
    for s in Strategy::ALL {
        let runs: Vec<_> = outcome.records.iter().filter(|r| r.strategy == s).collect();
        let uncal = median(runs.iter().map(|r| r.holdout.mean_uncal).collect());
        let cal = median(runs.iter().map(|r| r.holdout.mean_cal).collect());
        println!("{:>10} {uncal:>12.5} {cal:>12.5} {:>8.3}", s.name(), cal / uncal);
    }
    for f in &outcome.failures {
        println!("failed: {} seed {}: {}", f.strategy, f.seed, f.error);
    }
    Ok(())
}
