//! One GP-UCB campaign on the 2-DOF arm, printing the error curve and the
//! holdout profile before and after calibration.
//!
//! ```text
//! cargo run --release --example calibrate -- 30 4
//! ```

use gpcal::acquisition::Strategy;
use gpcal::harness::{run_single, Experiment, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let budget: usize = args.first().map_or(Ok(30), |s| s.parse())?;
    let seed: u64 = args.get(1).map_or(Ok(0), |s| s.parse())?;

    let cfg = ExperimentConfig::for_robot("planar2", vec![Strategy::GpUcb], budget, vec![seed]);
    let exp = Experiment::new(cfg)?;
    let record = run_single(&exp, Strategy::GpUcb, seed)?;

    println!("{:>3} {:>16} {:>11} {:>11}", "t", "q", "err_norm", "best");
    for row in &record.rows {
        println!("{:>3} {:>16} {:>11.3e} {:>11.3e}", row.t, format!("{:.2?}", row.q), row.err_norm, row.best_so_far);
    }

    println!("\nholdout (every 7th point)");
    for p in record.holdout.points.iter().step_by(7) {
        println!("{:>3} {:>16} {:>11.3e} -> {:>11.3e}", p.idx, format!("{:.2?}", p.q), p.err_uncal, p.err_cal);
    }
    let h = &record.holdout;
    println!("mean {:.3e} -> {:.3e} ({:.1}% of uncalibrated)", h.mean_uncal, h.mean_cal, 100.0 * h.mean_cal / h.mean_uncal);
    Ok(())
}
