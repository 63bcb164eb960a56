//! Distribution of position residuals on the 6-DOF lander arm over random
//! configurations and random arms.
//!
//! ```text
//! cargo run --release --example residual_histogram
//! ```

use gpcal::acquisition::Strategy;
use gpcal::harness::{residual_histogram, Experiment, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig::for_robot("lander6", vec![Strategy::GpUcb], 1, vec![0]);
    let exp = Experiment::new(cfg)?;
    let h = residual_histogram(&exp, exp.config.histogram.samples, 0)?;

    for axis in h.axes.iter().filter(|a| a.axis.starts_with('p')) {
        let m = axis.moments;
        println!(
            "{}: mean {:+.2e} std {:.2e} skew {:+.2} excess kurtosis {:+.2}",
            axis.axis, m.mean, m.std, m.skewness, m.excess_kurtosis
        );
        let peak = *axis.counts.iter().max().unwrap_or(&1) as f64;
        for (k, count) in axis.counts.iter().enumerate().filter(|(_, c)| **c > 0) {
            let lo = axis.edges[k];
            let bar = "#".repeat((50.0 * *count as f64 / peak).round() as usize);
            println!("  {lo:+.3} {count:>4} {bar}");
        }
    }
    Ok(())
}
