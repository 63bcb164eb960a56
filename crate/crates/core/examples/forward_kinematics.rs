//! Nominal poses of the built-in arms, and how a perturbed arm drifts from them.
//!
//! ```text
//! cargo run --example forward_kinematics
//! ```

use gpcal::arm::{realize, true_residual, MeasurementModel, PerturbationSpec};
use gpcal::harness::robots::{RobotConfig, BUILTIN_ROBOTS};
use gpcal::kinematics::{forward_kinematics, parameter_jacobian};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for name in BUILTIN_ROBOTS {
        let robot = RobotConfig::builtin(name)?;
        let nominal = robot.nominal_table()?;
        let q: Vec<f64> = nominal.joint_limits().iter().map(|(lo, hi)| lo + 0.3 * (hi - lo)).collect();
        let pose = forward_kinematics(&nominal, &q)?;
        println!("{name} ({} joints)", nominal.dof());
        println!("  q    = {q:.3?}");
        println!("  quat = {:.5?}", pose.quat.as_slice());
        println!("  pos  = {:.5?}", pose.pos.as_slice());

        // A full-scale draw from the uncertainty bounds.
        let spec = PerturbationSpec::scaled(100.0, robot.uncertainty());
        let arm = realize(&nominal, &spec, 7, MeasurementModel::noiseless())?;
        let r = true_residual(&arm, &nominal, &q)?;
        let r: Vec<String> = r.iter().map(|v| format!("{v:.2e}")).collect();
        println!("  residual = [{}]", r.join(", "));

        let j = parameter_jacobian(&nominal, &q)?;
        let sv = j.clone().svd(false, false).singular_values;
        println!(
            "  parameter Jacobian {}x{}, singular values {:.1e} .. {:.1e}",
            j.nrows(),
            j.ncols(),
            sv.max(),
            sv.min()
        );
    }
    Ok(())
}
