//! Classical parametric calibration on the 7-DOF WAM: works when the error is
//! purely parametric, stalls once an unmodelled field is added.
//!
//! ```text
//! cargo run --release --example linearized_baseline
//! ```

use gpcal::acquisition::CandidatePool;
use gpcal::arm::{realize, MeasurementModel, PerturbationSpec, ResidualField, SinusoidTerm};
use gpcal::harness::config::{holdout_line, HoldoutConfig};
use gpcal::harness::robots::RobotConfig;
use gpcal::linearized::{calibrate_linearized, collect_measurements, mean_pose_error, LinearizedSettings};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let robot = RobotConfig::builtin("wam7")?;
    let nominal = robot.nominal_table()?;
    let limits = nominal.joint_limits().to_vec();
    let configs = CandidatePool::latin_hypercube(&limits, 60, 1)?.points().to_vec();
    let holdout = holdout_line(&limits, &HoldoutConfig::default());

    let field = ResidualField {
        terms: vec![
            SinusoidTerm { axis: 4, joint: 0, amplitude: 5e-3, frequency: 1.0, phase: 0.0 },
            SinusoidTerm { axis: 6, joint: 1, amplitude: 5e-3, frequency: 1.0, phase: 0.0 },
        ],
    };
    let parametric = PerturbationSpec::scaled(10.0, robot.uncertainty());
    for (label, spec) in [("parametric", parametric.clone()), ("with field", parametric.with_additive(field))] {
        let mut arm = realize(&nominal, &spec, 0, MeasurementModel::noiseless())?;
        let measurements = collect_measurements(&mut arm, &configs)?;
        let result = calibrate_linearized(&nominal, &measurements, &robot.param_bounds(), &LinearizedSettings::default())?;
        let before = mean_pose_error(&nominal, &arm, &holdout)?;
        let after = mean_pose_error(&result.table(&nominal)?, &arm, &holdout)?;
        println!(
            "{label:<11} {} iterations, rank deficient: {}, holdout {before:.3e} -> {after:.3e}",
            result.iterations, result.rank_deficient
        );
    }
    Ok(())
}
