//! Gaussian-process residual calibration for serial manipulators.
//!
//! The crate learns the pose error of a robot arm (measured pose minus the
//! nominal Denavit–Hartenberg prediction) with seven independent GPs, one per
//! pose component, and chooses where to measure next with a summed GP-UCB
//! rule. Expected improvement, greedy D-optimal, random sampling and a
//! classical box-constrained linearized calibration are included for
//! comparison, along with an experiment harness that writes CSV/JSON results.
//!
//! Module map:
//!
//! * [`kinematics`] – DH forward kinematics, continuous quaternions, parameter Jacobian.
//! * [`arm`] – simulated "true" arm: perturbations, noisy measurements, residual targets.
//! * [`gp`] – single-output GP regression with an SE kernel and NLML fitting.
//! * [`residual`] – the seven-GP residual model.
//! * [`acquisition`] – candidate pools, GP-UCB / EI / D-optimal / random, campaigns.
//! * [`linearized`] – box-constrained QP and iterated linearized calibration.
//! * [`harness`] – configs, built-in robots, experiments, output files.

pub mod acquisition;
pub mod arm;
pub mod error;
pub mod gp;
pub mod harness;
pub mod kinematics;
pub mod linearized;
pub mod residual;
pub mod rng;

pub use error::{Error, Result};
