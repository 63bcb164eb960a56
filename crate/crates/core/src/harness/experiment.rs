//! Campaign orchestration, the perturbation sweep and the residual histogram.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{run_campaign, CandidatePool, RunRecord, Strategy};
use crate::arm::{realize, residual, sample_deltas, PerturbationSpec};
use crate::error::{Error, Result};
use crate::harness::config::{ArmDraws, Experiment};
use crate::harness::output::OutputDir;
use crate::linearized::{calibrate_linearized, collect_measurements, mean_pose_error};
use crate::residual::{median, AXIS_NAMES};
use crate::rng::{derive_seed, stream_rng, STREAM_BASELINE};

/// A run that failed; the others in the grid are unaffected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub strategy: Strategy,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutcome {
    pub records: Vec<RunRecord>,
    pub failures: Vec<RunFailure>,
}

fn pool_of(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::domain(format!("thread pool: {e}")))
}

/// One campaign of `strategy` under `seed`. The seed fixes the perturbed arm,
/// the measurement noise and the sampler stream, so every strategy at a given
/// seed calibrates the same arm.
pub fn run_single(exp: &Experiment, strategy: Strategy, seed: u64) -> Result<RunRecord> {
    let spec = exp.config.perturbation_spec(&exp.robot, None);
    let mut arm = realize(&exp.nominal, &spec, seed, exp.measurement(seed))?;
    let mut record = run_campaign(
        &mut arm,
        &exp.nominal,
        &exp.pool,
        strategy,
        exp.config.budget,
        seed,
        &exp.campaign_settings(),
    )?;
    record.config_hash = exp.config_hash.clone();
    Ok(record)
}

/// Every strategy × seed. Records come back in grid order (strategies outer);
/// when `out` is given each run is written as soon as it finishes.
pub fn run_experiment(exp: &Experiment, out: Option<&OutputDir>) -> Result<ExperimentOutcome> {
    let grid: Vec<(Strategy, u64)> = exp
        .config
        .strategies
        .iter()
        .flat_map(|&s| exp.config.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let results: Vec<(Strategy, u64, Result<RunRecord>)> = pool_of(exp.config.workers)?.install(|| {
        grid.par_iter()
            .map(|&(strategy, seed)| {
                let res = run_single(exp, strategy, seed).and_then(|rec| {
                    if let Some(dir) = out {
                        dir.write_run(&rec)?;
                    }
                    Ok(rec)
                });
                (strategy, seed, res)
            })
            .collect()
    });
    let mut outcome = ExperimentOutcome::default();
    for (strategy, seed, res) in results {
        match res {
            Ok(rec) => outcome.records.push(rec),
            Err(e) => {
                log::error!("{strategy} seed {seed}: {e}");
                outcome.failures.push(RunFailure {
                    strategy,
                    seed,
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMethod {
    GpUcb,
    Linearized,
}

impl SweepMethod {
    pub fn name(&self) -> &'static str {
        match self {
            SweepMethod::GpUcb => "gp-ucb",
            SweepMethod::Linearized => "linearized",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub level: f64,
    pub method: SweepMethod,
    pub seed: u64,
    /// Mean holdout pose error after calibration.
    pub holdout_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub level: f64,
    pub method: SweepMethod,
    pub runs: usize,
    pub median_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummary>,
    pub failures: Vec<String>,
}

impl SweepTable {
    pub fn median(&self, level: f64, method: SweepMethod) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.level == level && s.method == method)
            .map(|s| s.median_error)
    }
}

fn sweep_cell(exp: &Experiment, spec: &PerturbationSpec, seed: u64) -> Result<[f64; 2]> {
    let mut arm = realize(&exp.nominal, spec, seed, exp.measurement(seed))?;
    let gp = run_campaign(
        &mut arm,
        &exp.nominal,
        &exp.pool,
        Strategy::GpUcb,
        exp.config.budget,
        seed,
        &exp.campaign_settings(),
    )?
    .holdout
    .mean_cal;

    // Fresh noise stream for the baseline, random pool points.
    let mut arm = realize(&exp.nominal, spec, seed, exp.measurement(derive_seed(seed, STREAM_BASELINE)))?;
    let count = exp.config.linearized.measurements.unwrap_or(exp.config.budget);
    let count = count.min(exp.pool.len());
    let mut rng = stream_rng(seed, STREAM_BASELINE);
    let configs: Vec<Vec<f64>> = sample(&mut rng, exp.pool.len(), count)
        .into_iter()
        .map(|i| exp.pool.points()[i].clone())
        .collect();
    let measurements = collect_measurements(&mut arm, &configs)?;
    let cal = calibrate_linearized(
        &exp.nominal,
        &measurements,
        &exp.robot.param_bounds(),
        &exp.config.linearized.settings(),
    )?;
    let lin = mean_pose_error(&cal.table(&exp.nominal)?, &arm, &exp.holdout)?;
    Ok([gp, lin])
}

/// GP-UCB and the linearized baseline at each perturbation level (percent of
/// the robot's uncertainty bounds), over every configured seed.
pub fn sweep_perturbation(exp: &Experiment, levels: &[f64]) -> Result<SweepTable> {
    if levels.is_empty() {
        return Err(Error::invalid("sweep.levels", "at least one level is required"));
    }
    let grid: Vec<(f64, u64)> = levels
        .iter()
        .flat_map(|&l| exp.config.seeds.iter().map(move |&s| (l, s)))
        .collect();
    let results: Vec<(f64, u64, Result<[f64; 2]>)> = pool_of(exp.config.workers)?.install(|| {
        grid.par_iter()
            .map(|&(level, seed)| {
                let spec = exp.config.perturbation_spec(&exp.robot, Some(level));
                (level, seed, sweep_cell(exp, &spec, seed))
            })
            .collect()
    });
    let mut table = SweepTable::default();
    for (level, seed, res) in results {
        match res {
            Ok([gp, lin]) => {
                for (method, e) in [(SweepMethod::GpUcb, gp), (SweepMethod::Linearized, lin)] {
                    table.rows.push(SweepRow {
                        level,
                        method,
                        seed,
                        holdout_error: e,
                    });
                }
            }
            Err(e) => table.failures.push(format!("level {level} seed {seed}: {e}")),
        }
    }
    for &level in levels {
        for method in [SweepMethod::GpUcb, SweepMethod::Linearized] {
            let errs: Vec<f64> = table
                .rows
                .iter()
                .filter(|r| r.level == level && r.method == method)
                .map(|r| r.holdout_error)
                .collect();
            table.summary.push(SweepSummary {
                level,
                method,
                runs: errs.len(),
                median_error: median(&errs),
            });
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

impl Moments {
    /// Population moments; `std` uses the `n - 1` denominator.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let central = |k: i32| values.iter().map(|v| (v - mean).powi(k)).sum::<f64>() / n;
        let m2 = central(2);
        let (skewness, excess_kurtosis) = if m2 > 0.0 {
            (central(3) / m2.powf(1.5), central(4) / (m2 * m2) - 3.0)
        } else {
            (0.0, 0.0)
        };
        let std = if values.len() > 1 {
            (m2 * n / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            n: values.len(),
            mean,
            std,
            skewness,
            excess_kurtosis,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisHistogram {
    pub axis: String,
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
    pub moments: Moments,
}

impl AxisHistogram {
    fn build(axis: &str, values: &[f64], bins: usize, half_width: f64) -> Self {
        let edges: Vec<f64> = (0..=bins)
            .map(|k| -half_width + 2.0 * half_width * k as f64 / bins as f64)
            .collect();
        let mut counts = vec![0; bins];
        let (mut underflow, mut overflow) = (0, 0);
        for &v in values {
            if v < edges[0] {
                underflow += 1;
            } else if v > edges[bins] {
                overflow += 1;
            } else {
                let k = (((v + half_width) / (2.0 * half_width)) * bins as f64).floor() as usize;
                counts[k.min(bins - 1)] += 1;
            }
        }
        Self {
            axis: axis.to_string(),
            edges,
            counts,
            underflow,
            overflow,
            moments: Moments::of(values),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualHistogram {
    pub seed: u64,
    pub samples: usize,
    pub axes: Vec<AxisHistogram>,
}

/// Residuals of the uncalibrated arm at `n_samples` pool points, binned per
/// axis. Points come from a Latin hypercube of exactly `n_samples` points; the
/// arm is either one realization or a fresh antithetic pair per two samples
/// (see [`ArmDraws`]).
pub fn residual_histogram(exp: &Experiment, n_samples: usize, seed: u64) -> Result<ResidualHistogram> {
    if n_samples < 100 {
        return Err(Error::invalid("histogram.samples", "need at least 100 samples"));
    }
    let hc = &exp.config.histogram;
    let limits = exp.nominal.joint_limits();
    let points = CandidatePool::latin_hypercube(limits, n_samples, seed)?;
    let spec = exp.config.perturbation_spec(&exp.robot, None);
    let mut values: Vec<Vec<f64>> = (0..7).map(|_| Vec::with_capacity(n_samples)).collect();
    let mut push = |r: crate::kinematics::Vec7| {
        for (axis, v) in r.iter().enumerate() {
            values[axis].push(*v);
        }
    };
    match hc.arm_draws {
        ArmDraws::Single => {
            let mut arm = realize(&exp.nominal, &spec, seed, exp.measurement(seed))?;
            for q in points.points() {
                push(residual(&mut arm, &exp.nominal, q)?);
            }
        }
        ArmDraws::Antithetic => {
            for (k, pair) in points.points().chunks(2).enumerate() {
                let draw_seed = derive_seed(seed, k as u64);
                let deltas = sample_deltas(&spec, draw_seed);
                for (j, (q, sign)) in pair.iter().zip([1.0, -1.0]).enumerate() {
                    let mut s = PerturbationSpec::fixed(deltas.iter().map(|d| d.scaled(sign)).collect());
                    s.additive_residual = spec.additive_residual.clone();
                    let mut arm = realize(
                        &exp.nominal,
                        &s,
                        draw_seed,
                        exp.measurement(derive_seed(draw_seed, j as u64)),
                    )?;
                    push(residual(&mut arm, &exp.nominal, q)?);
                }
            }
        }
    }
    let axes = AXIS_NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| AxisHistogram::build(name, &values[i], hc.bins, hc.half_width[i]))
        .collect();
    Ok(ResidualHistogram {
        seed,
        samples: n_samples,
        axes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{ExperimentConfig, PerturbationConfig};
    use approx::assert_abs_diff_eq;

    fn small(robot: &str) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::for_robot(robot, vec![Strategy::GpUcb], 3, vec![0]);
        cfg.pool = Some(crate::acquisition::PoolSpec::Grid { resolution: 9 });
        cfg.holdout.points = 5;
        cfg.refit.optimizer.restarts = 1;
        cfg.refit.optimizer.max_iter = 20;
        cfg
    }

    #[test]
    fn one_strategy_one_seed_budget_one() {
        let mut cfg = small("planar2");
        cfg.budget = 1;
        let exp = Experiment::new(cfg).unwrap();
        let out = run_experiment(&exp, None).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].rows.len(), 1);
        assert_eq!(out.records[0].config_hash, exp.config_hash);
        assert!(out.failures.is_empty());
    }

    #[test]
    fn grid_is_complete_and_ordered() {
        let mut cfg = small("planar2");
        cfg.strategies = Strategy::ALL.to_vec();
        cfg.seeds = vec![4, 5];
        cfg.d_optimal_seed_points = 1;
        cfg.workers = 2;
        let exp = Experiment::new(cfg).unwrap();
        let out = run_experiment(&exp, None).unwrap();
        let keys: Vec<(Strategy, u64)> = out.records.iter().map(|r| (r.strategy, r.seed)).collect();
        let expect: Vec<(Strategy, u64)> = Strategy::ALL
            .iter()
            .flat_map(|&s| [(s, 4), (s, 5)])
            .collect();
        assert_eq!(keys, expect);
    }

    #[test]
    fn sweep_level_zero_and_row_counts() {
        let mut cfg = small("planar2");
        cfg.budget = 6;
        cfg.seeds = vec![1, 2];
        cfg.perturbation = PerturbationConfig::Scaled {
            percent: 100.0,
            theta_bound: None,
        };
        let exp = Experiment::new(cfg).unwrap();
        let t = sweep_perturbation(&exp, &[0.0]).unwrap();
        assert_eq!(t.rows.len(), 4);
        for r in &t.rows {
            assert!(r.holdout_error < 1e-6, "{r:?}");
        }
        assert_eq!(t.summary.len(), 2);
        assert!(sweep_perturbation(&exp, &[]).is_err());
    }

    #[test]
    fn histogram_zero_perturbation_in_centre_bin() {
        let mut cfg = small("lander6");
        cfg.perturbation = PerturbationConfig::None;
        cfg.pool = Some(crate::acquisition::PoolSpec::LatinHypercube { size: 50, seed: 0 });
        let exp = Experiment::new(cfg).unwrap();
        let h = residual_histogram(&exp, 100, 0).unwrap();
        for axis in &h.axes {
            let centre = axis.counts.len() / 2;
            assert_eq!(axis.counts[centre], 100);
            assert_eq!(axis.counts.iter().sum::<u64>(), 100);
            assert_eq!(axis.moments.mean, 0.0);
        }
        assert!(residual_histogram(&exp, 50, 0).is_err());
    }

    #[test]
    fn histogram_edges_independent_of_sample_count() {
        let mut cfg = small("lander6");
        cfg.pool = Some(crate::acquisition::PoolSpec::LatinHypercube { size: 50, seed: 0 });
        let exp = Experiment::new(cfg).unwrap();
        let a = residual_histogram(&exp, 100, 3).unwrap();
        let b = residual_histogram(&exp, 1500, 3).unwrap();
        for (x, y) in a.axes.iter().zip(&b.axes) {
            assert_eq!(x.edges, y.edges);
            assert_eq!(x.counts.iter().sum::<u64>() + x.underflow + x.overflow, 100);
            // Same distribution: spreads agree to within sampling error.
            assert!((x.moments.std - y.moments.std).abs() <= 0.35 * y.moments.std.max(1e-12));
        }
    }

    #[test]
    fn moments_of_known_sample() {
        let m = Moments::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_abs_diff_eq!(m.mean, 2.5);
        assert_abs_diff_eq!(m.std, (5.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(m.skewness, 0.0);
        // m4 / m2^2 - 3 with m2 = 1.25, m4 = 2.5625.
        assert_abs_diff_eq!(m.excess_kurtosis, 2.5625 / 1.5625 - 3.0, epsilon = 1e-12);
    }
}
