//! Seven independent GPs, one per pose component, over the joint vector.
//!
//! The corrected pose is the nominal FK plus the GP means, with the
//! quaternion part renormalized after the addition.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arm::{pose_difference, TrueArm};
use crate::error::{Error, Result};
use crate::gp::{fit, optimize_hyper, GpModel, Hyperparams, OptimizerSettings, TrainingSet};
use crate::kinematics::{forward_kinematics, DhTable, Pose7, Vec7};
use crate::rng::derive_seed;

pub const AXIS_NAMES: [&str; 7] = ["qw", "qx", "qy", "qz", "px", "py", "pz"];

/// When hyperparameters are re-optimized. Between re-optimizations only the
/// factorization is extended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefitPolicy {
    /// Re-optimize on every `every`-th update; 0 disables re-optimization.
    pub every: usize,
    /// Also re-optimize on each of the first `warmup` updates.
    pub warmup: usize,
    /// Past this many observations re-optimize every `sparse_every` updates
    /// instead; 0 keeps the `every` cadence throughout.
    pub sparse_after: usize,
    pub sparse_every: usize,
    /// Optimize hyperparameters on at most this many observations, evenly
    /// strided over the history; 0 uses all of them. The final fit always
    /// uses every observation.
    pub max_points: usize,
    pub optimizer: OptimizerSettings,
}

impl Default for RefitPolicy {
    fn default() -> Self {
        Self {
            every: 5,
            warmup: 5,
            sparse_after: 0,
            sparse_every: 25,
            max_points: 0,
            // Lighter than a one-off fit: refits recur throughout a campaign.
            optimizer: OptimizerSettings {
                restarts: 2,
                max_iter: 100,
                ..OptimizerSettings::default()
            },
        }
    }
}

impl RefitPolicy {
    pub fn never() -> Self {
        Self {
            every: 0,
            warmup: 0,
            ..Self::default()
        }
    }

    /// Whether update number `count` (1-based) re-optimizes.
    pub fn reoptimizes(&self, count: usize) -> bool {
        if self.every == 0 {
            return false;
        }
        let step = if self.sparse_after > 0 && count > self.sparse_after {
            self.sparse_every.max(1)
        } else {
            self.every
        };
        count <= self.warmup || count % step == 0
    }

    /// Indices of the observations used for hyperparameter optimization.
    fn optimization_subset(&self, n: usize) -> Vec<usize> {
        if self.max_points == 0 || n <= self.max_points {
            return (0..n).collect();
        }
        let k = self.max_points;
        (0..k).map(|i| i * (n - 1) / (k - 1).max(1)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisPrediction {
    pub mean: Vec7,
    pub std: Vec7,
}

#[derive(Debug, Clone)]
pub struct ResidualModel {
    nominal: DhTable,
    /// Starting guess, kept as a second start point for every re-optimization.
    init: Hyperparams,
    hypers: Vec<Hyperparams>,
    gps: Vec<GpModel>,
    history: Vec<(Vec<f64>, Vec7)>,
}

impl ResidualModel {
    /// Model with no observations; every axis starts from `init`.
    pub fn new(nominal: DhTable, init: Hyperparams) -> Result<Self> {
        init.validate(nominal.dof())?;
        Ok(Self {
            nominal,
            hypers: vec![init.clone(); 7],
            init,
            gps: Vec::new(),
            history: Vec::new(),
        })
    }

    pub fn nominal(&self) -> &DhTable {
        &self.nominal
    }

    pub fn history(&self) -> &[(Vec<f64>, Vec7)] {
        &self.history
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    /// Per-axis GPs; empty until the first update.
    pub fn gps(&self) -> &[GpModel] {
        &self.gps
    }

    pub fn hypers(&self) -> &[Hyperparams] {
        &self.hypers
    }

    fn axis_data(&self, axis: usize) -> Result<TrainingSet> {
        TrainingSet::new(
            self.history.iter().map(|(q, _)| q.clone()).collect(),
            self.history.iter().map(|(_, r)| r[axis]).collect(),
        )
    }

    /// The model after one more observation.
    pub fn update(&self, q: &[f64], residual: &Vec7, policy: &RefitPolicy) -> Result<ResidualModel> {
        if q.len() != self.nominal.dof() {
            return Err(Error::domain("joint vector length does not match the arm"));
        }
        let mut next = ResidualModel {
            nominal: self.nominal.clone(),
            init: self.init.clone(),
            hypers: self.hypers.clone(),
            gps: Vec::new(),
            history: self.history.clone(),
        };
        next.history.push((q.to_vec(), *residual));
        let count = next.history.len();
        let reopt = policy.reoptimizes(count);
        let results: Vec<Result<(Hyperparams, GpModel)>> = (0..7)
            .into_par_iter()
            .map(|axis| {
                let hyper = &self.hypers[axis];
                if reopt {
                    let data = next.axis_data(axis)?;
                    let subset = policy.optimization_subset(data.len());
                    let opt_data = if subset.len() == data.len() {
                        data.clone()
                    } else {
                        TrainingSet::new(
                            subset.iter().map(|&i| data.inputs()[i].clone()).collect(),
                            subset.iter().map(|&i| data.targets()[i]).collect(),
                        )?
                    };
                    let settings = OptimizerSettings {
                        seed: derive_seed(policy.optimizer.seed, (count * 7 + axis) as u64),
                        ..policy.optimizer.clone()
                    };
                    // Warm start, plus a start from the initial guess so an
                    // early degenerate fit cannot persist.
                    let mut tuned = optimize_hyper(&opt_data, hyper, &settings)?;
                    if *hyper != self.init {
                        let fresh = optimize_hyper(&opt_data, &self.init, &settings)?;
                        if fresh.nlml < tuned.nlml || tuned.nlml.is_nan() {
                            tuned = fresh;
                        }
                    }
                    let gp = fit(&data, &tuned.hyper)?;
                    Ok((tuned.hyper, gp))
                } else if let Some(gp) = self.gps.get(axis) {
                    Ok((hyper.clone(), gp.extended(q.to_vec(), residual[axis])?))
                } else {
                    Ok((hyper.clone(), fit(&next.axis_data(axis)?, hyper)?))
                }
                .map_err(|e: Error| e.on_axis(axis))
            })
            .collect();
        next.hypers.clear();
        for r in results {
            let (h, gp) = r?;
            next.hypers.push(h);
            next.gps.push(gp);
        }
        Ok(next)
    }

    /// Fit all axes at once from a batch of observations, optimizing hyperparameters.
    pub fn from_observations(
        nominal: DhTable,
        init: Hyperparams,
        observations: Vec<(Vec<f64>, Vec7)>,
        optimizer: Option<&OptimizerSettings>,
    ) -> Result<Self> {
        let mut model = Self::new(nominal, init)?;
        if observations.is_empty() {
            return Ok(model);
        }
        if observations.iter().any(|(q, _)| q.len() != model.nominal.dof()) {
            return Err(Error::domain("observation joint vector length does not match the arm"));
        }
        model.history = observations;
        let results: Vec<Result<(Hyperparams, GpModel)>> = (0..7)
            .into_par_iter()
            .map(|axis| {
                let data = model.axis_data(axis)?;
                let hyper = match optimizer {
                    Some(s) => {
                        let s = OptimizerSettings {
                            seed: derive_seed(s.seed, axis as u64),
                            ..s.clone()
                        };
                        optimize_hyper(&data, &model.hypers[axis], &s)?.hyper
                    }
                    None => model.hypers[axis].clone(),
                };
                let gp = fit(&data, &hyper).map_err(|e| e.on_axis(axis))?;
                Ok((hyper, gp))
            })
            .collect();
        let mut hypers = Vec::with_capacity(7);
        for r in results {
            let (h, gp) = r?;
            hypers.push(h);
            model.gps.push(gp);
        }
        model.hypers = hypers;
        Ok(model)
    }

    /// Per-axis posterior mean and standard deviation at `q`.
    pub fn predict_residual(&self, q: &[f64]) -> Result<AxisPrediction> {
        if self.gps.is_empty() {
            return Err(Error::NotFitted);
        }
        let mut mean = Vec7::zeros();
        let mut std = Vec7::zeros();
        for (axis, gp) in self.gps.iter().enumerate() {
            let (m, v) = gp.predict(q)?;
            mean[axis] = m;
            std[axis] = v.sqrt();
        }
        Ok(AxisPrediction { mean, std })
    }

    /// Nominal FK corrected by the predicted residual mean. With no
    /// observations the zero-mean prior leaves the nominal pose unchanged.
    pub fn corrected_fk(&self, q: &[f64]) -> Result<Pose7> {
        let nominal = forward_kinematics(&self.nominal, q)?;
        if self.gps.is_empty() {
            return Ok(nominal);
        }
        let v = nominal.to_vec7() + self.predict_residual(q)?.mean;
        let pre_norm = v.fixed_rows::<4>(0).norm();
        log::debug!("corrected_fk: quaternion norm before renormalization {pre_norm}");
        Pose7::from_vec7_normalized(&v)
    }

    pub fn snapshot(&self) -> ModelSnapshot {
        ModelSnapshot {
            inputs: self.history.iter().map(|(q, _)| q.clone()).collect(),
            axes: (0..7)
                .map(|axis| AxisSnapshot {
                    axis: AXIS_NAMES[axis].to_string(),
                    hyper: self.hypers[axis].clone(),
                    targets: self.history.iter().map(|(_, r)| r[axis]).collect(),
                })
                .collect(),
        }
    }

    /// Rebuild a model from a snapshot (no re-optimization).
    pub fn from_snapshot(nominal: DhTable, snap: &ModelSnapshot) -> Result<Self> {
        if snap.axes.len() != 7 {
            return Err(Error::domain("snapshot must have 7 axes"));
        }
        let mut model = Self::new(nominal, snap.axes[0].hyper.clone())?;
        model.hypers = snap.axes.iter().map(|a| a.hyper.clone()).collect();
        if snap.inputs.is_empty() {
            return Ok(model);
        }
        model.history = snap
            .inputs
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let r = Vec7::from_fn(|axis, _| snap.axes[axis].targets.get(i).copied().unwrap_or(f64::NAN));
                (q.clone(), r)
            })
            .collect();
        for axis in 0..7 {
            let data = model.axis_data(axis)?;
            model.gps.push(fit(&data, &model.hypers[axis]).map_err(|e| e.on_axis(axis))?);
        }
        Ok(model)
    }
}

/// Free-function forms matching the operation names used elsewhere.
pub fn update(model: &ResidualModel, q: &[f64], residual: &Vec7, policy: &RefitPolicy) -> Result<ResidualModel> {
    model.update(q, residual, policy)
}

pub fn predict_residual(model: &ResidualModel, q: &[f64]) -> Result<AxisPrediction> {
    model.predict_residual(q)
}

pub fn corrected_fk(model: &ResidualModel, q: &[f64]) -> Result<Pose7> {
    model.corrected_fk(q)
}

/// Serializable training state: shared inputs plus per-axis targets and hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub inputs: Vec<Vec<f64>>,
    pub axes: Vec<AxisSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisSnapshot {
    pub axis: String,
    pub hyper: Hyperparams,
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutPoint {
    pub idx: usize,
    pub q: Vec<f64>,
    /// `|true - nominal|`
    pub err_uncal: f64,
    /// `|true - corrected|`
    pub err_cal: f64,
    /// `true - corrected` per pose component.
    pub axis_err: [f64; 7],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutReport {
    pub points: Vec<HoldoutPoint>,
    pub mean_uncal: f64,
    pub mean_cal: f64,
    pub median_uncal: f64,
    pub median_cal: f64,
}

pub(crate) fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Linear-interpolation quantile of unsorted data.
pub(crate) fn quantile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Noise-free held-out accuracy of `model` against the real arm.
pub fn holdout_error(model: &ResidualModel, arm: &TrueArm, test_set: &[Vec<f64>]) -> Result<HoldoutReport> {
    if test_set.is_empty() {
        return Err(Error::domain("holdout test set is empty"));
    }
    let points = test_set
        .iter()
        .enumerate()
        .map(|(idx, q)| {
            let truth = arm.true_pose(q)?;
            let nominal = forward_kinematics(model.nominal(), q)?;
            let corrected = model.corrected_fk(q)?;
            let d_cal = pose_difference(&truth, &corrected);
            let d_uncal = pose_difference(&truth, &nominal);
            Ok(HoldoutPoint {
                idx,
                q: q.clone(),
                err_uncal: d_uncal.norm(),
                err_cal: d_cal.norm(),
                axis_err: std::array::from_fn(|i| d_cal[i]),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let uncal: Vec<f64> = points.iter().map(|p| p.err_uncal).collect();
    let cal: Vec<f64> = points.iter().map(|p| p.err_cal).collect();
    Ok(HoldoutReport {
        mean_uncal: uncal.iter().sum::<f64>() / uncal.len() as f64,
        mean_cal: cal.iter().sum::<f64>() / cal.len() as f64,
        median_uncal: median(&uncal),
        median_cal: median(&cal),
        points,
    })
}
