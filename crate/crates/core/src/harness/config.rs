//! Experiment configuration files (TOML) and their resolution into runnable form.
//!
//! ```toml
//! robot = "planar2"
//! strategies = ["gp-ucb", "random"]
//! budget = 30
//! seeds = [0, 1, 2]
//!
//! [perturbation]
//! mode = "scaled"
//! percent = 100
//!
//! [pool]
//! kind = "grid"
//! resolution = 41
//! ```
//!
//! Every table rejects unknown keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acquisition::{BetaSchedule, CampaignSettings, CandidatePool, PoolSpec, Strategy};
use crate::arm::{LinkDelta, MeasurementModel, PerturbationSpec, ResidualField};
use crate::error::{Error, Result};
use crate::gp::Hyperparams;
use crate::harness::robots::RobotConfig;
use crate::kinematics::DhTable;
use crate::linearized::LinearizedSettings;
use crate::residual::RefitPolicy;

/// A built-in robot name or a full inline description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RobotRef {
    Builtin(String),
    Inline(RobotConfig),
}

impl RobotRef {
    pub fn resolve(&self) -> Result<RobotConfig> {
        let robot = match self {
            RobotRef::Builtin(name) => RobotConfig::builtin(name)?,
            RobotRef::Inline(cfg) => cfg.clone(),
        };
        robot.validate()?;
        Ok(robot)
    }
}

/// Defaults to the robot's full uncertainty bounds (`scaled`, 100%).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PerturbationConfig {
    None,
    /// Uniform draws within `percent`% of the robot's uncertainty bounds.
    /// `theta_bound` sets a joint-offset half-width (at 100%) for every joint.
    Scaled {
        percent: f64,
        #[serde(default)]
        theta_bound: Option<f64>,
    },
    Uniform {
        lo: Vec<LinkDelta>,
        hi: Vec<LinkDelta>,
    },
    Fixed {
        deltas: Vec<LinkDelta>,
    },
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig::Scaled {
            percent: 100.0,
            theta_bound: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseConfig {
    Isotropic(f64),
    PerAxis([f64; 7]),
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig::Isotropic(0.0)
    }
}

impl NoiseConfig {
    pub fn per_axis(&self) -> [f64; 7] {
        match *self {
            NoiseConfig::Isotropic(s) => [s; 7],
            NoiseConfig::PerAxis(v) => v,
        }
    }
}

/// Test configurations on the straight joint-space line from `from` to `to`,
/// given as fractions of every joint's range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HoldoutConfig {
    pub points: usize,
    pub from: f64,
    pub to: f64,
}

impl Default for HoldoutConfig {
    fn default() -> Self {
        Self {
            points: 50,
            from: 0.0,
            to: 1.0,
        }
    }
}

/// Initial GP hyperparameters, shared by the seven axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    pub lengthscale: f64,
    /// One lengthscale per joint instead of a shared one.
    pub ard: bool,
    pub signal_std: f64,
    pub kernel_noise_std: f64,
    pub obs_noise_std: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            lengthscale: 1.0,
            ard: false,
            signal_std: 0.1,
            kernel_noise_std: 0.0,
            obs_noise_std: 1e-3,
        }
    }
}

impl GpConfig {
    pub fn hyper(&self, dof: usize) -> Hyperparams {
        let n = if self.ard { dof } else { 1 };
        Hyperparams {
            lengthscales: vec![self.lengthscale; n],
            kernel_noise_std: self.kernel_noise_std,
            ..Hyperparams::isotropic(self.lengthscale, self.signal_std, self.obs_noise_std)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearizedConfig {
    pub max_outer: usize,
    pub axis_weights: [f64; 7],
    /// Measurements taken for the baseline; defaults to the campaign budget.
    pub measurements: Option<usize>,
}

impl Default for LinearizedConfig {
    fn default() -> Self {
        let s = LinearizedSettings::default();
        Self {
            max_outer: s.max_outer,
            axis_weights: s.axis_weights,
            measurements: None,
        }
    }
}

impl LinearizedConfig {
    pub fn settings(&self) -> LinearizedSettings {
        LinearizedSettings {
            max_outer: self.max_outer,
            axis_weights: self.axis_weights,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub levels: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            levels: vec![10.0, 50.0, 100.0, 200.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArmDraws {
    /// One perturbed arm per seed, shared by every sample.
    Single,
    /// A fresh perturbation per pair of samples, the second of each pair
    /// using the negated offsets.
    #[default]
    Antithetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistogramConfig {
    pub samples: usize,
    /// Odd bin counts put zero at the centre of the middle bin.
    pub bins: usize,
    /// Histogram range per axis is `[-half_width, half_width]`.
    pub half_width: [f64; 7],
    pub arm_draws: ArmDraws,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self {
            samples: 1500,
            bins: 41,
            half_width: [0.5; 7],
            arm_draws: ArmDraws::Antithetic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub robot: RobotRef,
    #[serde(default)]
    pub perturbation: PerturbationConfig,
    /// Smooth additive residual on top of the parametric perturbation.
    #[serde(default)]
    pub additive_residual: Option<ResidualField>,
    #[serde(default)]
    pub noise_std: NoiseConfig,
    /// Defaults to a 41-point grid per joint for two joints, else 2000 LHS points.
    #[serde(default)]
    pub pool: Option<PoolSpec>,
    pub strategies: Vec<Strategy>,
    pub budget: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub holdout: HoldoutConfig,
    /// Defaults to [`BetaSchedule::for_arm`].
    #[serde(default)]
    pub beta: Option<BetaSchedule>,
    #[serde(default)]
    pub signed_mean: bool,
    #[serde(default = "ten")]
    pub d_optimal_seed_points: usize,
    #[serde(default)]
    pub stop_threshold: Option<f64>,
    #[serde(default)]
    pub refit: RefitPolicy,
    #[serde(default)]
    pub gp: GpConfig,
    #[serde(default)]
    pub linearized: LinearizedConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub histogram: HistogramConfig,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn ten() -> usize {
    10
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    /// Minimal config for `robot` with every optional section at its default.
    pub fn for_robot(robot: &str, strategies: Vec<Strategy>, budget: usize, seeds: Vec<u64>) -> Self {
        Self {
            robot: RobotRef::Builtin(robot.into()),
            perturbation: PerturbationConfig::default(),
            additive_residual: None,
            noise_std: NoiseConfig::default(),
            pool: None,
            strategies,
            budget,
            seeds,
            holdout: HoldoutConfig::default(),
            beta: None,
            signed_mean: false,
            d_optimal_seed_points: 10,
            stop_threshold: None,
            refit: RefitPolicy::default(),
            gp: GpConfig::default(),
            linearized: LinearizedConfig::default(),
            sweep: SweepConfig::default(),
            histogram: HistogramConfig::default(),
            workers: 1,
            out_dir: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let robot = self.robot.resolve()?;
        if self.budget == 0 {
            return Err(Error::invalid("budget", "must be >= 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("seeds", "at least one seed is required"));
        }
        if self.strategies.is_empty() {
            return Err(Error::invalid("strategies", "at least one strategy is required"));
        }
        if self.workers == 0 {
            return Err(Error::invalid("workers", "must be >= 1"));
        }
        let h = self.holdout;
        if h.points == 0 || !(0.0..=1.0).contains(&h.from) || !(0.0..=1.0).contains(&h.to) {
            return Err(Error::invalid("holdout", "need points >= 1 and fractions in [0, 1]"));
        }
        if self.noise_std.per_axis().iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::invalid("noise_std", "must be finite and non-negative"));
        }
        if let Some(b) = &self.beta {
            b.validate().map_err(|e| Error::invalid("beta", e.to_string()))?;
        }
        self.gp
            .hyper(robot.dof())
            .validate(robot.dof())
            .map_err(|e| Error::invalid("gp", e.to_string()))?;
        if let PerturbationConfig::Scaled { percent, theta_bound } = self.perturbation {
            if !(percent.is_finite() && percent >= 0.0) {
                return Err(Error::invalid("perturbation.percent", "must be finite and non-negative"));
            }
            if theta_bound.is_some_and(|t| !(t.is_finite() && t >= 0.0)) {
                return Err(Error::invalid("perturbation.theta_bound", "must be finite and non-negative"));
            }
        }
        if self.sweep.levels.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::invalid("sweep.levels", "levels must be finite and non-negative"));
        }
        let hc = &self.histogram;
        if hc.bins == 0 || hc.half_width.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid("histogram", "need bins >= 1 and positive half widths"));
        }
        self.perturbation_spec(&robot, None)
            .validate(robot.dof())
            .map_err(|e| Error::invalid("perturbation", e.to_string()))?;
        Ok(())
    }

    /// Perturbation for this robot; `level` overrides the scaled percentage.
    pub fn perturbation_spec(&self, robot: &RobotConfig, level: Option<f64>) -> PerturbationSpec {
        let mode = match &self.perturbation {
            PerturbationConfig::None => match level {
                Some(l) => scaled_spec(robot, l, None),
                None => PerturbationSpec::none(robot.dof()),
            },
            PerturbationConfig::Scaled { percent, theta_bound } => {
                scaled_spec(robot, level.unwrap_or(*percent), *theta_bound)
            }
            PerturbationConfig::Uniform { lo, hi } => PerturbationSpec {
                mode: crate::arm::PerturbationMode::Uniform {
                    lo: lo.clone(),
                    hi: hi.clone(),
                },
                additive_residual: None,
            },
            PerturbationConfig::Fixed { deltas } => PerturbationSpec::fixed(deltas.clone()),
        };
        match &self.additive_residual {
            Some(field) => mode.with_additive(field.clone()),
            None => mode,
        }
    }

    /// SHA-256 over the canonical JSON form, ignoring fields that cannot
    /// change results (`workers`, `out_dir`).
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.workers = 1;
        canon.out_dir = None;
        let json = serde_json::to_string(&canon).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn scaled_spec(robot: &RobotConfig, percent: f64, theta_bound: Option<f64>) -> PerturbationSpec {
    let mut bounds = robot.uncertainty();
    if let Some(t) = theta_bound {
        for b in &mut bounds {
            b.theta = t;
        }
    }
    PerturbationSpec::scaled(percent, bounds)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_toml(&text)
}

/// A validated config with its robot, pool and holdout set materialized.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub robot: RobotConfig,
    pub nominal: DhTable,
    pub pool: CandidatePool,
    pub holdout: Vec<Vec<f64>>,
    pub config_hash: String,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let robot = config.robot.resolve()?;
        let nominal = robot.nominal_table()?;
        let pool_spec = config.pool.clone().unwrap_or(if robot.dof() <= 2 {
            PoolSpec::Grid { resolution: 41 }
        } else {
            PoolSpec::LatinHypercube { size: 2000, seed: 0 }
        });
        let pool = CandidatePool::from_spec(&pool_spec, nominal.joint_limits())
            .map_err(|e| Error::invalid("pool", e.to_string()))?;
        if config.budget > pool.len() {
            return Err(Error::invalid(
                "budget",
                format!("exceeds the pool size {}", pool.len()),
            ));
        }
        let holdout = holdout_line(nominal.joint_limits(), &config.holdout);
        let config_hash = config.hash();
        Ok(Self {
            config,
            robot,
            nominal,
            pool,
            holdout,
            config_hash,
        })
    }

    pub fn measurement(&self, seed: u64) -> MeasurementModel {
        MeasurementModel {
            noise_std: self.config.noise_std.per_axis(),
            rng_seed: seed,
        }
    }

    pub fn campaign_settings(&self) -> CampaignSettings {
        let c = &self.config;
        CampaignSettings {
            beta: c.beta.unwrap_or_else(|| BetaSchedule::for_arm(&self.nominal)),
            refit: c.refit.clone(),
            init_hyper: c.gp.hyper(self.nominal.dof()),
            signed_mean: c.signed_mean,
            d_optimal_seed_points: c.d_optimal_seed_points,
            stop_threshold: c.stop_threshold,
            holdout: self.holdout.clone(),
        }
    }
}

/// Evenly spaced points on the segment between two fractions of the joint box.
pub fn holdout_line(limits: &[(f64, f64)], h: &HoldoutConfig) -> Vec<Vec<f64>> {
    (0..h.points)
        .map(|k| {
            let s = if h.points == 1 {
                0.5
            } else {
                k as f64 / (h.points - 1) as f64
            };
            let frac = h.from + (h.to - h.from) * s;
            limits.iter().map(|(lo, hi)| lo + frac * (hi - lo)).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
robot = "planar2"
strategies = ["gp-ucb", "random"]
budget = 30
seeds = [0, 1]
"#;

    #[test]
    fn minimal_config_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.strategies, vec![Strategy::GpUcb, Strategy::Random]);
        assert_eq!(cfg.holdout.points, 50);
        assert_eq!(cfg.perturbation, PerturbationConfig::Scaled { percent: 100.0, theta_bound: None });
        let exp = Experiment::new(cfg).unwrap();
        assert_eq!(exp.pool.len(), 41 * 41);
        assert_eq!(exp.holdout.len(), 50);
        assert_eq!(exp.holdout[0], vec![-3.0, -3.0]);
        assert_eq!(exp.holdout[49], vec![3.0, 3.0]);
    }

    #[test]
    fn full_config_parses() {
        let text = r#"
robot = "wam7"
strategies = ["gp-ucb", "ei", "d-optimal", "random"]
budget = 20
seeds = [3]
noise_std = 0.1
signed_mean = true
workers = 2
out_dir = "out/x"

[perturbation]
mode = "scaled"
percent = 50
theta_bound = 0.05

[[additive_residual]]
axis = 4
joint = 0
amplitude = 0.01

[pool]
kind = "latin-hypercube"
size = 300
seed = 9

[holdout]
points = 10

[refit]
every = 10
warmup = 2
[refit.optimizer]
restarts = 1
max_iter = 50

[gp]
lengthscale = 0.5

[linearized]
max_outer = 20
measurements = 40

[sweep]
levels = [0, 100]

[histogram]
samples = 200
bins = 21
arm_draws = "single"
"#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.refit.optimizer.restarts, 1);
        assert_eq!(cfg.linearized.max_outer, 20);
        assert_eq!(cfg.histogram.arm_draws, ArmDraws::Single);
        let exp = Experiment::new(cfg.clone()).unwrap();
        assert_eq!(exp.pool.len(), 300);
        assert_eq!(exp.nominal.dof(), 7);
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{MINIMAL}\nbogus = 1\n");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::ConfigParse(_))));
        let text = format!("{MINIMAL}\n[holdout]\npoints = 5\nstep = 2\n");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::ConfigParse(_))));
        let text = format!("{MINIMAL}\n[perturbation]\nmode = \"scaled\"\npercent = 5\nextra = 1\n");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::ConfigParse(_))));
    }

    #[test]
    fn validation_names_field() {
        let bad = MINIMAL.replace("budget = 30", "budget = 0");
        match ExperimentConfig::from_toml(&bad) {
            Err(Error::ConfigInvalid { field, .. }) => assert_eq!(field, "budget"),
            other => panic!("{other:?}"),
        }
        let bad = MINIMAL.replace("seeds = [0, 1]", "seeds = []");
        assert!(matches!(ExperimentConfig::from_toml(&bad), Err(Error::ConfigInvalid { .. })));
        let bad = MINIMAL.replace("\"planar2\"", "\"scara\"");
        assert!(matches!(ExperimentConfig::from_toml(&bad), Err(Error::ConfigInvalid { .. })));
    }

    #[test]
    fn inline_robot_with_negative_bound() {
        let text = r#"
strategies = ["random"]
budget = 2
seeds = [0]
[robot]
name = "custom"
joint_limits = [[-1.0, 1.0]]
[[robot.rows]]
d = { value = 0.0, bound = 0.1 }
a = { value = 1.0, bound = -0.2 }
alpha = { value = 0.0, bound = 0.1 }
"#;
        match ExperimentConfig::from_toml(text) {
            Err(Error::ConfigInvalid { field, .. }) => assert_eq!(field, "robot.rows[0].a"),
            other => panic!("{other:?}"),
        }
        let ok = text.replace("bound = -0.2", "bound = 0.2");
        let cfg = ExperimentConfig::from_toml(&ok).unwrap();
        assert_eq!(cfg.robot.resolve().unwrap().dof(), 1);
    }

    #[test]
    fn hash_ignores_output_location() {
        let a = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let mut b = a.clone();
        b.out_dir = Some("elsewhere".into());
        b.workers = 4;
        assert_eq!(a.hash(), b.hash());
        b.budget = 31;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
