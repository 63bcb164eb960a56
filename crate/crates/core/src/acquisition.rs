//! Pool-based measurement selection and the calibration campaign loop.
//!
//! Strategies:
//!
//! * `gp-ucb` – argmax over the pool of `sum_i |mu_i(q)| + sqrt(beta_t) sigma_i(q)`
//!   across the seven residual GPs (`signed_mean` switches to the signed sum).
//! * `ei` – summed per-axis closed-form expected improvement of `|residual|`
//!   over the largest magnitude observed so far on that axis.
//! * `d-optimal` – greedy growth of `det(sum J^T J)` from the parameter
//!   Jacobians, after a few random seed points. A greedy stand-in for a
//!   convex-relaxation design.
//! * `random` – uniform over unvisited pool points.
//!
//! Pool points are never revisited and ties go to the lowest pool index.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::arm::{residual, TrueArm};
use crate::error::{Error, Result};
use crate::gp::{Hyperparams, PosteriorCache};
use crate::kinematics::{parameter_jacobian, DhTable, Vec7};
use crate::residual::{holdout_error, HoldoutReport, ModelSnapshot, RefitPolicy, ResidualModel};
use crate::rng::{stream_rng, STREAM_POOL, STREAM_SAMPLER};

/// Version of the JSON run-record layout.
pub const RUN_RECORD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PoolSpec {
    /// Full tensor grid with `resolution` points per joint, limits included.
    Grid { resolution: usize },
    /// Latin hypercube of `size` points.
    LatinHypercube { size: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    points: Vec<Vec<f64>>,
}

impl CandidatePool {
    pub fn from_spec(spec: &PoolSpec, limits: &[(f64, f64)]) -> Result<Self> {
        match *spec {
            PoolSpec::Grid { resolution } => Self::grid(limits, resolution),
            PoolSpec::LatinHypercube { size, seed } => Self::latin_hypercube(limits, size, seed),
        }
    }

    pub fn grid(limits: &[(f64, f64)], resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::domain("grid resolution must be >= 2"));
        }
        let total = resolution
            .checked_pow(limits.len() as u32)
            .filter(|n| *n <= 10_000_000)
            .ok_or_else(|| Error::domain("grid too large"))?;
        let points = (0..total)
            .map(|mut idx| {
                // First joint varies slowest.
                let mut q = vec![0.0; limits.len()];
                for (k, &(lo, hi)) in limits.iter().enumerate().rev() {
                    let i = idx % resolution;
                    idx /= resolution;
                    q[k] = lo + (hi - lo) * i as f64 / (resolution - 1) as f64;
                }
                q
            })
            .collect();
        Self::from_points(points, limits)
    }

    pub fn latin_hypercube(limits: &[(f64, f64)], size: usize, seed: u64) -> Result<Self> {
        if size == 0 {
            return Err(Error::domain("pool size must be >= 1"));
        }
        let mut rng = stream_rng(seed, STREAM_POOL);
        let mut points = vec![vec![0.0; limits.len()]; size];
        for (k, &(lo, hi)) in limits.iter().enumerate() {
            let mut strata: Vec<usize> = (0..size).collect();
            strata.shuffle(&mut rng);
            for (p, s) in points.iter_mut().zip(&strata) {
                let u: f64 = rng.random();
                p[k] = lo + (hi - lo) * (*s as f64 + u) / size as f64;
            }
        }
        Self::from_points(points, limits)
    }

    pub fn from_points(points: Vec<Vec<f64>>, limits: &[(f64, f64)]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::domain("candidate pool is empty"));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != limits.len()
                || p.iter().zip(limits).any(|(v, (lo, hi))| !(*v >= *lo && *v <= *hi))
            {
                return Err(Error::domain(format!("pool point {i} is outside the joint limits")));
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Constants of the iteration-dependent exploration weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaSchedule {
    pub delta: f64,
    pub d: f64,
    pub a: f64,
    pub b: f64,
    pub r: f64,
}

impl BetaSchedule {
    /// `delta = 0.1`, `d = dof`, `a = b = 1`, `r = widest joint range`.
    pub fn for_arm(table: &DhTable) -> Self {
        let r = table
            .joint_limits()
            .iter()
            .map(|(lo, hi)| hi - lo)
            .fold(0.0, f64::max);
        Self {
            delta: 0.1,
            d: table.dof() as f64,
            a: 1.0,
            b: 1.0,
            r,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::domain("beta delta must lie in (0, 1)"));
        }
        if [self.d, self.a, self.b, self.r].iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::domain("beta constants d, a, b, r must be positive"));
        }
        Ok(())
    }
}

/// `2 ln(2 pi^2 t^2 / (3 delta)) + 2 d ln(t^2 d a b r sqrt(ln(4 d / delta)))`.
pub fn beta_t(schedule: &BetaSchedule, t: usize) -> f64 {
    let t = t.max(1) as f64;
    let s = schedule;
    let pi2 = std::f64::consts::PI.powi(2);
    2.0 * (t * t * 2.0 * pi2 / (3.0 * s.delta)).ln()
        + 2.0 * s.d * (t * t * s.d * s.a * s.b * s.r * (4.0 * s.d / s.delta).ln().sqrt()).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    GpUcb,
    #[serde(rename = "ei")]
    ExpectedImprovement,
    DOptimal,
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::GpUcb,
        Strategy::ExpectedImprovement,
        Strategy::DOptimal,
        Strategy::Random,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::GpUcb => "gp-ucb",
            Strategy::ExpectedImprovement => "ei",
            Strategy::DOptimal => "d-optimal",
            Strategy::Random => "random",
        }
    }

    fn needs_posterior(&self) -> bool {
        matches!(self, Strategy::GpUcb | Strategy::ExpectedImprovement)
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::invalid("strategy", format!("unknown strategy `{s}`")))
    }
}

/// Per-axis posterior mean and standard deviation over every pool point.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolPredictions {
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
}

impl PoolPredictions {
    /// Direct evaluation through [`ResidualModel::predict_residual`]. An
    /// empty model yields the prior: zero mean, `sf` of each axis.
    pub fn from_model(model: &ResidualModel, pool: &CandidatePool) -> Result<Self> {
        let m = pool.len();
        let mut mean = vec![vec![0.0; m]; 7];
        let mut std = vec![vec![0.0; m]; 7];
        for (j, q) in pool.points().iter().enumerate() {
            let (mu, sd) = prior_or_posterior(model, q)?;
            for axis in 0..7 {
                mean[axis][j] = mu[axis];
                std[axis][j] = sd[axis];
            }
        }
        Ok(Self { mean, std })
    }

    fn from_caches(caches: &[PosteriorCache]) -> Self {
        Self {
            mean: caches.iter().map(|c| c.mean().to_vec()).collect(),
            std: caches
                .iter()
                .map(|c| c.variance().iter().map(|v| v.sqrt()).collect())
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.mean.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn prior_or_posterior(model: &ResidualModel, q: &[f64]) -> Result<(Vec7, Vec7)> {
    if model.is_empty() {
        let std = Vec7::from_fn(|axis, _| model.hypers()[axis].signal_std);
        Ok((Vec7::zeros(), std))
    } else {
        let p = model.predict_residual(q)?;
        Ok((p.mean, p.std))
    }
}

fn ucb_from_parts(mean: impl Iterator<Item = f64>, std: impl Iterator<Item = f64>, beta: f64, signed_mean: bool) -> f64 {
    let root = beta.max(0.0).sqrt();
    mean.zip(std)
        .map(|(m, s)| if signed_mean { m } else { m.abs() } + root * s)
        .sum()
}

/// Summed UCB of the seven residual GPs at `q`.
pub fn ucb_utility(model: &ResidualModel, q: &[f64], beta: f64, signed_mean: bool) -> Result<f64> {
    let (mu, sd) = prior_or_posterior(model, q)?;
    Ok(ucb_from_parts(mu.iter().copied(), sd.iter().copied(), beta, signed_mean))
}

/// Closed-form EI for exceeding `best` under `N(mean, std^2)`.
fn expected_improvement(mean: f64, std: f64, best: f64) -> f64 {
    let gap = mean - best;
    if std <= 0.0 {
        return gap.max(0.0);
    }
    let n = Normal::standard();
    let z = gap / std;
    gap * n.cdf(z) + std * n.pdf(z)
}

/// Index of the largest utility among unvisited points, lowest index on ties.
pub fn argmax_unvisited(utilities: &[f64], visited: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, (&u, &seen)) in utilities.iter().zip(visited).enumerate() {
        if seen {
            continue;
        }
        if best.is_none_or(|(_, b)| u > b) {
            best = Some((j, u));
        }
    }
    best.map(|(j, _)| j)
}

#[derive(Debug, Clone)]
struct DOptimalState {
    jacobians: Vec<DMatrix<f64>>,
    info: DMatrix<f64>,
    seed_points: usize,
}

/// Mutable selection state of one campaign.
#[derive(Debug, Clone)]
pub struct SamplerState {
    strategy: Strategy,
    visited: Vec<bool>,
    order: Vec<usize>,
    rng: ChaCha8Rng,
    schedule: BetaSchedule,
    signed_mean: bool,
    ei_best: [f64; 7],
    dopt: Option<DOptimalState>,
}

/// Ridge on the D-optimal information matrix so the first determinants exist.
const DOPT_RIDGE: f64 = 1e-6;

impl SamplerState {
    pub fn new(
        strategy: Strategy,
        pool: &CandidatePool,
        nominal: &DhTable,
        schedule: BetaSchedule,
        seed: u64,
    ) -> Result<Self> {
        schedule.validate()?;
        let dopt = if strategy == Strategy::DOptimal {
            let jacobians = pool
                .points()
                .iter()
                .map(|q| parameter_jacobian(nominal, q))
                .collect::<Result<Vec<_>>>()?;
            let n = 3 * nominal.dof();
            Some(DOptimalState {
                jacobians,
                info: DMatrix::identity(n, n) * DOPT_RIDGE,
                seed_points: 10,
            })
        } else {
            None
        };
        Ok(Self {
            strategy,
            visited: vec![false; pool.len()],
            order: Vec::new(),
            rng: stream_rng(seed, STREAM_SAMPLER),
            schedule,
            signed_mean: false,
            ei_best: [0.0; 7],
            dopt,
        })
    }

    pub fn with_signed_mean(mut self, signed: bool) -> Self {
        self.signed_mean = signed;
        self
    }

    /// Number of random points the D-optimal sampler takes before going greedy.
    pub fn with_d_optimal_seed_points(mut self, n: usize) -> Self {
        if let Some(d) = self.dopt.as_mut() {
            d.seed_points = n;
        }
        self
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn visited(&self) -> &[usize] {
        &self.order
    }

    pub fn is_visited(&self, idx: usize) -> bool {
        self.visited[idx]
    }

    /// Record the residual measured at pool index `idx`.
    pub fn observe(&mut self, idx: usize, residual: &Vec7) {
        if !self.visited[idx] {
            self.visited[idx] = true;
            self.order.push(idx);
        }
        for (b, r) in self.ei_best.iter_mut().zip(residual.iter()) {
            *b = b.max(r.abs());
        }
        if let Some(d) = self.dopt.as_mut() {
            let j = &d.jacobians[idx];
            d.info += j.transpose() * j;
        }
    }

    fn random_unvisited(&mut self) -> Option<usize> {
        let free: Vec<usize> = (0..self.visited.len()).filter(|&j| !self.visited[j]).collect();
        if free.is_empty() {
            None
        } else {
            Some(free[self.rng.random_range(0..free.len())])
        }
    }

    fn utilities(&self, preds: &PoolPredictions, t: usize) -> Vec<f64> {
        match self.strategy {
            Strategy::GpUcb => {
                let beta = beta_t(&self.schedule, t);
                (0..preds.len())
                    .map(|j| {
                        ucb_from_parts(
                            preds.mean.iter().map(|m| m[j]),
                            preds.std.iter().map(|s| s[j]),
                            beta,
                            self.signed_mean,
                        )
                    })
                    .collect()
            }
            Strategy::ExpectedImprovement => (0..preds.len())
                .map(|j| {
                    (0..7)
                        .map(|axis| {
                            expected_improvement(
                                preds.mean[axis][j].abs(),
                                preds.std[axis][j],
                                self.ei_best[axis],
                            )
                        })
                        .sum()
                })
                .collect(),
            _ => unreachable!("posterior-free strategy"),
        }
    }

    fn d_optimal_gains(&self) -> Vec<f64> {
        let d = self.dopt.as_ref().expect("D-optimal state");
        let n = d.info.nrows();
        let a_inv = d
            .info
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .unwrap_or_else(|| DMatrix::identity(n, n) / DOPT_RIDGE);
        d.jacobians
            .iter()
            .enumerate()
            .map(|(j, jac)| {
                if self.visited[j] {
                    return f64::NEG_INFINITY;
                }
                // log det(A + J^T J) - log det(A) = log det(I + J A^-1 J^T)
                let m = DMatrix::identity(7, 7) + jac * &a_inv * jac.transpose();
                match m.cholesky() {
                    Some(c) => 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>(),
                    None => f64::NEG_INFINITY,
                }
            })
            .collect()
    }
}

/// Pick the next pool index. `preds` is required by GP-UCB and EI; `t` is the
/// 1-based iteration.
pub fn select_next(
    state: &mut SamplerState,
    preds: Option<&PoolPredictions>,
    pool: &CandidatePool,
    t: usize,
) -> Result<usize> {
    if state.visited.len() != pool.len() {
        return Err(Error::domain("sampler state was built for a different pool"));
    }
    if state.order.len() >= pool.len() {
        return Err(Error::PoolExhausted);
    }
    let chosen = match state.strategy {
        Strategy::Random => state.random_unvisited(),
        Strategy::DOptimal => {
            let seeds = state.dopt.as_ref().map_or(0, |d| d.seed_points);
            if state.order.len() < seeds {
                state.random_unvisited()
            } else {
                argmax_unvisited(&state.d_optimal_gains(), &state.visited)
            }
        }
        Strategy::GpUcb | Strategy::ExpectedImprovement => {
            let preds = preds.ok_or_else(|| Error::domain("GP-based strategy needs pool predictions"))?;
            if preds.len() != pool.len() {
                return Err(Error::domain("pool predictions do not match the pool"));
            }
            argmax_unvisited(&state.utilities(preds, t), &state.visited)
        }
    };
    chosen.ok_or(Error::PoolExhausted)
}

/// Everything a campaign needs besides the arm, pool, strategy, budget and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSettings {
    pub beta: BetaSchedule,
    pub refit: RefitPolicy,
    pub init_hyper: Hyperparams,
    pub signed_mean: bool,
    pub d_optimal_seed_points: usize,
    /// Stop early once the instantaneous error norm drops below this.
    pub stop_threshold: Option<f64>,
    pub holdout: Vec<Vec<f64>>,
}

impl CampaignSettings {
    pub fn new(nominal: &DhTable, init_hyper: Hyperparams, holdout: Vec<Vec<f64>>) -> Self {
        Self {
            beta: BetaSchedule::for_arm(nominal),
            refit: RefitPolicy::default(),
            init_hyper,
            signed_mean: false,
            d_optimal_seed_points: 10,
            stop_threshold: None,
            holdout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub t: usize,
    pub pool_index: usize,
    pub q: Vec<f64>,
    /// `|dF_t - mu_{t-1}(q_t)|`: error of the model in hand at the new measurement.
    pub err_norm: f64,
    pub best_so_far: f64,
    /// Excluded from serialized output so that files stay byte-reproducible.
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub config_hash: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub rows: Vec<IterationRow>,
    pub holdout: HoldoutReport,
    pub model: ModelSnapshot,
}

/// Keeps one [`PosteriorCache`] per axis in step with the residual model.
struct PoolTracker {
    caches: Vec<PosteriorCache>,
}

impl PoolTracker {
    fn new(model: &ResidualModel, pool: &CandidatePool) -> Self {
        let caches = model
            .hypers()
            .iter()
            .map(|h| PosteriorCache::prior(h, pool.len()))
            .collect();
        Self { caches }
    }

    fn sync(&mut self, model: &ResidualModel, pool: &CandidatePool) {
        for (axis, gp) in model.gps().iter().enumerate() {
            let cache = &mut self.caches[axis];
            if gp.was_appended() && cache.len() + 1 == gp.data().len() {
                cache.push(gp, pool.points());
            } else {
                *cache = PosteriorCache::build(gp, pool.points());
            }
        }
    }

    fn predictions(&self) -> PoolPredictions {
        PoolPredictions::from_caches(&self.caches)
    }
}

/// Run one calibration campaign of up to `budget` measurements.
pub fn run_campaign(
    arm: &mut TrueArm,
    nominal: &DhTable,
    pool: &CandidatePool,
    strategy: Strategy,
    budget: usize,
    seed: u64,
    settings: &CampaignSettings,
) -> Result<RunRecord> {
    if budget == 0 {
        return Err(Error::domain("budget must be >= 1"));
    }
    if budget > pool.len() {
        return Err(Error::domain(format!(
            "budget {budget} exceeds the pool size {}",
            pool.len()
        )));
    }
    let mut state = SamplerState::new(strategy, pool, nominal, settings.beta, seed)?
        .with_signed_mean(settings.signed_mean)
        .with_d_optimal_seed_points(settings.d_optimal_seed_points);
    let mut model = ResidualModel::new(nominal.clone(), settings.init_hyper.clone())?;
    let mut tracker = strategy.needs_posterior().then(|| PoolTracker::new(&model, pool));
    let mut refit = settings.refit.clone();
    refit.optimizer.seed = seed;
    let mut rows = Vec::with_capacity(budget);
    let mut best = f64::INFINITY;

    for t in 1..=budget {
        let step = (|| -> Result<IterationRow> {
            let started = Instant::now();
            let preds = tracker.as_ref().map(PoolTracker::predictions);
            let idx = select_next(&mut state, preds.as_ref(), pool, t)?;
            let q = &pool.points()[idx];
            let r = residual(arm, nominal, q)?;
            let (prior_mean, _) = prior_or_posterior(&model, q)?;
            let err_norm = (r - prior_mean).norm();
            state.observe(idx, &r);
            model = model.update(q, &r, &refit)?;
            if let Some(tr) = tracker.as_mut() {
                tr.sync(&model, pool);
            }
            best = best.min(err_norm);
            Ok(IterationRow {
                t,
                pool_index: idx,
                q: q.clone(),
                err_norm,
                best_so_far: best,
                wall_time_s: started.elapsed().as_secs_f64(),
            })
        })()
        .map_err(|e| e.at_iteration(t))?;
        let stop = settings.stop_threshold.is_some_and(|th| step.err_norm < th);
        rows.push(step);
        if stop {
            break;
        }
    }

    let holdout = if settings.holdout.is_empty() {
        HoldoutReport {
            points: Vec::new(),
            mean_uncal: f64::NAN,
            mean_cal: f64::NAN,
            median_uncal: f64::NAN,
            median_cal: f64::NAN,
        }
    } else {
        holdout_error(&model, arm, &settings.holdout)?
    };
    Ok(RunRecord {
        schema_version: RUN_RECORD_SCHEMA_VERSION,
        config_hash: String::new(),
        strategy,
        seed,
        rows,
        holdout,
        model: model.snapshot(),
    })
}
