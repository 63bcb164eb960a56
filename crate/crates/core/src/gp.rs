//! Exact single-output Gaussian Process regression.
//!
//! Zero prior mean, squared-exponential kernel
//! `k(x, x') = sf^2 exp(-|x - x'|^2 / (2 l^2)) + sn^2 delta`, where the delta is
//! index based (it fires for the same training element, never for two equal
//! inputs), plus observation noise `se^2 I` on the training block.
//!
//! Hyperparameters are fitted by minimizing the negative log marginal
//! likelihood with projected gradient descent in log space.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, STREAM_HYPER};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// One entry for an isotropic kernel, or one per input dimension.
    pub lengthscales: Vec<f64>,
    pub signal_std: f64,
    pub kernel_noise_std: f64,
    pub obs_noise_std: f64,
}

impl Hyperparams {
    pub fn isotropic(lengthscale: f64, signal_std: f64, obs_noise_std: f64) -> Self {
        Self {
            lengthscales: vec![lengthscale],
            signal_std,
            kernel_noise_std: 0.0,
            obs_noise_std,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.lengthscales.len() != 1 && self.lengthscales.len() != dim {
            return Err(Error::domain(format!(
                "{} lengthscales for {dim}-dimensional inputs",
                self.lengthscales.len()
            )));
        }
        if self.lengthscales.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::domain("lengthscales must be finite and > 0"));
        }
        if !(self.signal_std.is_finite() && self.signal_std > 0.0) {
            return Err(Error::domain("signal_std must be finite and > 0"));
        }
        for (name, v) in [
            ("kernel_noise_std", self.kernel_noise_std),
            ("obs_noise_std", self.obs_noise_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::domain(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    fn lengthscale(&self, k: usize) -> f64 {
        if self.lengthscales.len() == 1 {
            self.lengthscales[0]
        } else {
            self.lengthscales[k]
        }
    }

    /// Variance added on the diagonal of the training block.
    fn diagonal_noise(&self) -> f64 {
        self.kernel_noise_std.powi(2) + self.obs_noise_std.powi(2)
    }

    fn scaled_sqdist(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .zip(y)
            .enumerate()
            .map(|(k, (a, b))| ((a - b) / self.lengthscale(k)).powi(2))
            .sum()
    }

    fn se(&self, x: &[f64], y: &[f64]) -> f64 {
        self.signal_std.powi(2) * (-0.5 * self.scaled_sqdist(x, y)).exp()
    }
}

/// SE kernel value. `same_element` switches on the nugget term.
pub fn se_kernel(x: &[f64], y: &[f64], same_element: bool, hyper: &Hyperparams) -> f64 {
    let nugget = if same_element {
        hyper.kernel_noise_std.powi(2)
    } else {
        0.0
    };
    hyper.se(x, y) + nugget
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl TrainingSet {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::domain("inputs and targets differ in length"));
        }
        if let Some(first) = inputs.first() {
            let dim = first.len();
            if inputs.iter().any(|x| x.len() != dim) {
                return Err(Error::domain("inputs have mixed dimensions"));
            }
        }
        if inputs.iter().flatten().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::domain("training data must be finite"));
        }
        Ok(Self { inputs, targets })
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    fn require_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::domain("training set is empty"))
        } else {
            Ok(())
        }
    }
}

/// Kernel matrix of the training block including diagonal noise, and the SE part alone.
fn train_kernel(data: &TrainingSet, hyper: &Hyperparams) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = data.len();
    let mut k_se = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = hyper.se(&data.inputs[i], &data.inputs[j]);
            k_se[(i, j)] = v;
            k_se[(j, i)] = v;
        }
    }
    let mut k = k_se.clone();
    for i in 0..n {
        k[(i, i)] += hyper.diagonal_noise();
    }
    (k, k_se)
}

/// Cholesky with the escalating jitter ladder. Returns the factor and the jitter used.
fn cholesky_with_jitter(k: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let n = k.nrows();
    let mean_diag = (k.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut jitter = 0.0;
    let mut rel = JITTER_START;
    loop {
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if let Some(ch) = kj.cholesky() {
            return Ok((ch.unpack(), jitter));
        }
        if rel > JITTER_MAX * (1.0 + 1e-9) {
            return Err(Error::IllConditioned { jitter });
        }
        jitter = rel * mean_diag;
        rel *= 10.0;
    }
}

fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.solve_lower_triangular(b)
        .expect("Cholesky factor has a positive diagonal")
}

fn solve_upper_transposed(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.tr_solve_lower_triangular(b)
        .expect("Cholesky factor has a positive diagonal")
}

/// A GP conditioned on its training set.
#[derive(Debug, Clone)]
pub struct GpModel {
    hyper: Hyperparams,
    data: TrainingSet,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
    appended: bool,
}

/// Condition a GP on `data`.
pub fn fit(data: &TrainingSet, hyper: &Hyperparams) -> Result<GpModel> {
    data.require_nonempty()?;
    hyper.validate(data.dim())?;
    let (k, _) = train_kernel(data, hyper);
    let (chol, jitter) = cholesky_with_jitter(&k)?;
    let y = DVector::from_column_slice(&data.targets);
    let alpha = solve_upper_transposed(&chol, &solve_lower(&chol, &y));
    Ok(GpModel {
        hyper: hyper.clone(),
        data: data.clone(),
        chol,
        alpha,
        jitter,
        appended: false,
    })
}

impl GpModel {
    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn data(&self) -> &TrainingSet {
        &self.data
    }

    /// Lower Cholesky factor of the (jittered) training covariance.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// True when this model came out of [`GpModel::extended`] by appending a
    /// factor row, i.e. its factor extends the parent's unchanged.
    pub fn was_appended(&self) -> bool {
        self.appended
    }

    /// Prior variance of the latent function at a test input.
    pub fn prior_variance(&self) -> f64 {
        self.hyper.signal_std.powi(2)
    }

    fn cross_kernel(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.data.len(),
            self.data.inputs.iter().map(|xi| self.hyper.se(xi, x)),
        )
    }

    /// Posterior mean and variance of the latent function at `x`.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        if x.len() != self.data.dim() {
            return Err(Error::domain(format!(
                "query has dimension {}, model expects {}",
                x.len(),
                self.data.dim()
            )));
        }
        let ks = self.cross_kernel(x);
        let mean = ks.dot(&self.alpha);
        let v = solve_lower(&self.chol, &ks);
        let var = (self.prior_variance() - v.norm_squared()).max(0.0);
        Ok((mean, var))
    }

    /// The model with one more observation and unchanged hyperparameters.
    ///
    /// Appends a row to the Cholesky factor in `O(N^2)`; if the new pivot is
    /// not positive the whole factorization is redone with the jitter ladder.
    pub fn extended(&self, x: Vec<f64>, y: f64) -> Result<GpModel> {
        let mut inputs = self.data.inputs.clone();
        let mut targets = self.data.targets.clone();
        inputs.push(x);
        targets.push(y);
        let data = TrainingSet::new(inputs, targets)?;
        let n = self.data.len();
        let x_new = &data.inputs[n];
        let k_cross = self.cross_kernel(x_new);
        let l12 = solve_lower(&self.chol, &k_cross);
        let kss = self.hyper.se(x_new, x_new) + self.hyper.diagonal_noise() + self.jitter;
        let pivot = kss - l12.norm_squared();
        // Reject pivots that are tiny relative to the diagonal: the appended
        // factor would be numerically meaningless.
        if !(pivot > 1e-12 * kss) {
            return fit(&data, &self.hyper);
        }
        let mut chol = self.chol.clone().resize(n + 1, n + 1, 0.0);
        for j in 0..n {
            chol[(n, j)] = l12[j];
        }
        chol[(n, n)] = pivot.sqrt();
        let yv = DVector::from_column_slice(&data.targets);
        let alpha = solve_upper_transposed(&chol, &solve_lower(&chol, &yv));
        Ok(GpModel {
            hyper: self.hyper.clone(),
            data,
            chol,
            alpha,
            jitter: self.jitter,
            appended: true,
        })
    }
}

/// Free function form of [`GpModel::predict`].
pub fn predict(model: &GpModel, x: &[f64]) -> Result<(f64, f64)> {
    model.predict(x)
}

/// Layout of the log-hyperparameter vector used by [`nlml`] and the optimizer:
/// `[ln l_1 .. ln l_L, ln sf, ln sn, ln se]`.
fn log_params(h: &Hyperparams) -> Vec<f64> {
    h.lengthscales
        .iter()
        .map(|l| l.ln())
        .chain([
            h.signal_std.ln(),
            h.kernel_noise_std.ln(),
            h.obs_noise_std.ln(),
        ])
        .collect()
}

fn from_log_params(theta: &[f64], n_len: usize) -> Hyperparams {
    Hyperparams {
        lengthscales: theta[..n_len].iter().map(|v| v.exp()).collect(),
        signal_std: theta[n_len].exp(),
        kernel_noise_std: theta[n_len + 1].exp(),
        obs_noise_std: theta[n_len + 2].exp(),
    }
}

/// Negative log marginal likelihood and its gradient with respect to
/// `[ln l_1 .. ln l_L, ln sf, ln sn, ln se]`.
pub fn nlml(data: &TrainingSet, hyper: &Hyperparams) -> Result<(f64, Vec<f64>)> {
    data.require_nonempty()?;
    hyper.validate(data.dim())?;
    let n = data.len();
    let (k, k_se) = train_kernel(data, hyper);
    let (chol, _) = cholesky_with_jitter(&k)?;
    let y = DVector::from_column_slice(&data.targets);
    let alpha = solve_upper_transposed(&chol, &solve_lower(&chol, &y));
    let log_det_half: f64 = chol.diagonal().iter().map(|v| v.ln()).sum();
    let value = 0.5 * y.dot(&alpha) + log_det_half + 0.5 * n as f64 * LN_2PI;

    // W = K^-1 - alpha alpha^T; dNLML/dtheta = 0.5 tr(W dK/dtheta).
    let l_inv = chol
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .expect("Cholesky factor has a positive diagonal");
    let mut w = l_inv.tr_mul(&l_inv);
    w.ger(-1.0, &alpha, &alpha, 1.0);

    let n_len = hyper.lengthscales.len();
    let mut grad = vec![0.0; n_len + 3];
    let mut trace_w = 0.0;
    for i in 0..n {
        trace_w += w[(i, i)];
        for j in 0..n {
            let wk = w[(i, j)] * k_se[(i, j)];
            grad[n_len] += wk;
            if n_len == 1 {
                grad[0] += 0.5 * wk * hyper.scaled_sqdist(&data.inputs[i], &data.inputs[j]);
            } else {
                for (kdim, g) in grad.iter_mut().take(n_len).enumerate() {
                    let diff = (data.inputs[i][kdim] - data.inputs[j][kdim]) / hyper.lengthscales[kdim];
                    *g += 0.5 * wk * diff * diff;
                }
            }
        }
    }
    grad[n_len + 1] = hyper.kernel_noise_std.powi(2) * trace_w;
    grad[n_len + 2] = hyper.obs_noise_std.powi(2) * trace_w;
    Ok((value, grad))
}

/// Settings of the multi-start log-space gradient descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
    /// Fit the kernel nugget `sn`. Off by default: it is not separable from `se`.
    pub fit_kernel_noise: bool,
    pub fit_obs_noise: bool,
    /// Box on every `ln l`.
    pub log_lengthscale_bounds: (f64, f64),
    pub log_signal_bounds: (f64, f64),
    pub log_noise_bounds: (f64, f64),
    /// Stop when the projected gradient's max-norm drops below this.
    pub grad_tol: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            restarts: 8,
            max_iter: 500,
            seed: 0,
            fit_kernel_noise: false,
            fit_obs_noise: true,
            log_lengthscale_bounds: (1e-3f64.ln(), 1e3f64.ln()),
            log_signal_bounds: (1e-8f64.ln(), 1e3f64.ln()),
            log_noise_bounds: (1e-6f64.ln(), 1e2f64.ln()),
            grad_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperFit {
    pub hyper: Hyperparams,
    pub nlml: f64,
    /// Every restart failed numerically and `init` was returned.
    pub fell_back: bool,
}

struct Objective<'a> {
    data: &'a TrainingSet,
    template: &'a Hyperparams,
    free: Vec<bool>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Objective<'_> {
    fn hyper(&self, theta: &[f64]) -> Hyperparams {
        let mut h = from_log_params(theta, self.template.lengthscales.len());
        let n_len = self.template.lengthscales.len();
        if !self.free[n_len + 1] {
            h.kernel_noise_std = self.template.kernel_noise_std;
        }
        if !self.free[n_len + 2] {
            h.obs_noise_std = self.template.obs_noise_std;
        }
        h
    }

    fn eval(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (v, mut g) = nlml(self.data, &self.hyper(theta)).ok()?;
        if !v.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return None;
        }
        for (gi, free) in g.iter_mut().zip(&self.free) {
            if !free {
                *gi = 0.0;
            }
        }
        Some((v, g))
    }

    fn project(&self, theta: &mut [f64]) {
        for i in 0..theta.len() {
            if self.free[i] {
                theta[i] = theta[i].clamp(self.lo[i], self.hi[i]);
            }
        }
    }

    fn projected_grad_norm(&self, theta: &[f64], g: &[f64]) -> f64 {
        let mut t: Vec<f64> = theta.iter().zip(g).map(|(t, g)| t - g).collect();
        self.project(&mut t);
        t.iter()
            .zip(theta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Projected gradient descent with Armijo backtracking and step growth.
    fn descend(&self, mut theta: Vec<f64>, max_iter: usize, grad_tol: f64) -> Option<(Vec<f64>, f64)> {
        self.project(&mut theta);
        let (mut f, mut g) = self.eval(&theta)?;
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut step = 0.1 / gmax.max(1e-12);
        for _ in 0..max_iter {
            if self.projected_grad_norm(&theta, &g) < grad_tol {
                break;
            }
            let mut accepted = None;
            while step > 1e-14 {
                let mut trial: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - step * gi).collect();
                self.project(&mut trial);
                let decrease: f64 = theta
                    .iter()
                    .zip(&trial)
                    .zip(&g)
                    .map(|((t, tr), gi)| gi * (t - tr))
                    .sum();
                if let Some((ft, gt)) = self.eval(&trial) {
                    if ft <= f - 1e-4 * decrease {
                        accepted = Some((trial, ft, gt));
                        break;
                    }
                }
                step *= 0.5;
            }
            let Some((trial, ft, gt)) = accepted else {
                break;
            };
            let improvement = f - ft;
            theta = trial;
            f = ft;
            g = gt;
            step *= 2.0;
            if improvement <= 1e-12 * (1.0 + f.abs()) {
                break;
            }
        }
        Some((theta, f))
    }
}

/// Multi-start gradient descent on the NLML. Restart 0 starts at `init`; the
/// others start at `init` scaled per free parameter by a log-uniform factor in
/// `[0.1, 10]`. The best result never has a higher NLML than `init`.
pub fn optimize_hyper(
    data: &TrainingSet,
    init: &Hyperparams,
    settings: &OptimizerSettings,
) -> Result<HyperFit> {
    data.require_nonempty()?;
    init.validate(data.dim())?;
    let restarts = settings.restarts.max(1);
    let n_len = init.lengthscales.len();
    let mut free = vec![true; n_len + 3];
    free[n_len + 1] = settings.fit_kernel_noise;
    free[n_len + 2] = settings.fit_obs_noise;
    let mut lo = vec![settings.log_lengthscale_bounds.0; n_len];
    let mut hi = vec![settings.log_lengthscale_bounds.1; n_len];
    lo.push(settings.log_signal_bounds.0);
    hi.push(settings.log_signal_bounds.1);
    for _ in 0..2 {
        lo.push(settings.log_noise_bounds.0);
        hi.push(settings.log_noise_bounds.1);
    }
    let obj = Objective {
        data,
        template: init,
        free,
        lo,
        hi,
    };

    // A zero noise level has no logarithm; start such parameters at their lower bound.
    let mut base = log_params(init);
    for (i, v) in base.iter_mut().enumerate() {
        if !v.is_finite() {
            *v = obj.lo[i];
        }
    }

    let mut best: Option<(Hyperparams, f64)> = nlml(data, init).ok().map(|(v, _)| (init.clone(), v));
    let mut any_success = false;
    let mut rng = stream_rng(settings.seed, STREAM_HYPER);
    for r in 0..restarts {
        let mut start = base.clone();
        if r > 0 {
            for (i, s) in start.iter_mut().enumerate() {
                let u: f64 = rng.random_range(-1.0..1.0);
                if obj.free[i] {
                    *s += u * 10f64.ln();
                }
            }
        }
        if let Some((theta, f)) = obj.descend(start, settings.max_iter, settings.grad_tol) {
            any_success = true;
            if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
                best = Some((obj.hyper(&theta), f));
            }
        }
    }
    match best {
        Some((hyper, nlml)) => Ok(HyperFit {
            hyper,
            nlml,
            fell_back: !any_success,
        }),
        None => {
            log::warn!("optimize_hyper: every restart failed, keeping the initial hyperparameters");
            Ok(HyperFit {
                hyper: init.clone(),
                nlml: f64::NAN,
                fell_back: true,
            })
        }
    }
}

/// Posterior mean and variance of one GP over a fixed set of test points,
/// maintained incrementally as observations are appended.
///
/// Stores `W = L^-1 K(X, P)` row by row so that an appended observation costs
/// `O(N M)` instead of refactoring.
#[derive(Debug, Clone)]
pub struct PosteriorCache {
    rows: Vec<Vec<f64>>,
    z: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
    prior_var: f64,
}

impl PosteriorCache {
    /// Empty-data cache: prior mean 0, prior variance `sf^2` everywhere.
    pub fn prior(hyper: &Hyperparams, n_points: usize) -> Self {
        let prior_var = hyper.signal_std.powi(2);
        Self {
            rows: Vec::new(),
            z: Vec::new(),
            mean: vec![0.0; n_points],
            var: vec![prior_var; n_points],
            prior_var,
        }
    }

    /// Full rebuild for `model` over `points`.
    pub fn build(model: &GpModel, points: &[Vec<f64>]) -> Self {
        let mut cache = Self::prior(model.hyper(), points.len());
        for i in 0..model.data.len() {
            cache.append_row(model, i, points);
        }
        cache
    }

    /// Absorb the last observation of `model`, which must be this cache's
    /// model plus exactly one point with the same hyperparameters and factor
    /// prefix (as produced by [`GpModel::extended`] without a refactor).
    pub fn push(&mut self, model: &GpModel, points: &[Vec<f64>]) {
        debug_assert_eq!(model.data.len(), self.rows.len() + 1);
        self.append_row(model, self.rows.len(), points);
    }

    fn append_row(&mut self, model: &GpModel, i: usize, points: &[Vec<f64>]) {
        let xi = &model.data.inputs[i];
        let mut row: Vec<f64> = points.iter().map(|p| model.hyper.se(xi, p)).collect();
        for (k, prev) in self.rows.iter().enumerate() {
            let lik = model.chol[(i, k)];
            if lik != 0.0 {
                for (r, w) in row.iter_mut().zip(prev) {
                    *r -= lik * w;
                }
            }
        }
        let lii = model.chol[(i, i)];
        let zi = (model.data.targets[i] - (0..i).map(|k| model.chol[(i, k)] * self.z[k]).sum::<f64>()) / lii;
        for ((r, m), v) in row.iter_mut().zip(&mut self.mean).zip(&mut self.var) {
            *r /= lii;
            *m += *r * zi;
            *v = (*v - *r * *r).max(0.0);
        }
        self.rows.push(row);
        self.z.push(zi);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> &[f64] {
        &self.var
    }

    pub fn prior_variance(&self) -> f64 {
        self.prior_var
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dense_oracle(data: &TrainingSet, hyper: &Hyperparams, x: &[f64]) -> (f64, f64) {
        // (K + se^2 I) solved by LU, no Cholesky anywhere.
        let n = data.len();
        let k = DMatrix::from_fn(n, n, |i, j| {
            let mut v = se_kernel(&data.inputs()[i], &data.inputs()[j], i == j, hyper);
            if i == j {
                v += hyper.obs_noise_std.powi(2);
            }
            v
        });
        let ks = DVector::from_fn(n, |i, _| se_kernel(&data.inputs()[i], x, false, hyper));
        let lu = k.lu();
        let alpha = lu.solve(&DVector::from_column_slice(data.targets())).unwrap();
        let v = lu.solve(&ks).unwrap();
        let prior = se_kernel(x, x, false, hyper);
        (ks.dot(&alpha), prior - ks.dot(&v))
    }

    fn random_data(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> TrainingSet {
        let inputs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let targets = inputs
            .iter()
            .map(|x| x.iter().map(|v| v.sin()).sum::<f64>() + 0.1 * rng.random_range(-1.0..1.0))
            .collect();
        TrainingSet::new(inputs, targets).unwrap()
    }

    #[test]
    fn kernel_examples() {
        let h = Hyperparams {
            lengthscales: vec![0.7],
            signal_std: 1.0,
            kernel_noise_std: 0.1,
            obs_noise_std: 0.0,
        };
        assert_abs_diff_eq!(se_kernel(&[0.3, 1.0], &[0.3, 1.0], true, &h), 1.01, epsilon = 1e-15);
        assert_abs_diff_eq!(se_kernel(&[0.3, 1.0], &[0.3, 1.0], false, &h), 1.0, epsilon = 1e-15);
        assert_eq!(se_kernel(&[0.0], &[1e6], false, &h), 0.0);
        let h = Hyperparams::isotropic(1.0, 2.0, 0.0);
        assert_abs_diff_eq!(
            se_kernel(&[0.0, 0.0], &[1.0, 0.0], false, &h),
            4.0 * (-0.5f64).exp(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn single_point_interpolates() {
        let data = TrainingSet::new(vec![vec![0.4, -0.2]], vec![1.7]).unwrap();
        let m = fit(&data, &Hyperparams::isotropic(1.0, 1.0, 0.0)).unwrap();
        let (mu, var) = m.predict(&[0.4, -0.2]).unwrap();
        assert_abs_diff_eq!(mu, 1.7, epsilon = 1e-12);
        assert!(var <= 1e-9);
    }

    #[test]
    fn duplicate_inputs_average() {
        let data = TrainingSet::new(vec![vec![0.5], vec![0.5]], vec![1.0, 2.0]).unwrap();
        let m = fit(&data, &Hyperparams::isotropic(1.0, 1.0, 0.1)).unwrap();
        let (mu, _) = m.predict(&[0.5]).unwrap();
        assert!(mu > 1.0 && mu < 2.0);
        // Without noise the duplicate is only rescued by jitter.
        let m = fit(&data, &Hyperparams::isotropic(1.0, 1.0, 0.0)).unwrap();
        assert!(m.jitter() > 0.0);
    }

    #[test]
    fn sine_interpolation_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let xs: Vec<f64> = (0..50).map(|_| rng.random_range(-3.0..3.0)).collect();
        let data = TrainingSet::new(
            xs.iter().map(|x| vec![*x]).collect(),
            xs.iter().map(|x| x.sin()).collect(),
        )
        .unwrap();
        let m = fit(&data, &Hyperparams::isotropic(1.0, 1.0, 1e-3)).unwrap();
        for x in &xs {
            let (mu, _) = m.predict(&[*x]).unwrap();
            assert!((mu - x.sin()).abs() <= 3e-3);
        }
    }

    #[test]
    fn far_query_reverts_to_prior() {
        let data = TrainingSet::new(vec![vec![0.0], vec![0.3]], vec![1.0, -0.5]).unwrap();
        let h = Hyperparams::isotropic(0.5, 1.5, 0.01);
        let m = fit(&data, &h).unwrap();
        let (mu, var) = m.predict(&[10.0 * 0.5 + 0.3]).unwrap();
        assert!(mu.abs() < 1e-6);
        assert!((var - 2.25).abs() <= 0.01 * 2.25);
    }

    #[test]
    fn three_point_dense_oracle() {
        let data = TrainingSet::new(vec![vec![-1.0], vec![0.2], vec![1.5]], vec![0.3, -0.4, 0.9]).unwrap();
        let h = Hyperparams::isotropic(0.8, 1.3, 0.05);
        let m = fit(&data, &h).unwrap();
        for x in [-2.0, -0.5, 0.0, 0.7, 3.0] {
            let (mu, var) = m.predict(&[x]).unwrap();
            let (mu_o, var_o) = dense_oracle(&data, &h, &[x]);
            assert_abs_diff_eq!(mu, mu_o, epsilon = 1e-10);
            assert_abs_diff_eq!(var, var_o, epsilon = 1e-10);
        }
    }

    #[test]
    fn nlml_standard_normal() {
        let data = TrainingSet::new(vec![vec![0.0]], vec![0.0]).unwrap();
        // sf^2 + se^2 = 0.64 + 0.36 = 1
        let h = Hyperparams::isotropic(1.0, 0.8, 0.6);
        let (v, _) = nlml(&data, &h).unwrap();
        assert_abs_diff_eq!(v, 0.5 * LN_2PI, epsilon = 1e-12);
    }

    #[test]
    fn nlml_complexity_penalty() {
        let data = TrainingSet::new(vec![vec![0.0], vec![1.0], vec![2.5]], vec![0.0; 3]).unwrap();
        let a = nlml(&data, &Hyperparams::isotropic(1.0, 1.0, 0.1)).unwrap().0;
        let b = nlml(&data, &Hyperparams::isotropic(1.0, 2.0, 0.1)).unwrap().0;
        assert!(b > a);
    }

    fn fd_check(data: &TrainingSet, h: &Hyperparams) {
        let (_, g) = nlml(data, h).unwrap();
        let theta = log_params(h);
        let n_len = h.lengthscales.len();
        let step = 1e-5;
        for i in 0..theta.len() {
            if !theta[i].is_finite() {
                continue;
            }
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[i] += step;
            tm[i] -= step;
            let fp = nlml(data, &from_log_params(&tp, n_len)).unwrap().0;
            let fm = nlml(data, &from_log_params(&tm, n_len)).unwrap().0;
            let fd = (fp - fm) / (2.0 * step);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-3);
            assert!(rel <= 1e-4, "param {i}: analytic {} fd {fd}", g[i]);
        }
    }

    #[test]
    fn nlml_gradient_matches_finite_differences() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = random_data(&mut rng, 15, 2);
            let h = Hyperparams {
                lengthscales: vec![rng.random_range(0.3..2.0)],
                signal_std: rng.random_range(0.5..2.0),
                kernel_noise_std: rng.random_range(0.05..0.3),
                obs_noise_std: rng.random_range(0.05..0.3),
            };
            fd_check(&data, &h);
            let ard = Hyperparams {
                lengthscales: vec![rng.random_range(0.3..2.0), rng.random_range(0.3..2.0)],
                ..h
            };
            fd_check(&data, &ard);
        }
    }

    #[test]
    fn optimizer_never_worse_than_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = random_data(&mut rng, 30, 2);
        let init = Hyperparams::isotropic(1.0, 1.0, 0.1);
        let (f0, _) = nlml(&data, &init).unwrap();
        let fit1 = optimize_hyper(&data, &init, &OptimizerSettings::default()).unwrap();
        assert!(fit1.nlml <= f0);
        assert!(!fit1.fell_back);
        // Re-starting at the optimum keeps it.
        let again = optimize_hyper(&data, &fit1.hyper, &OptimizerSettings { restarts: 1, ..Default::default() })
            .unwrap();
        assert!(again.nlml <= fit1.nlml + 1e-12);
    }

    #[test]
    fn more_restarts_never_hurt() {
        // Periodic targets with a short lengthscale optimum and a long one.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs: Vec<f64> = (0..40).map(|_| rng.random_range(-4.0..4.0)).collect();
        let data = TrainingSet::new(
            xs.iter().map(|x| vec![*x]).collect(),
            xs.iter().map(|x| (3.0 * x).sin() + 0.3 * x).collect(),
        )
        .unwrap();
        let init = Hyperparams::isotropic(3.0, 1.0, 0.3);
        let one = optimize_hyper(&data, &init, &OptimizerSettings { restarts: 1, seed: 2, ..Default::default() })
            .unwrap();
        let eight = optimize_hyper(&data, &init, &OptimizerSettings { restarts: 8, seed: 2, ..Default::default() })
            .unwrap();
        assert!(eight.nlml <= one.nlml + 1e-12);
    }

    #[test]
    fn optimizer_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data = random_data(&mut rng, 20, 3);
        let init = Hyperparams::isotropic(1.0, 1.0, 0.1);
        let s = OptimizerSettings { seed: 9, ..Default::default() };
        let a = optimize_hyper(&data, &init, &s).unwrap();
        let b = optimize_hyper(&data, &init, &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn extended_matches_full_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let data = random_data(&mut rng, 12, 3);
        let h = Hyperparams::isotropic(0.9, 1.2, 0.05);
        let mut m = fit(
            &TrainingSet::new(vec![data.inputs()[0].clone()], vec![data.targets()[0]]).unwrap(),
            &h,
        )
        .unwrap();
        for i in 1..data.len() {
            m = m.extended(data.inputs()[i].clone(), data.targets()[i]).unwrap();
        }
        let full = fit(&data, &h).unwrap();
        assert!((m.chol() - full.chol()).amax() < 1e-10);
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = m.predict(&x).unwrap();
            let b = full.predict(&x).unwrap();
            assert_abs_diff_eq!(a.0, b.0, epsilon = 1e-10);
            assert_abs_diff_eq!(a.1, b.1, epsilon = 1e-10);
        }
    }

    #[test]
    fn posterior_cache_matches_predict() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let data = random_data(&mut rng, 15, 2);
        let h = Hyperparams::isotropic(0.7, 1.1, 0.02);
        let points: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..2).map(|_| rng.random_range(-2.5..2.5)).collect())
            .collect();
        let first = TrainingSet::new(vec![data.inputs()[0].clone()], vec![data.targets()[0]]).unwrap();
        let mut model = fit(&first, &h).unwrap();
        let mut cache = PosteriorCache::build(&model, &points);
        for i in 1..data.len() {
            model = model.extended(data.inputs()[i].clone(), data.targets()[i]).unwrap();
            cache.push(&model, &points);
        }
        let rebuilt = PosteriorCache::build(&model, &points);
        for (j, p) in points.iter().enumerate() {
            let (mu, var) = model.predict(p).unwrap();
            assert_abs_diff_eq!(cache.mean()[j], mu, epsilon = 1e-9);
            assert_abs_diff_eq!(cache.variance()[j], var, epsilon = 1e-9);
            assert_abs_diff_eq!(rebuilt.mean()[j], mu, epsilon = 1e-9);
        }
    }

    #[test]
    fn chol_reproduces_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let data = random_data(&mut rng, 25, 4);
        let h = Hyperparams::isotropic(1.3, 0.8, 0.01);
        let m = fit(&data, &h).unwrap();
        let (k, _) = train_kernel(&data, &h);
        let rebuilt = m.chol() * m.chol().transpose();
        assert!((rebuilt - &k).amax() <= 1e-8 * k.amax());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(TrainingSet::new(vec![vec![0.0]], vec![]).is_err());
        assert!(TrainingSet::new(vec![vec![f64::NAN]], vec![0.0]).is_err());
        let empty = TrainingSet::new(vec![], vec![]).unwrap();
        assert!(fit(&empty, &Hyperparams::isotropic(1.0, 1.0, 0.0)).is_err());
        let data = TrainingSet::new(vec![vec![0.0]], vec![0.0]).unwrap();
        assert!(fit(&data, &Hyperparams::isotropic(-1.0, 1.0, 0.0)).is_err());
        let m = fit(&data, &Hyperparams::isotropic(1.0, 1.0, 0.0)).unwrap();
        assert!(m.predict(&[0.0, 1.0]).is_err());
    }
}
