//! Classical iterative linearized calibration.
//!
//! Each outer iteration stacks the parameter Jacobians and pose residuals of
//! all measurements at the current DH parameters and solves the
//! box-constrained least-squares problem
//!
//! ```text
//! min |r - J dphi|^2   s.t.   lb <= dphi <= ub
//! ```
//!
//! Joint-angle offsets have no Jacobian column here, so they cannot be
//! identified by this method.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::arm::{pose_difference, TrueArm};
use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics, parameter_jacobian, DhTable, Pose7};

const QP_KKT_TOL: f64 = 1e-8;
const QP_MAX_ITER: usize = 10_000;
const STEP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    jacobian: DMatrix<f64>,
    residual: DVector<f64>,
    lb: DVector<f64>,
    ub: DVector<f64>,
}

impl QpProblem {
    pub fn new(jacobian: DMatrix<f64>, residual: DVector<f64>, lb: DVector<f64>, ub: DVector<f64>) -> Result<Self> {
        let n = jacobian.ncols();
        if jacobian.nrows() != residual.len() {
            return Err(Error::domain("jacobian and residual row counts differ"));
        }
        if jacobian.nrows() % 7 != 0 {
            return Err(Error::domain("stacked row count must be a multiple of 7"));
        }
        if lb.len() != n || ub.len() != n {
            return Err(Error::domain("bound length must match the jacobian column count"));
        }
        if lb.iter().zip(ub.iter()).any(|(l, u)| !(l <= u)) {
            return Err(Error::domain("lower bound exceeds upper bound"));
        }
        if jacobian.iter().chain(residual.iter()).any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite entry in QP data"));
        }
        Ok(Self { jacobian, residual, lb, ub })
    }

    pub fn jacobian(&self) -> &DMatrix<f64> {
        &self.jacobian
    }

    pub fn residual(&self) -> &DVector<f64> {
        &self.residual
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lb
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.ub
    }

    /// `0.5 |r - J x|^2`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (&self.residual - &self.jacobian * x).norm_squared()
    }

    fn project(&self, x: &mut DVector<f64>) {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.lb[i], self.ub[i]);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Norm of `x - P(x - grad)` at the returned point.
    pub kkt_residual: f64,
}

fn projected_gradient_norm(p: &QpProblem, x: &DVector<f64>, g: &DVector<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        let d = x[i] - (x[i] - g[i]).clamp(p.lb[i], p.ub[i]);
        s += d * d;
    }
    s.sqrt()
}

/// Projected gradient with an exact step along the quadratic, followed by a
/// Newton step on the currently free coordinates. Both moves are halved
/// until the objective does not increase, so the iterate stays feasible and
/// the objective is monotone.
pub fn solve_qp(p: &QpProblem) -> QpSolution {
    let h = p.jacobian.transpose() * &p.jacobian;
    let jtr = p.jacobian.transpose() * &p.residual;
    let n = h.nrows();
    let grad = |x: &DVector<f64>| &h * x - &jtr;

    let mut x = DVector::zeros(n);
    p.project(&mut x);
    let mut f = p.objective(&x);
    let mut g = grad(&x);
    let mut kkt = projected_gradient_norm(p, &x, &g);

    let mut it = 0;
    while it < QP_MAX_ITER && kkt > QP_KKT_TOL {
        it += 1;
        // Gradient direction with blocked coordinates removed.
        let mut d = -&g;
        for i in 0..n {
            if (x[i] <= p.lb[i] && d[i] < 0.0) || (x[i] >= p.ub[i] && d[i] > 0.0) {
                d[i] = 0.0;
            }
        }
        let curv = d.dot(&(&h * &d));
        let mut step = if curv > 0.0 { d.norm_squared() / curv } else { 1.0 };
        for _ in 0..60 {
            let mut cand = &x + &d * step;
            p.project(&mut cand);
            let fc = p.objective(&cand);
            if fc <= f {
                x = cand;
                f = fc;
                break;
            }
            step *= 0.5;
        }

        // Newton step on the free set.
        g = grad(&x);
        let free: Vec<usize> = (0..n).filter(|&i| x[i] > p.lb[i] && x[i] < p.ub[i]).collect();
        if !free.is_empty() {
            let hf = DMatrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
            let gf = DVector::from_fn(free.len(), |a, _| g[free[a]]);
            if let Ok(y) = hf.svd(true, true).solve(&(-gf), 1e-14) {
                let mut scale = 1.0;
                for _ in 0..60 {
                    let mut cand = x.clone();
                    for (k, &i) in free.iter().enumerate() {
                        cand[i] += scale * y[k];
                    }
                    p.project(&mut cand);
                    let fc = p.objective(&cand);
                    if fc <= f {
                        x = cand;
                        f = fc;
                        break;
                    }
                    scale *= 0.5;
                }
            }
        }
        g = grad(&x);
        kkt = projected_gradient_norm(p, &x, &g);
    }
    QpSolution {
        x,
        iterations: it,
        converged: kkt <= QP_KKT_TOL,
        kkt_residual: kkt,
    }
}

/// Bounds on the DH parameters relative to the nominal values, laid out like
/// [`DhTable::phi`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamBounds {
    pub fn symmetric(half_widths: Vec<f64>) -> Self {
        Self {
            lower: half_widths.iter().map(|w| -w).collect(),
            upper: half_widths,
        }
    }

    pub fn unbounded(n: usize) -> Self {
        Self::symmetric(vec![f64::INFINITY; n])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearizedSettings {
    pub max_outer: usize,
    /// Row weights for (qw, qx, qy, qz, px, py, pz).
    pub axis_weights: [f64; 7],
}

impl Default for LinearizedSettings {
    fn default() -> Self {
        Self {
            max_outer: 50,
            axis_weights: [1.0; 7],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// Corrected `(alpha, d, a)` per link.
    pub phi_star: Vec<f64>,
    pub iterations: usize,
    pub final_residual_norm: f64,
    pub converged: bool,
    pub rank_deficient: bool,
    /// Stacked residual norm after each accepted iteration, starting at the nominal.
    pub residual_history: Vec<f64>,
}

impl CalibrationResult {
    pub fn table(&self, nominal: &DhTable) -> Result<DhTable> {
        nominal.with_phi(&self.phi_star)
    }
}

fn stacked_residual(table: &DhTable, measurements: &[(Vec<f64>, Pose7)], w: &[f64; 7]) -> Result<DVector<f64>> {
    let mut r = DVector::zeros(7 * measurements.len());
    for (k, (q, pose)) in measurements.iter().enumerate() {
        let model = forward_kinematics(table, q)?;
        let d = pose_difference(pose, &model);
        for i in 0..7 {
            r[7 * k + i] = w[i] * d[i];
        }
    }
    Ok(r)
}

fn stacked_jacobian(table: &DhTable, measurements: &[(Vec<f64>, Pose7)], w: &[f64; 7]) -> Result<DMatrix<f64>> {
    let n = 3 * table.dof();
    let mut j = DMatrix::zeros(7 * measurements.len(), n);
    for (k, (q, _)) in measurements.iter().enumerate() {
        let jq = parameter_jacobian(table, q)?;
        for i in 0..7 {
            for c in 0..n {
                j[(7 * k + i, c)] = w[i] * jq[(i, c)];
            }
        }
    }
    Ok(j)
}

fn is_rank_deficient(j: &DMatrix<f64>) -> bool {
    let sv = j.clone().svd(false, false).singular_values;
    let max = sv.max();
    max == 0.0 || sv.min() <= 1e-10 * max
}

/// Iterated Gauss-Newton with box bounds, step halving when the stacked
/// residual would grow.
pub fn calibrate_linearized(
    nominal: &DhTable,
    measurements: &[(Vec<f64>, Pose7)],
    bounds: &ParamBounds,
    settings: &LinearizedSettings,
) -> Result<CalibrationResult> {
    let n = 3 * nominal.dof();
    if measurements.len() * 7 < n {
        return Err(Error::domain(format!(
            "need at least {} measurements for {} parameters",
            n.div_ceil(7),
            n
        )));
    }
    if bounds.lower.len() != n || bounds.upper.len() != n {
        return Err(Error::domain("parameter bounds must have 3 entries per link"));
    }
    if bounds.lower.iter().zip(&bounds.upper).any(|(l, u)| !(*l <= 0.0 && 0.0 <= *u)) {
        return Err(Error::domain("parameter bounds must contain the nominal values"));
    }
    if settings.axis_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::domain("axis weights must be finite and non-negative"));
    }
    let w = &settings.axis_weights;
    let phi_nom = DVector::from_vec(nominal.phi());
    let lb = DVector::from_column_slice(&bounds.lower);
    let ub = DVector::from_column_slice(&bounds.upper);

    let mut phi = phi_nom.clone();
    let mut table = nominal.clone();
    let mut r = stacked_residual(&table, measurements, w)?;
    let mut history = vec![r.norm()];
    let mut converged = false;
    let mut rank_deficient = false;
    let mut iterations = 0;

    while iterations < settings.max_outer {
        iterations += 1;
        let j = stacked_jacobian(&table, measurements, w)?;
        rank_deficient |= is_rank_deficient(&j);
        let offset = &phi - &phi_nom;
        let qp = QpProblem::new(j, r.clone(), &lb - &offset, &ub - &offset)?;
        let sol = solve_qp(&qp);
        let mut step = sol.x;
        if step.norm() <= STEP_TOL {
            converged = true;
            break;
        }
        let current = r.norm();
        let mut accepted = None;
        for _ in 0..40 {
            let cand_phi = &phi + &step;
            let cand_table = nominal.with_phi(cand_phi.as_slice())?;
            let cand_r = stacked_residual(&cand_table, measurements, w)?;
            if cand_r.norm() <= current {
                accepted = Some((cand_phi, cand_table, cand_r));
                break;
            }
            step *= 0.5;
            if step.norm() <= STEP_TOL {
                break;
            }
        }
        match accepted {
            Some((p, t, res)) => {
                phi = p;
                table = t;
                r = res;
                history.push(r.norm());
            }
            None => {
                // No descent left along the linearized step.
                converged = true;
                break;
            }
        }
    }
    if rank_deficient {
        log::warn!("stacked calibration Jacobian is rank deficient; returning a minimum-norm correction");
    }
    Ok(CalibrationResult {
        phi_star: phi.as_slice().to_vec(),
        iterations,
        final_residual_norm: r.norm(),
        converged,
        rank_deficient,
        residual_history: history,
    })
}

/// Take one measurement at each configuration.
pub fn collect_measurements(arm: &mut TrueArm, configs: &[Vec<f64>]) -> Result<Vec<(Vec<f64>, Pose7)>> {
    configs
        .iter()
        .map(|q| Ok((q.clone(), arm.measure(q)?)))
        .collect()
}

/// Mean pose error of `table` against the arm's noise-free pose over `configs`.
pub fn mean_pose_error(table: &DhTable, arm: &TrueArm, configs: &[Vec<f64>]) -> Result<f64> {
    if configs.is_empty() {
        return Err(Error::domain("no configurations to evaluate"));
    }
    let mut total = 0.0;
    for q in configs {
        let model = forward_kinematics(table, q)?;
        total += pose_difference(&arm.true_pose(q)?, &model).norm();
    }
    Ok(total / configs.len() as f64)
}
