//! Denavit–Hartenberg forward kinematics.
//!
//! Poses are reported as a 7-vector `[qw, qx, qy, qz, px, py, pz]`, quaternion
//! first and scalar first. Rotation matrices are converted with Shepperd's
//! method and then sign-locked against a reference quaternion. For the chain
//! itself the reference is the product of the per-link half-angle quaternions,
//! which is a continuous lift of the joint-space map into the unit sphere, so
//! the reported quaternion never jumps to the antipodal branch as the joints
//! move (including for angles that wind past ±π).

use nalgebra::{DMatrix, Matrix3, SVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A pose or pose residual in `[quat; pos]` layout.
pub type Vec7 = SVector<f64, 7>;

/// Central-difference step for [`parameter_jacobian`].
pub const JACOBIAN_STEP: f64 = 1e-6;

const RIGID_TOL: f64 = 1e-9;
const ORTHONORMAL_TOL: f64 = 1e-6;
const TIE_EPS: f64 = 1e-12;

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(x: f64) -> f64 {
    use std::f64::consts::PI;
    let y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y - 2.0 * PI
    } else {
        y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

/// One row of a DH table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhLink {
    pub joint_kind: JointKind,
    /// Joint-angle offset (rad).
    pub theta0: f64,
    /// Twist (rad).
    pub alpha: f64,
    /// Link length (m).
    pub a: f64,
    /// Link offset (m).
    pub d: f64,
}

impl DhLink {
    pub fn new(joint_kind: JointKind, theta0: f64, alpha: f64, a: f64, d: f64) -> Result<Self> {
        for (name, v) in [("theta0", theta0), ("alpha", alpha), ("a", a), ("d", d)] {
            if !v.is_finite() {
                return Err(Error::domain(format!("DH parameter {name} is not finite")));
            }
        }
        Ok(Self {
            joint_kind,
            theta0: wrap_angle(theta0),
            alpha: wrap_angle(alpha),
            a,
            d,
        })
    }

    pub fn revolute(theta0: f64, alpha: f64, a: f64, d: f64) -> Result<Self> {
        Self::new(JointKind::Revolute, theta0, alpha, a, d)
    }

    /// Effective `(theta, d)` once the joint variable is applied.
    fn effective(&self, q: f64) -> (f64, f64) {
        match self.joint_kind {
            JointKind::Revolute => (self.theta0 + q, self.d),
            JointKind::Prismatic => (self.theta0, self.d + q),
        }
    }
}

/// Rotation plus translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Checked constructor: the rotation must be orthonormal with det +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let t = Self {
            rotation,
            translation,
        };
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::domain("translation is not finite"));
        }
        if !t.is_rigid(RIGID_TOL) {
            return Err(Error::domain("rotation is not orthonormal with det = +1"));
        }
        Ok(t)
    }

    pub fn is_rigid(&self, tol: f64) -> bool {
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).amax();
        ortho <= tol && (r.determinant() - 1.0).abs() <= tol
    }

    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

/// Unit quaternion `(w, x, y, z)` and position, in that order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose7 {
    pub quat: Vector4<f64>,
    pub pos: Vector3<f64>,
}

impl Pose7 {
    pub fn to_vec7(&self) -> Vec7 {
        Vec7::from_iterator(self.quat.iter().chain(self.pos.iter()).copied())
    }

    /// Build from a raw 7-vector, renormalizing the quaternion part.
    pub fn from_vec7_normalized(v: &Vec7) -> Result<Self> {
        let quat = Vector4::new(v[0], v[1], v[2], v[3]);
        let n = quat.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::domain("cannot normalize a zero quaternion"));
        }
        Ok(Self {
            quat: quat / n,
            pos: Vector3::new(v[4], v[5], v[6]),
        })
    }

    /// The same rotation with the quaternion flipped, if needed, so that
    /// `dot(quat, reference) >= 0`.
    pub fn aligned_to(&self, reference: &Vector4<f64>) -> Pose7 {
        let mut out = *self;
        if out.quat.dot(reference) < 0.0 {
            out.quat = -out.quat;
        }
        out
    }
}

/// Homogeneous transform of one DH link at joint value `q`.
pub fn link_transform(link: &DhLink, q: f64) -> Result<RigidTransform> {
    if !q.is_finite() {
        return Err(Error::domain("joint value is not finite"));
    }
    let (theta, d) = link.effective(q);
    let (st, ct) = theta.sin_cos();
    let (sa, ca) = link.alpha.sin_cos();
    #[rustfmt::skip]
    let rotation = Matrix3::new(
        ct, -st * ca,  st * sa,
        st,  ct * ca, -ct * sa,
        0.0,      sa,       ca,
    );
    Ok(RigidTransform {
        rotation,
        translation: Vector3::new(link.a * ct, link.a * st, d),
    })
}

/// Quaternion of `Rz(theta) * Rx(alpha)` by half angles. Continuous in both.
fn link_quat_lift(link: &DhLink, q: f64) -> Vector4<f64> {
    let (theta, _) = link.effective(q);
    let (sz, cz) = (0.5 * theta).sin_cos();
    let (sx, cx) = (0.5 * link.alpha).sin_cos();
    // (cz, 0, 0, sz) * (cx, sx, 0, 0)
    Vector4::new(cz * cx, cz * sx, sz * sx, sz * cx)
}

/// Hamilton product, scalar first.
pub fn quat_mul(p: &Vector4<f64>, q: &Vector4<f64>) -> Vector4<f64> {
    Vector4::new(
        p[0] * q[0] - p[1] * q[1] - p[2] * q[2] - p[3] * q[3],
        p[0] * q[1] + p[1] * q[0] + p[2] * q[3] - p[3] * q[2],
        p[0] * q[2] - p[1] * q[3] + p[2] * q[0] + p[3] * q[1],
        p[0] * q[3] + p[1] * q[2] - p[2] * q[1] + p[3] * q[0],
    )
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_rotation(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Rotation matrix to unit quaternion, sign-locked for continuity.
///
/// With a reference the result has a non-negative dot product with it.
/// Without one, `w >= 0`; when `w` is zero the first nonzero of `x, y, z`
/// is made positive.
pub fn continuous_quat(r: &Matrix3<f64>, reference: Option<&Vector4<f64>>) -> Result<Vector4<f64>> {
    let ortho = (r.transpose() * r - Matrix3::identity()).amax();
    if !(ortho <= ORTHONORMAL_TOL) || (r.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
        return Err(Error::domain(format!(
            "rotation is not orthonormal (deviation {ortho:e})"
        )));
    }
    let (r00, r11, r22) = (r[(0, 0)], r[(1, 1)], r[(2, 2)]);
    let trace = r00 + r11 + r22;
    let q = if trace >= r00 && trace >= r11 && trace >= r22 {
        let w = 0.5 * (1.0 + trace).sqrt();
        let s = 0.25 / w;
        Vector4::new(
            w,
            (r[(2, 1)] - r[(1, 2)]) * s,
            (r[(0, 2)] - r[(2, 0)]) * s,
            (r[(1, 0)] - r[(0, 1)]) * s,
        )
    } else if r00 >= r11 && r00 >= r22 {
        let x = 0.5 * (1.0 + r00 - r11 - r22).sqrt();
        let s = 0.25 / x;
        Vector4::new(
            (r[(2, 1)] - r[(1, 2)]) * s,
            x,
            (r[(0, 1)] + r[(1, 0)]) * s,
            (r[(0, 2)] + r[(2, 0)]) * s,
        )
    } else if r11 >= r22 {
        let y = 0.5 * (1.0 - r00 + r11 - r22).sqrt();
        let s = 0.25 / y;
        Vector4::new(
            (r[(0, 2)] - r[(2, 0)]) * s,
            (r[(0, 1)] + r[(1, 0)]) * s,
            y,
            (r[(1, 2)] + r[(2, 1)]) * s,
        )
    } else {
        let z = 0.5 * (1.0 - r00 - r11 + r22).sqrt();
        let s = 0.25 / z;
        Vector4::new(
            (r[(1, 0)] - r[(0, 1)]) * s,
            (r[(0, 2)] + r[(2, 0)]) * s,
            (r[(1, 2)] + r[(2, 1)]) * s,
            z,
        )
    };
    let q = q.normalize();
    let flip = match reference {
        Some(reference) => q.dot(reference) < 0.0,
        None => {
            if q[0].abs() > TIE_EPS {
                q[0] < 0.0
            } else {
                q.iter()
                    .skip(1)
                    .find(|c| c.abs() > TIE_EPS)
                    .is_some_and(|c| *c < 0.0)
            }
        }
    };
    Ok(if flip { -q } else { q })
}

/// Nominal kinematic description of a serial arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DhTable {
    links: Vec<DhLink>,
    tool: RigidTransform,
    joint_limits: Vec<(f64, f64)>,
}

impl DhTable {
    pub fn new(
        links: Vec<DhLink>,
        tool: RigidTransform,
        joint_limits: Vec<(f64, f64)>,
    ) -> Result<Self> {
        if links.is_empty() {
            return Err(Error::domain("DH table has no links"));
        }
        if joint_limits.len() != links.len() {
            return Err(Error::domain(format!(
                "{} joint limits for {} links",
                joint_limits.len(),
                links.len()
            )));
        }
        if let Some(i) = joint_limits
            .iter()
            .position(|&(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi))
        {
            return Err(Error::domain(format!("joint {i}: limits must satisfy lo < hi")));
        }
        if !tool.is_rigid(RIGID_TOL) {
            return Err(Error::domain("tool transform is not rigid"));
        }
        Ok(Self {
            links,
            tool,
            joint_limits,
        })
    }

    pub fn links(&self) -> &[DhLink] {
        &self.links
    }

    pub fn tool(&self) -> &RigidTransform {
        &self.tool
    }

    pub fn joint_limits(&self) -> &[(f64, f64)] {
        &self.joint_limits
    }

    pub fn dof(&self) -> usize {
        self.links.len()
    }

    /// Copy of this table with the links replaced (same count, same joint kinds).
    pub fn with_links(&self, links: Vec<DhLink>) -> Result<Self> {
        if links.len() != self.links.len()
            || links
                .iter()
                .zip(&self.links)
                .any(|(a, b)| a.joint_kind != b.joint_kind)
        {
            return Err(Error::domain("replacement links do not match the table layout"));
        }
        Ok(Self {
            links,
            ..self.clone()
        })
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.iter()
            .zip(&self.joint_limits)
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// The `(alpha, d, a)` parameter vector, link by link.
    pub fn phi(&self) -> Vec<f64> {
        self.links.iter().flat_map(|l| [l.alpha, l.d, l.a]).collect()
    }

    /// Replace `(alpha, d, a)` of every link from a `3n` vector laid out as [`DhTable::phi`].
    pub fn with_phi(&self, phi: &[f64]) -> Result<Self> {
        if phi.len() != 3 * self.dof() {
            return Err(Error::domain("phi length must be 3n"));
        }
        let links = self
            .links
            .iter()
            .zip(phi.chunks_exact(3))
            .map(|(l, p)| DhLink::new(l.joint_kind, l.theta0, p[0], p[2], p[1]))
            .collect::<Result<Vec<_>>>()?;
        self.with_links(links)
    }
}

/// End-effector pose for joint vector `q`.
pub fn forward_kinematics(table: &DhTable, q: &[f64]) -> Result<Pose7> {
    if q.len() != table.dof() {
        return Err(Error::domain(format!(
            "joint vector has {} entries, table has {} links",
            q.len(),
            table.dof()
        )));
    }
    if !table.within_limits(q) {
        log::warn!("forward_kinematics: joint vector outside limits: {q:?}");
    }
    let mut t = RigidTransform::identity();
    let mut lift = Vector4::new(1.0, 0.0, 0.0, 0.0);
    for (link, &qi) in table.links.iter().zip(q) {
        t = t.compose(&link_transform(link, qi)?);
        lift = quat_mul(&lift, &link_quat_lift(link, qi));
    }
    t = t.compose(&table.tool);
    let tool_quat = continuous_quat(&table.tool.rotation, None)?;
    lift = quat_mul(&lift, &tool_quat);
    let quat = continuous_quat(&t.rotation, Some(&lift))?;
    Ok(Pose7 {
        quat,
        pos: t.translation,
    })
}

/// `7 x 3n` Jacobian of the pose with respect to `(alpha_i, d_i, a_i)`,
/// columns grouped per link, by central differences.
pub fn parameter_jacobian(table: &DhTable, q: &[f64]) -> Result<DMatrix<f64>> {
    parameter_jacobian_with_step(table, q, JACOBIAN_STEP)
}

pub fn parameter_jacobian_with_step(table: &DhTable, q: &[f64], h: f64) -> Result<DMatrix<f64>> {
    let center = forward_kinematics(table, q)?;
    let n = table.dof();
    let mut jac = DMatrix::zeros(7, 3 * n);
    let mut links = table.links.clone();
    for i in 0..n {
        for k in 0..3 {
            let base = links[i];
            let eval = |links: &mut Vec<DhLink>, delta: f64| -> Result<Vec7> {
                let mut l = base;
                // Stepped in place; normalizing alpha would fold the step near +-pi.
                match k {
                    0 => l.alpha += delta,
                    1 => l.d += delta,
                    _ => l.a += delta,
                }
                links[i] = l;
                let t = DhTable {
                    links: links.clone(),
                    ..table.clone()
                };
                Ok(forward_kinematics(&t, q)?.aligned_to(&center.quat).to_vec7())
            };
            let plus = eval(&mut links, h)?;
            let minus = eval(&mut links, -h)?;
            links[i] = base;
            jac.set_column(3 * i + k, &((plus - minus) / (2.0 * h)));
        }
    }
    Ok(jac)
}
