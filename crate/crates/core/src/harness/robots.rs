//! Robot descriptions in "value ± bound" form and the three built-in arms.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::arm::LinkDelta;
use crate::error::{Error, Result};
use crate::kinematics::{DhLink, DhTable, JointKind, RigidTransform};
use crate::linearized::ParamBounds;

pub const BUILTIN_ROBOTS: [&str; 3] = ["planar2", "wam7", "lander6"];

/// A nominal value with a symmetric uncertainty half-width.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Uncertain {
    pub value: f64,
    #[serde(default)]
    pub bound: f64,
}

const fn pm(value: f64, bound: f64) -> Uncertain {
    Uncertain { value, bound }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DhRow {
    #[serde(default = "revolute")]
    pub joint: JointKind,
    /// Joint-angle offset, `0 ± 0` unless given.
    #[serde(default)]
    pub theta: Uncertain,
    pub d: Uncertain,
    pub a: Uncertain,
    pub alpha: Uncertain,
}

fn revolute() -> JointKind {
    JointKind::Revolute
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolConfig {
    pub translation: [f64; 3],
    /// Roll, pitch, yaw in radians.
    pub rpy: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    pub name: String,
    pub rows: Vec<DhRow>,
    pub joint_limits: Vec<(f64, f64)>,
    #[serde(default)]
    pub tool: ToolConfig,
}

impl RobotConfig {
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "planar2" => Ok(planar2()),
            "wam7" => Ok(wam7()),
            "lander6" => Ok(lander6()),
            other => Err(Error::invalid(
                "robot",
                format!("unknown robot `{other}`; built-ins are {}", BUILTIN_ROBOTS.join(", ")),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::invalid("robot.rows", "at least one DH row is required"));
        }
        if self.rows.len() != self.joint_limits.len() {
            return Err(Error::invalid("robot.joint_limits", "need one (lo, hi) pair per row"));
        }
        for (i, row) in self.rows.iter().enumerate() {
            for (name, p) in [("theta", row.theta), ("d", row.d), ("a", row.a), ("alpha", row.alpha)] {
                if !p.value.is_finite() || !p.bound.is_finite() || p.bound < 0.0 {
                    return Err(Error::invalid(
                        format!("robot.rows[{i}].{name}"),
                        "value must be finite and bound a finite non-negative number",
                    ));
                }
            }
        }
        for (i, (lo, hi)) in self.joint_limits.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!("robot.joint_limits[{i}]"), "need finite lo < hi"));
            }
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.rows.len()
    }

    pub fn nominal_table(&self) -> Result<DhTable> {
        self.validate()?;
        let links = self
            .rows
            .iter()
            .map(|r| DhLink::new(r.joint, r.theta.value, r.alpha.value, r.a.value, r.d.value))
            .collect::<Result<Vec<_>>>()?;
        let [roll, pitch, yaw] = self.tool.rpy;
        let tool = RigidTransform::new(
            *Rotation3::from_euler_angles(roll, pitch, yaw).matrix(),
            Vector3::from(self.tool.translation),
        )?;
        DhTable::new(links, tool, self.joint_limits.clone())
    }

    /// Uncertainty half-widths as perturbation bounds.
    pub fn uncertainty(&self) -> Vec<LinkDelta> {
        self.rows
            .iter()
            .map(|r| LinkDelta {
                theta: r.theta.bound,
                alpha: r.alpha.bound,
                d: r.d.bound,
                a: r.a.bound,
            })
            .collect()
    }

    /// Box for the linearized calibrator, in `(alpha, d, a)` layout.
    pub fn param_bounds(&self) -> ParamBounds {
        ParamBounds::symmetric(
            self.rows
                .iter()
                .flat_map(|r| [r.alpha.bound, r.d.bound, r.a.bound])
                .collect(),
        )
    }
}

fn row(d: Uncertain, a: Uncertain, alpha: Uncertain) -> DhRow {
    DhRow {
        joint: JointKind::Revolute,
        theta: Uncertain::default(),
        d,
        a,
        alpha,
    }
}

fn planar2() -> RobotConfig {
    let r = row(pm(0.0, 0.1), pm(1.0, 0.2), pm(0.0, 0.1));
    RobotConfig {
        name: "planar2".into(),
        rows: vec![r, r],
        joint_limits: vec![(-3.0, 3.0); 2],
        tool: ToolConfig::default(),
    }
}

fn wam7() -> RobotConfig {
    RobotConfig {
        name: "wam7".into(),
        rows: vec![
            row(pm(0.0, 0.01), pm(0.0, 0.01), pm(-FRAC_PI_2, 0.2)),
            row(pm(0.0, 0.02), pm(0.0, 0.03), pm(FRAC_PI_2, 0.2)),
            row(pm(0.55, 0.2), pm(0.045, 0.01), pm(-FRAC_PI_2, 0.3)),
            row(pm(0.0, 0.03), pm(-0.045, 0.01), pm(FRAC_PI_2, 0.2)),
            row(pm(0.3, 0.2), pm(0.0, 0.07), pm(-FRAC_PI_2, 0.1)),
            row(pm(0.0, 0.04), pm(0.0, 0.1), pm(FRAC_PI_2, 0.1)),
            row(pm(0.06, 0.06), pm(0.0, 0.01), pm(0.0, 0.3)),
        ],
        // Barrett WAM joint ranges.
        joint_limits: vec![
            (-2.6, 2.6),
            (-2.0, 2.0),
            (-2.8, 2.8),
            (-0.9, 3.1),
            (-4.76, 1.24),
            (-1.6, 1.6),
            (-3.0, 3.0),
        ],
        tool: ToolConfig::default(),
    }
}

fn lander6() -> RobotConfig {
    RobotConfig {
        name: "lander6".into(),
        rows: vec![
            row(pm(0.0, 0.01), pm(0.16, 0.1), pm(FRAC_PI_2, 0.2)),
            row(pm(0.0, 0.02), pm(0.37, 0.1), pm(0.0, 0.2)),
            row(pm(0.0, 0.06), pm(0.05, 0.02), pm(PI, 0.3)),
            row(pm(-0.15, 0.01), pm(0.463, 0.1), pm(0.0, 0.2)),
            row(pm(0.0, 0.04), pm(-0.238, 0.1), pm(0.0, 0.1)),
            row(pm(0.0, 0.06), pm(0.225, 0.02), pm(FRAC_PI_2, 0.1)),
        ],
        joint_limits: vec![(-2.5, 2.5); 6],
        tool: ToolConfig::default(),
    }
}
