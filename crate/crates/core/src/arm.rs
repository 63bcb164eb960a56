//! Simulated "true" arm: a perturbed copy of the nominal DH table, an optional
//! smooth additive error field, and a Gaussian measurement model.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics, DhLink, DhTable, Pose7, Vec7};
use crate::rng::{stream_rng, STREAM_MEASUREMENT, STREAM_PERTURBATION};

/// Per-link parameter offsets (also used for per-link bounds).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkDelta {
    pub theta: f64,
    pub alpha: f64,
    pub d: f64,
    pub a: f64,
}

impl LinkDelta {
    fn as_array(&self) -> [f64; 4] {
        [self.theta, self.alpha, self.d, self.a]
    }

    fn from_array(v: [f64; 4]) -> Self {
        Self {
            theta: v[0],
            alpha: v[1],
            d: v[2],
            a: v[3],
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::from_array(self.as_array().map(|v| v * s))
    }
}

/// `amplitude * sin(frequency * q[joint] + phase)` added to pose component `axis`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinusoidTerm {
    pub axis: usize,
    pub joint: usize,
    pub amplitude: f64,
    #[serde(default = "one")]
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

fn one() -> f64 {
    1.0
}

/// Smooth joint-space error field, a sum of sinusoids.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResidualField {
    pub terms: Vec<SinusoidTerm>,
}

impl ResidualField {
    pub fn eval(&self, q: &[f64]) -> Vec7 {
        let mut out = Vec7::zeros();
        for t in &self.terms {
            out[t.axis] += t.amplitude * (t.frequency * q[t.joint] + t.phase).sin();
        }
        out
    }

    pub fn validate(&self, dof: usize) -> Result<()> {
        for (i, t) in self.terms.iter().enumerate() {
            if t.axis >= 7 {
                return Err(Error::domain(format!("additive term {i}: axis {} >= 7", t.axis)));
            }
            if t.joint >= dof {
                return Err(Error::domain(format!(
                    "additive term {i}: joint {} out of range for {dof} joints",
                    t.joint
                )));
            }
            if ![t.amplitude, t.frequency, t.phase].iter().all(|v| v.is_finite()) {
                return Err(Error::domain(format!("additive term {i}: non-finite value")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PerturbationMode {
    /// Exactly these offsets.
    Fixed(Vec<LinkDelta>),
    /// Each offset drawn uniformly from `[lo, hi]`.
    Uniform { lo: Vec<LinkDelta>, hi: Vec<LinkDelta> },
    /// Each offset drawn uniformly from `±(percent / 100) * bound`.
    Scaled { percent: f64, bounds: Vec<LinkDelta> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub mode: PerturbationMode,
    pub additive_residual: Option<ResidualField>,
}

impl PerturbationSpec {
    pub fn none(dof: usize) -> Self {
        Self {
            mode: PerturbationMode::Fixed(vec![LinkDelta::default(); dof]),
            additive_residual: None,
        }
    }

    pub fn fixed(deltas: Vec<LinkDelta>) -> Self {
        Self {
            mode: PerturbationMode::Fixed(deltas),
            additive_residual: None,
        }
    }

    pub fn scaled(percent: f64, bounds: Vec<LinkDelta>) -> Self {
        Self {
            mode: PerturbationMode::Scaled { percent, bounds },
            additive_residual: None,
        }
    }

    pub fn with_additive(mut self, field: ResidualField) -> Self {
        self.additive_residual = Some(field);
        self
    }

    pub fn validate(&self, dof: usize) -> Result<()> {
        let check_len = |n: usize| {
            if n != dof {
                Err(Error::domain(format!(
                    "perturbation has {n} link entries, table has {dof}"
                )))
            } else {
                Ok(())
            }
        };
        match &self.mode {
            PerturbationMode::Fixed(d) => check_len(d.len())?,
            PerturbationMode::Uniform { lo, hi } => {
                check_len(lo.len())?;
                check_len(hi.len())?;
                for (i, (l, h)) in lo.iter().zip(hi).enumerate() {
                    if l.as_array().iter().zip(h.as_array()).any(|(l, h)| !(*l <= h)) {
                        return Err(Error::domain(format!("link {i}: uniform bounds need lo <= hi")));
                    }
                }
            }
            PerturbationMode::Scaled { percent, bounds } => {
                check_len(bounds.len())?;
                if !(*percent >= 0.0 && percent.is_finite()) {
                    return Err(Error::domain("scaled perturbation needs percent >= 0"));
                }
                if bounds.iter().any(|b| b.as_array().iter().any(|v| !(*v >= 0.0))) {
                    return Err(Error::domain("scaled perturbation bounds must be >= 0"));
                }
            }
        }
        if let Some(field) = &self.additive_residual {
            field.validate(dof)?;
        }
        Ok(())
    }
}

fn draw(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    // Always consume one draw so the stream layout does not depend on the bounds.
    let u: f64 = rng.random();
    lo + (hi - lo) * u
}

/// Per-axis Gaussian output noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementModel {
    /// Standard deviation per pose component, `[qw, qx, qy, qz, px, py, pz]`.
    pub noise_std: [f64; 7],
    pub rng_seed: u64,
}

impl MeasurementModel {
    pub fn noiseless() -> Self {
        Self {
            noise_std: [0.0; 7],
            rng_seed: 0,
        }
    }

    pub fn isotropic(std: f64, rng_seed: u64) -> Self {
        Self {
            noise_std: [std; 7],
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise_std.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::domain("noise_std must be finite and >= 0"));
        }
        Ok(())
    }
}

/// The simulated physical arm.
#[derive(Debug, Clone)]
pub struct TrueArm {
    nominal: DhTable,
    perturbed: DhTable,
    additive_residual: Option<ResidualField>,
    measurement: MeasurementModel,
    rng: ChaCha8Rng,
}

/// The link offsets [`realize`] applies for `spec` and `seed`.
pub fn sample_deltas(spec: &PerturbationSpec, seed: u64) -> Vec<LinkDelta> {
    let mut rng = stream_rng(seed, STREAM_PERTURBATION);
    match &spec.mode {
        PerturbationMode::Fixed(d) => d.clone(),
        PerturbationMode::Uniform { lo, hi } => lo
            .iter()
            .zip(hi)
            .map(|(l, h)| {
                let (l, h) = (l.as_array(), h.as_array());
                LinkDelta::from_array(std::array::from_fn(|k| draw(&mut rng, l[k], h[k])))
            })
            .collect(),
        PerturbationMode::Scaled { percent, bounds } => {
            let s = percent / 100.0;
            bounds
                .iter()
                .map(|b| {
                    let b = b.as_array();
                    LinkDelta::from_array(std::array::from_fn(|k| {
                        draw(&mut rng, -s * b[k], s * b[k])
                    }))
                })
                .collect()
        }
    }
}

/// Build the distorted arm for `nominal` under `spec`. Deterministic in `seed`
/// (perturbation draws) and `measurement.rng_seed` (noise stream).
pub fn realize(
    nominal: &DhTable,
    spec: &PerturbationSpec,
    seed: u64,
    measurement: MeasurementModel,
) -> Result<TrueArm> {
    spec.validate(nominal.dof())?;
    measurement.validate()?;
    let deltas = sample_deltas(spec, seed);
    let links = nominal
        .links()
        .iter()
        .zip(&deltas)
        .map(|(l, dl)| {
            DhLink::new(
                l.joint_kind,
                l.theta0 + dl.theta,
                l.alpha + dl.alpha,
                l.a + dl.a,
                l.d + dl.d,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let perturbed = nominal.with_links(links)?;
    let additive_residual = spec
        .additive_residual
        .clone()
        .filter(|f| !f.terms.is_empty());
    Ok(TrueArm {
        nominal: nominal.clone(),
        perturbed,
        additive_residual,
        measurement,
        rng: stream_rng(measurement.rng_seed, STREAM_MEASUREMENT),
    })
}

impl TrueArm {
    pub fn nominal(&self) -> &DhTable {
        &self.nominal
    }

    pub fn perturbed(&self) -> &DhTable {
        &self.perturbed
    }

    pub fn measurement(&self) -> &MeasurementModel {
        &self.measurement
    }

    pub fn additive_residual(&self) -> Option<&ResidualField> {
        self.additive_residual.as_ref()
    }

    fn pose_with_offset(&self, q: &[f64], offset: Option<&Vec7>) -> Result<Pose7> {
        let fk = forward_kinematics(&self.perturbed, q)?;
        if self.additive_residual.is_none() && offset.is_none() {
            return Ok(fk);
        }
        let mut v = fk.to_vec7();
        if let Some(field) = &self.additive_residual {
            v += field.eval(q);
        }
        if let Some(o) = offset {
            v += o;
        }
        Pose7::from_vec7_normalized(&v)
    }

    /// Noise-free pose of the real arm.
    pub fn true_pose(&self, q: &[f64]) -> Result<Pose7> {
        self.pose_with_offset(q, None)
    }

    /// One noisy measurement; advances the measurement stream.
    pub fn measure(&mut self, q: &[f64]) -> Result<Pose7> {
        let std = self.measurement.noise_std;
        let noise = Vec7::from_fn(|i, _| {
            let z: f64 = self.rng.sample(StandardNormal);
            std[i] * z
        });
        if std.iter().all(|s| *s == 0.0) {
            return self.true_pose(q);
        }
        self.pose_with_offset(q, Some(&noise))
    }
}

/// `measured - nominal` with the measured quaternion moved onto the nominal
/// quaternion's hemisphere first.
pub fn pose_difference(measured: &Pose7, nominal: &Pose7) -> Vec7 {
    measured.aligned_to(&nominal.quat).to_vec7() - nominal.to_vec7()
}

/// Residual target at `q`: a fresh measurement minus nominal FK.
pub fn residual(arm: &mut TrueArm, nominal: &DhTable, q: &[f64]) -> Result<Vec7> {
    let measured = arm.measure(q)?;
    let predicted = forward_kinematics(nominal, q)?;
    Ok(pose_difference(&measured, &predicted))
}

/// Residual without measurement noise and without touching the noise stream.
pub fn true_residual(arm: &TrueArm, nominal: &DhTable, q: &[f64]) -> Result<Vec7> {
    let measured = arm.true_pose(q)?;
    let predicted = forward_kinematics(nominal, q)?;
    Ok(pose_difference(&measured, &predicted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::RigidTransform;
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use std::f64::consts::FRAC_PI_2;

    fn planar2() -> DhTable {
        let l = DhLink::revolute(0.0, 0.0, 1.0, 0.0).unwrap();
        DhTable::new(vec![l, l], RigidTransform::identity(), vec![(-3.0, 3.0); 2]).unwrap()
    }

    fn planar_bounds() -> Vec<LinkDelta> {
        vec![
            LinkDelta {
                theta: 0.0,
                alpha: 0.1,
                d: 0.1,
                a: 0.2
            };
            2
        ]
    }

    fn random_q(rng: &mut ChaCha8Rng) -> [f64; 2] {
        [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]
    }

    #[test]
    fn zero_spec_reproduces_nominal() {
        let nominal = planar2();
        for seed in 0..5 {
            let arm = realize(&nominal, &PerturbationSpec::none(2), seed, MeasurementModel::noiseless())
                .unwrap();
            assert_eq!(arm.perturbed(), &nominal);
        }
        let arm = realize(
            &nominal,
            &PerturbationSpec::scaled(0.0, planar_bounds()),
            9,
            MeasurementModel::noiseless(),
        )
        .unwrap();
        assert_eq!(arm.perturbed(), &nominal);
    }

    #[test]
    fn fixed_link_length_offset() {
        let nominal = planar2();
        let mut deltas = vec![LinkDelta::default(); 2];
        deltas[0].a = 0.2;
        let mut arm = realize(
            &nominal,
            &PerturbationSpec::fixed(deltas),
            0,
            MeasurementModel::noiseless(),
        )
        .unwrap();
        assert_abs_diff_eq!(arm.perturbed().links()[0].a, 1.2);
        let p = arm.measure(&[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(p.pos, Vector3::new(2.2, 0.0, 0.0), epsilon = 1e-15);
        let r = residual(&mut arm, &nominal, &[0.0, 0.0]).unwrap();
        let expect = Vec7::from_column_slice(&[0.0, 0.0, 0.0, 0.0, 0.2, 0.0, 0.0]);
        assert_abs_diff_eq!(r, expect, epsilon = 1e-12);
    }

    #[test]
    fn sampled_modes_are_deterministic() {
        let nominal = planar2();
        let spec = PerturbationSpec {
            mode: PerturbationMode::Uniform {
                lo: planar_bounds().iter().map(|b| b.scaled(-1.0)).collect(),
                hi: planar_bounds(),
            },
            additive_residual: None,
        };
        let a = realize(&nominal, &spec, 42, MeasurementModel::noiseless()).unwrap();
        let b = realize(&nominal, &spec, 42, MeasurementModel::noiseless()).unwrap();
        let c = realize(&nominal, &spec, 43, MeasurementModel::noiseless()).unwrap();
        assert_eq!(a.perturbed(), b.perturbed());
        assert_ne!(a.perturbed(), c.perturbed());
    }

    #[test]
    fn scaled_draws_stay_inside_scaled_bounds() {
        let nominal = planar2();
        for seed in 0..50 {
            let arm = realize(
                &nominal,
                &PerturbationSpec::scaled(50.0, planar_bounds()),
                seed,
                MeasurementModel::noiseless(),
            )
            .unwrap();
            for l in arm.perturbed().links() {
                assert!((l.a - 1.0).abs() <= 0.1 + 1e-15);
                assert!(l.alpha.abs() <= 0.05 + 1e-15);
                assert!(l.d.abs() <= 0.05 + 1e-15);
                assert_eq!(l.theta0, 0.0);
            }
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        let err = realize(
            &planar2(),
            &PerturbationSpec::none(3),
            0,
            MeasurementModel::noiseless(),
        );
        assert!(matches!(err, Err(Error::Domain(_))));
        let bad = PerturbationSpec::scaled(-5.0, planar_bounds());
        assert!(realize(&planar2(), &bad, 0, MeasurementModel::noiseless()).is_err());
    }

    #[test]
    fn noiseless_measure_is_fk() {
        let nominal = planar2();
        let mut arm = realize(
            &nominal,
            &PerturbationSpec::scaled(100.0, planar_bounds()),
            5,
            MeasurementModel::noiseless(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let q = random_q(&mut rng);
            let m = arm.measure(&q).unwrap();
            let f = forward_kinematics(arm.perturbed(), &q).unwrap();
            assert_abs_diff_eq!(m.to_vec7(), f.to_vec7(), epsilon = 1e-15);
        }
    }

    #[test]
    fn noise_statistics() {
        let nominal = planar2();
        let mut arm = realize(
            &nominal,
            &PerturbationSpec::none(2),
            0,
            MeasurementModel::isotropic(0.1, 77),
        )
        .unwrap();
        let q = [0.4, -1.0];
        let truth = arm.true_pose(&q).unwrap().pos.x;
        let n = 10_000;
        let xs: Vec<f64> = (0..n).map(|_| arm.measure(&q).unwrap().pos.x - truth).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let std = var.sqrt();
        assert!((std - 0.1).abs() <= 0.005, "std {std}");
    }

    #[test]
    fn additive_field_offsets_position() {
        let nominal = planar2();
        let field = ResidualField {
            terms: vec![SinusoidTerm {
                axis: 4,
                joint: 0,
                amplitude: 0.05,
                frequency: 1.0,
                phase: 0.0,
            }],
        };
        let mut arm = realize(
            &nominal,
            &PerturbationSpec::none(2).with_additive(field),
            0,
            MeasurementModel::noiseless(),
        )
        .unwrap();
        let q = [FRAC_PI_2, 0.3];
        let base = forward_kinematics(&nominal, &q).unwrap();
        let m = arm.measure(&q).unwrap();
        assert_abs_diff_eq!(m.pos.x - base.pos.x, 0.05, epsilon = 1e-15);
    }

    #[test]
    fn zero_spec_residual_vanishes() {
        let nominal = planar2();
        let mut arm = realize(&nominal, &PerturbationSpec::none(2), 0, MeasurementModel::noiseless())
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let q = random_q(&mut rng);
            assert!(residual(&mut arm, &nominal, &q).unwrap().norm() <= 1e-12);
        }
    }

    #[test]
    fn antipodal_measurement_gives_zero_quat_residual() {
        let nominal = planar2();
        let q = [0.3, 0.2];
        let p = forward_kinematics(&nominal, &q).unwrap();
        let flipped = Pose7 {
            quat: -p.quat,
            pos: p.pos,
        };
        let r = pose_difference(&flipped, &p);
        assert!(r.norm() <= 1e-15);
    }

    #[test]
    fn residual_quat_never_antipodal() {
        let nominal = planar2();
        let spec = PerturbationSpec::scaled(200.0, planar_bounds());
        let mut arm = realize(&nominal, &spec, 3, MeasurementModel::isotropic(0.1, 3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let q = random_q(&mut rng);
            let r = residual(&mut arm, &nominal, &q).unwrap();
            assert!(r.fixed_rows::<4>(0).norm() <= 2f64.sqrt());
        }
    }
}
