//! Per-episode domain randomization of the insertion scene.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;
use rand_distr::{Distribution, Normal};

use super::PegHoleScene;
use crate::error::{Error, Result};
use crate::geom::{exp_rotation, Pose, Vec3};

/// A candidate hole placement, relative to the base scene's hole pose.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct InsertionPlane {
    /// World-frame translation (m).
    pub offset: [f64; 3],
    /// World-frame rotation vector (rad).
    pub rotation: [f64; 3],
}

/// Randomization ranges. Offsets and noise are expressed in the hole frame.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RandomizationRanges {
    /// Bound of the uniform initial offset (m). Lateral components are drawn
    /// in `[-b, b]`; the axial component in `[0, b]` above the hole entrance.
    pub init_position: f64,
    /// Bound of the uniform initial orientation offset per axis (rad).
    pub init_orientation: f64,
    /// Truncation bound of the zero-mean Gaussian goal-estimate error (m);
    /// the standard deviation is half the bound.
    pub goal_position_noise: f64,
    /// Same for orientation (rad).
    pub goal_orientation_noise: f64,
    /// Systematic goal-estimate error added after the noise (m, hole frame).
    pub goal_position_bias: [f64; 3],
    /// Systematic goal-estimate rotation, a rotation vector (rad, hole frame).
    pub goal_orientation_bias: [f64; 3],
    /// Desired insertion force F_g range (N), uniform.
    pub desired_force: [f64; 2],
    /// Surface stiffness range (N/m), log-uniform. `None` keeps the base scene's.
    #[cfg_attr(feature = "serde", serde(with = "optional_range"))]
    pub stiffness: Option<[f64; 2]>,
    /// Candidate hole placements, chosen uniformly. Empty keeps the base pose.
    pub insertion_planes: Vec<InsertionPlane>,
}

impl Default for RandomizationRanges {
    fn default() -> Self {
        Self {
            init_position: 0.4,
            init_orientation: 10f64.to_radians(),
            goal_position_noise: 0.002,
            goal_orientation_noise: 5f64.to_radians(),
            goal_position_bias: [0.0; 3],
            goal_orientation_bias: [0.0; 3],
            desired_force: [0.0, 10.0],
            stiffness: Some([1.0e3, 1.0e5]),
            insertion_planes: Vec::new(),
        }
    }
}

impl RandomizationRanges {
    /// All ranges collapsed: every episode reproduces the base scene.
    pub fn none(desired_force: f64) -> Self {
        Self {
            init_position: 0.0,
            init_orientation: 0.0,
            goal_position_noise: 0.0,
            goal_orientation_noise: 0.0,
            goal_position_bias: [0.0; 3],
            goal_orientation_bias: [0.0; 3],
            desired_force: [desired_force; 2],
            stiffness: None,
            insertion_planes: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bounds = [
            ("init_position", self.init_position),
            ("init_orientation", self.init_orientation),
            ("goal_position_noise", self.goal_position_noise),
            ("goal_orientation_noise", self.goal_orientation_noise),
        ];
        for (name, b) in bounds {
            if !(b >= 0.0) || !b.is_finite() {
                return Err(Error::Config(format!(
                    "{name} must be a finite bound >= 0, got {b}"
                )));
            }
        }
        let [lo, hi] = self.desired_force;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!(
                "desired_force range [{lo}, {hi}] is invalid"
            )));
        }
        if let Some([lo, hi]) = self.stiffness {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::Config(format!(
                    "stiffness range [{lo}, {hi}] is invalid"
                )));
            }
        }
        if !self.goal_position_bias.iter().chain(&self.goal_orientation_bias).all(|b| b.is_finite()) {
            return Err(Error::Config("goal biases must be finite".into()));
        }
        Ok(())
    }
}

/// `None` is written as an empty list so that it survives formats without a
/// null value.
#[cfg(feature = "serde")]
mod optional_range {
    use alloc::vec::Vec;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<[f64; 2]>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(r) => r.as_slice().serialize(s),
            None => (&[] as &[f64]).serialize(s),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<[f64; 2]>, D::Error> {
        let v: Vec<f64> = Vec::deserialize(d)?;
        match v[..] {
            [] => Ok(None),
            [lo, hi] => Ok(Some([lo, hi])),
            _ => Err(D::Error::custom(alloc::format!("expected 0 or 2 values, got {}", v.len()))),
        }
    }
}

/// One randomized episode setup.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RandomizedScene {
    pub scene: PegHoleScene,
    pub init: Pose,
    /// Goal estimate handed to the policy and controller.
    pub noisy_goal: Pose,
    pub desired_force: f64,
}

fn uniform<R: rand::Rng + ?Sized>(rng: &mut R, bound: f64) -> f64 {
    rng.random_range(-bound..=bound)
}

fn truncated_normal<R: rand::Rng + ?Sized>(rng: &mut R, bound: f64) -> f64 {
    if bound == 0.0 {
        return 0.0;
    }
    let normal = Normal::new(0.0, bound / 2.0).expect("positive std");
    loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= bound {
            return v;
        }
    }
}

/// Draw a scene, initial pose, goal estimate and desired force.
pub fn randomize_scene<R: rand::Rng + ?Sized>(
    rng: &mut R,
    ranges: &RandomizationRanges,
    base: &PegHoleScene,
) -> Result<RandomizedScene> {
    ranges.validate()?;
    base.validate()?;
    let mut scene = base.clone();

    if !ranges.insertion_planes.is_empty() {
        let plane = &ranges.insertion_planes[rng.random_range(0..ranges.insertion_planes.len())];
        let rot = exp_rotation(&Vec3::from(plane.rotation));
        let mut hole = base.hole_pose;
        hole.p += Vec3::from(plane.offset);
        hole.set_q(rot * hole.q());
        scene.hole_pose = hole;
    }
    if let Some([lo, hi]) = ranges.stiffness {
        scene.surface_stiffness = Float::exp(rng.random_range(Float::ln(lo)..=Float::ln(hi)));
    }

    let planar = scene.planar;
    let hole = scene.hole_pose;
    let to_world = |v: Vec3| hole.q() * v;

    // initial pose, relative to the hole entrance
    let b = ranges.init_position;
    let lateral_x = uniform(rng, b);
    let lateral_y = if planar { 0.0 } else { uniform(rng, b) };
    let axial = rng.random_range(0.0..=b);
    let init_local = Vec3::new(lateral_x, lateral_y, scene.hole_depth + axial);
    let rv = random_rotation(rng, ranges.init_orientation, planar, uniform);
    let mut init = Pose::from_translation(hole.transform_point(&init_local));
    init.set_q(hole.q() * exp_rotation(&rv));

    // goal estimate
    let n = ranges.goal_position_noise;
    let noise = Vec3::new(
        truncated_normal(rng, n),
        if planar {
            0.0
        } else {
            truncated_normal(rng, n)
        },
        truncated_normal(rng, n),
    ) + Vec3::from(ranges.goal_position_bias);
    let rn = random_rotation(rng, ranges.goal_orientation_noise, planar, truncated_normal);
    let mut noisy_goal = Pose::from_translation(hole.p + to_world(noise));
    let bias = exp_rotation(&Vec3::from(ranges.goal_orientation_bias));
    noisy_goal.set_q(hole.q() * bias * exp_rotation(&rn));

    let [flo, fhi] = ranges.desired_force;
    let desired_force = rng.random_range(flo..=fhi);

    Ok(RandomizedScene {
        scene,
        init,
        noisy_goal,
        desired_force,
    })
}

fn random_rotation<R: rand::Rng + ?Sized>(
    rng: &mut R,
    bound: f64,
    planar: bool,
    draw: fn(&mut R, f64) -> f64,
) -> Vec3 {
    if planar {
        Vec3::new(0.0, draw(rng, bound), 0.0)
    } else {
        let x = draw(rng, bound);
        let y = draw(rng, bound);
        let z = draw(rng, bound);
        Vec3::new(x, y, z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::pose_error;
    use crate::sim::reset;
    use rand::SeedableRng;

    fn rng(seed: u64) -> crate::Rng {
        crate::Rng::seed_from_u64(seed)
    }

    #[test]
    fn collapsed_ranges_are_deterministic() {
        let base = PegHoleScene::default();
        let r = randomize_scene(&mut rng(1), &RandomizationRanges::none(5.0), &base).unwrap();
        assert_eq!(r.scene, base);
        assert_eq!(r.noisy_goal, base.hole_pose);
        assert_eq!(r.init, base.entrance_pose());
        assert_eq!(r.desired_force, 5.0);
        let r2 = randomize_scene(&mut rng(2), &RandomizationRanges::none(5.0), &base).unwrap();
        assert_eq!(r, r2);
    }

    #[test]
    fn default_ranges_respect_bounds() {
        let base = PegHoleScene::default();
        let ranges = RandomizationRanges::default();
        let mut g = rng(7);
        for _ in 0..2000 {
            let r = randomize_scene(&mut g, &ranges, &base).unwrap();
            let local = base.hole_pose.inverse_transform_point(&r.init.p);
            assert!(local.x.abs() <= 0.4 && local.y.abs() <= 0.4);
            let above = local.z - base.hole_depth;
            assert!((0.0..=0.4).contains(&above));
            let rot = pose_error(&base.hole_pose, &r.init).dtheta;
            // box of +-10 deg per axis
            assert!(rot.norm() <= 10f64.to_radians() * 3f64.sqrt() + 1e-12);
            assert!((0.0..=10.0).contains(&r.desired_force));
            let k = r.scene.surface_stiffness;
            assert!((1.0e3..=1.0e5).contains(&k));
            let e = pose_error(&r.noisy_goal, &r.scene.hole_pose);
            assert!(e.dp.iter().all(|c| c.abs() <= 0.002 + 1e-15));
            assert!(reset(&r.scene, r.init).is_ok());
        }
    }

    /// Monte-Carlo oracle: sample mean of the goal noise is within 3 sigma/sqrt(n) of 0.
    #[test]
    fn goal_noise_statistics() {
        let mut g = rng(11);
        let n = 100_000;
        let bound = 0.002;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let v = truncated_normal(&mut g, bound);
            assert!(v.abs() <= bound);
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let sd = (sum_sq / n as f64 - mean * mean).sqrt();
        assert!(
            mean.abs() < 3.0 * sd / (n as f64).sqrt(),
            "mean {mean} sd {sd}"
        );
        // truncation at 2 sigma shrinks the spread a little below sigma
        assert!(sd < bound / 2.0 && sd > 0.8 * bound / 2.0);
    }

    #[test]
    fn planar_keeps_cross_section() {
        let base = PegHoleScene {
            planar: true,
            ..Default::default()
        };
        let mut g = rng(3);
        for _ in 0..100 {
            let r = randomize_scene(&mut g, &RandomizationRanges::default(), &base).unwrap();
            assert_eq!(r.init.p.y, 0.0);
            assert_eq!(r.noisy_goal.p.y, 0.0);
            let rv = crate::geom::rotation_vector(r.init.q());
            assert!(rv.x.abs() < 1e-15 && rv.z.abs() < 1e-15);
        }
    }

    #[test]
    fn planes_and_bias() {
        let base = PegHoleScene::default();
        let mut ranges = RandomizationRanges::none(3.0);
        ranges.goal_position_bias = [0.002, 0.0, 0.0];
        ranges.insertion_planes = alloc::vec![InsertionPlane {
            offset: [0.1, 0.0, 0.0],
            rotation: [core::f64::consts::FRAC_PI_2, 0.0, 0.0],
        }];
        let r = randomize_scene(&mut rng(0), &ranges, &base).unwrap();
        assert!((r.scene.hole_pose.p - Vec3::new(0.1, 0.0, 0.0)).norm() < 1e-15);
        assert!((r.scene.insertion_axis() - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
        let e = pose_error(&r.scene.hole_pose, &r.noisy_goal);
        assert!((e.dp - Vec3::new(0.002, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn invalid_ranges() {
        let base = PegHoleScene::default();
        let mut ranges = RandomizationRanges::default();
        ranges.desired_force = [5.0, 1.0];
        assert!(matches!(
            randomize_scene(&mut rng(0), &ranges, &base),
            Err(Error::Config(_))
        ));
        let mut ranges = RandomizationRanges::default();
        ranges.stiffness = Some([0.0, 1.0]);
        assert!(randomize_scene(&mut rng(0), &ranges, &base).is_err());
        let mut ranges = RandomizationRanges::default();
        ranges.init_position = -1.0;
        assert!(randomize_scene(&mut rng(0), &ranges, &base).is_err());
    }
}
