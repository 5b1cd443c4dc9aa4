//! Task-space rigid-body math: poses with unit-quaternion orientation, pose
//! errors, twists and wrenches.
//!
//! Orientation errors are expressed as axis-angle 3-vectors so that a pose
//! error, a twist and a wrench all live in the same 6-dim task space as the
//! controller's selection matrix.

use nalgebra::{Quaternion, UnitQuaternion, Vector3, Vector6};
use num_traits::Float;

use crate::error::{invalid, Result};

pub type Vec3 = Vector3<f64>;
pub type Vec6 = Vector6<f64>;
pub type Quat = UnitQuaternion<f64>;

const UNIT_TOL: f64 = 1e-6;

/// Flip `q` so that its scalar part is non-negative.
pub fn canonical(q: Quat) -> Quat {
    if q.w < 0.0 {
        Quat::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

fn quat_is_finite(q: &Quaternion<f64>) -> bool {
    q.coords.iter().all(|c| c.is_finite())
}

/// Hamilton product of two unit quaternions, renormalized and canonicalized.
pub fn quat_multiply(a: &Quaternion<f64>, b: &Quaternion<f64>) -> Result<Quat> {
    for (name, q) in [("a", a), ("b", b)] {
        if !quat_is_finite(q) {
            return Err(invalid(alloc::format!("quaternion {name} is not finite")));
        }
        if (q.norm() - 1.0).abs() > UNIT_TOL {
            return Err(invalid(alloc::format!(
                "quaternion {name} is not unit (norm {})",
                q.norm()
            )));
        }
    }
    Ok(canonical(Quat::new_normalize(a * b)))
}

/// Shortest-arc rotation vector (axis * angle, angle in [0, pi]) of `q`.
pub fn rotation_vector(q: &Quat) -> Vec3 {
    let q = canonical(*q);
    let v = q.imag();
    let s = v.norm();
    if s < 1e-8 {
        // atan2(s, w) ~ s / w for tiny s
        return v * (2.0 / q.w);
    }
    let angle = 2.0 * Float::atan2(s, q.w);
    v * (angle / s)
}

/// Unit quaternion of the rotation vector `rv`.
pub fn exp_rotation(rv: &Vec3) -> Quat {
    canonical(Quat::from_scaled_axis(*rv))
}

/// End-effector pose: position in meters and a canonical unit quaternion.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Pose {
    pub p: Vec3,
    q: Quat,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(p: Vec3, q: Quat) -> Result<Self> {
        if !p.iter().all(|c| c.is_finite()) || !quat_is_finite(q.quaternion()) {
            return Err(invalid("pose has non-finite components"));
        }
        Ok(Self {
            p,
            q: canonical(Quat::new_normalize(q.into_inner())),
        })
    }

    pub fn identity() -> Self {
        Self {
            p: Vec3::zeros(),
            q: Quat::identity(),
        }
    }

    pub fn from_translation(p: Vec3) -> Self {
        Self {
            p,
            q: Quat::identity(),
        }
    }

    /// Pose from a position and a rotation vector.
    pub fn from_rotation_vector(p: Vec3, rv: Vec3) -> Self {
        Self {
            p,
            q: exp_rotation(&rv),
        }
    }

    pub fn q(&self) -> &Quat {
        &self.q
    }

    pub fn set_q(&mut self, q: Quat) {
        self.q = canonical(Quat::new_normalize(q.into_inner()));
    }

    /// Map a point from this pose's local frame into the parent frame.
    pub fn transform_point(&self, local: &Vec3) -> Vec3 {
        self.p + self.q * local
    }

    /// Map a point from the parent frame into this pose's local frame.
    pub fn inverse_transform_point(&self, world: &Vec3) -> Vec3 {
        self.q.inverse() * (world - self.p)
    }

    /// Pose shifted by `dp` and rotated (world frame) by rotation vector `dtheta`.
    pub fn perturbed(&self, dp: &Vec3, dtheta: &Vec3) -> Self {
        Self {
            p: self.p + dp,
            q: canonical(exp_rotation(dtheta) * self.q),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().all(|c| c.is_finite()) && quat_is_finite(self.q.quaternion())
    }
}

/// Linear and angular velocity.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Twist {
    pub v: Vec3,
    pub w: Vec3,
}

impl Twist {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn to_vec6(&self) -> Vec6 {
        Vec6::new(self.v.x, self.v.y, self.v.z, self.w.x, self.w.y, self.w.z)
    }

    pub fn is_finite(&self) -> bool {
        self.v.iter().chain(self.w.iter()).all(|c| c.is_finite())
    }
}

/// Force (N) and moment (N m).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Wrench {
    pub force: Vec3,
    pub moment: Vec3,
}

impl Wrench {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn to_vec6(&self) -> Vec6 {
        Vec6::new(
            self.force.x,
            self.force.y,
            self.force.z,
            self.moment.x,
            self.moment.y,
            self.moment.z,
        )
    }

    pub fn from_vec6(v: &Vec6) -> Self {
        Self {
            force: Vec3::new(v[0], v[1], v[2]),
            moment: Vec3::new(v[3], v[4], v[5]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.force
            .iter()
            .chain(self.moment.iter())
            .all(|c| c.is_finite())
    }
}

impl core::ops::Add for Wrench {
    type Output = Wrench;
    fn add(self, rhs: Wrench) -> Wrench {
        Wrench {
            force: self.force + rhs.force,
            moment: self.moment + rhs.moment,
        }
    }
}

impl core::ops::Neg for Wrench {
    type Output = Wrench;
    fn neg(self) -> Wrench {
        Wrench {
            force: -self.force,
            moment: -self.moment,
        }
    }
}

/// Translation error and axis-angle orientation error, `target` relative to `current`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseError {
    pub dp: Vec3,
    pub dtheta: Vec3,
}

impl PoseError {
    pub fn to_vec6(&self) -> Vec6 {
        Vec6::new(
            self.dp.x,
            self.dp.y,
            self.dp.z,
            self.dtheta.x,
            self.dtheta.y,
            self.dtheta.z,
        )
    }
}

/// `dp = target.p - current.p`; `dtheta` is the shortest-arc rotation vector
/// of `target.q * current.q^-1`.
pub fn pose_error(current: &Pose, target: &Pose) -> PoseError {
    let rel = target.q * current.q.inverse();
    PoseError {
        dp: target.p - current.p,
        dtheta: rotation_vector(&rel),
    }
}

/// Explicit Euler step of the position and exponential-map step of the
/// orientation (angular velocity in the world frame).
pub fn integrate_pose(x: &Pose, twist: &Twist, dt: f64) -> Result<Pose> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(invalid("dt must be positive"));
    }
    if !twist.is_finite() {
        return Err(invalid("twist has non-finite components"));
    }
    let q = exp_rotation(&(twist.w * dt)) * x.q;
    Ok(Pose {
        p: x.p + twist.v * dt,
        q: canonical(Quat::new_normalize(q.into_inner())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::{FRAC_PI_2, PI};
    use proptest::prelude::*;

    fn rot_z(angle: f64) -> Quat {
        Quat::from_axis_angle(&Vector3::z_axis(), angle)
    }

    fn close(a: &Vec3, b: &Vec3, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn identity_multiply() {
        let q = Quat::from_euler_angles(0.3, -0.2, 1.1);
        let r = quat_multiply(Quat::identity().quaternion(), q.quaternion()).unwrap();
        assert!(r.angle_to(&q) < 1e-12);
        assert!(r.w >= 0.0);
    }

    #[test]
    fn quarter_turns_compose_to_half_turn() {
        let q = rot_z(FRAC_PI_2);
        let r = quat_multiply(q.quaternion(), q.quaternion()).unwrap();
        let rv = rotation_vector(&r);
        assert!(close(&rv, &Vec3::new(0.0, 0.0, PI), 1e-9), "{rv:?}");
    }

    #[test]
    fn multiply_rejects_bad_input() {
        let nan = Quaternion::new(f64::NAN, 0.0, 0.0, 0.0);
        assert!(quat_multiply(&nan, Quat::identity().quaternion()).is_err());
        let long = Quaternion::new(2.0, 0.0, 0.0, 0.0);
        assert!(quat_multiply(&long, Quat::identity().quaternion()).is_err());
    }

    #[test]
    fn canonical_sign() {
        let q = Quat::new_unchecked(Quaternion::new(-0.5, 0.5, 0.5, 0.5));
        let pose = Pose::new(Vec3::zeros(), q).unwrap();
        assert!(pose.q().w > 0.0);
    }

    #[test]
    fn pose_error_cases() {
        let x = Pose::from_rotation_vector(Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.2, 0.0, 0.1));
        let e = pose_error(&x, &x);
        assert!(e.to_vec6().norm() < 1e-12);

        let a = Pose::identity();
        let b = Pose::from_translation(Vec3::new(0.001, 0.0, 0.0));
        let e = pose_error(&a, &b);
        assert!(close(&e.dp, &Vec3::new(0.001, 0.0, 0.0), 1e-15));
        assert!(e.dtheta.norm() < 1e-15);

        let c = Pose::new(Vec3::zeros(), rot_z(FRAC_PI_2)).unwrap();
        let e = pose_error(&a, &c);
        assert!(close(&e.dtheta, &Vec3::new(0.0, 0.0, FRAC_PI_2), 1e-9));
    }

    #[test]
    fn integrate_cases() {
        let x = Pose::identity();
        assert_eq!(integrate_pose(&x, &Twist::zero(), 0.002).unwrap(), x);

        let t = Twist {
            v: Vec3::new(1.0, 0.0, 0.0),
            w: Vec3::zeros(),
        };
        let y = integrate_pose(&x, &t, 0.002).unwrap();
        assert!(close(&y.p, &Vec3::new(0.002, 0.0, 0.0), 1e-15));

        let t = Twist {
            v: Vec3::zeros(),
            w: Vec3::new(0.0, 0.0, PI),
        };
        let y = integrate_pose(&x, &t, 0.5).unwrap();
        assert!(y.q().angle_to(&rot_z(FRAC_PI_2)) < 1e-9);

        assert!(integrate_pose(&x, &t, 0.0).is_err());
        let bad = Twist {
            v: Vec3::new(f64::NAN, 0.0, 0.0),
            w: Vec3::zeros(),
        };
        assert!(integrate_pose(&x, &bad, 0.1).is_err());
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            prop::array::uniform3(-1.0..1.0f64),
            prop::array::uniform3(-3.0..3.0f64),
        )
            .prop_map(|(p, r)| Pose::from_rotation_vector(Vec3::from(p), Vec3::from(r)))
    }

    proptest! {
        #[test]
        fn shortest_arc(a in arb_pose(), b in arb_pose()) {
            let e = pose_error(&a, &b);
            prop_assert!(e.dtheta.norm() <= PI + 1e-12);
            prop_assert!((b.q().norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn self_error_is_zero(a in arb_pose()) {
            prop_assert!(pose_error(&a, &a).to_vec6().norm() < 1e-12);
        }

        #[test]
        fn inverse_gives_identity(a in arb_pose()) {
            let r = quat_multiply(a.q().quaternion(), a.q().inverse().quaternion()).unwrap();
            prop_assert!(r.angle() < 1e-9);
        }

        #[test]
        fn integrate_then_error_recovers_translation(
            a in arb_pose(),
            v in prop::array::uniform3(-1.0..1.0f64),
            w in prop::array::uniform3(-1.0..1.0f64),
            dt in 1e-4..1e-2f64,
        ) {
            let t = Twist { v: Vec3::from(v), w: Vec3::from(w) };
            let b = integrate_pose(&a, &t, dt).unwrap();
            let e = pose_error(&a, &b);
            prop_assert!((e.dp - t.v * dt).norm() < 1e-9);
            prop_assert!((e.dtheta - t.w * dt).norm() < 1e-9);
        }
    }
}
