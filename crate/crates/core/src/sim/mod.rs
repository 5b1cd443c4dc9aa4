//! Quasi-static peg-in-hole environment.
//!
//! The end-effector is an ideal Cartesian position-tracked effector with a
//! first-order lag toward the commanded pose. Contact with the hole and the
//! surrounding surface is a penalty-spring model evaluated on quadrature
//! points of the peg faces; the resulting wrench is a reading that feeds the
//! force controller, it does not push the effector back.

mod contact;
mod randomize;

pub use contact::{contact_wrench, max_penetration};
pub use randomize::{randomize_scene, InsertionPlane, RandomizationRanges, RandomizedScene};

use alloc::format;

use crate::error::{Error, Result};
use crate::geom::{integrate_pose, pose_error, Pose, Twist, Vec3, Wrench};

/// Deepest penetration accepted by [`reset`].
pub const MAX_START_PENETRATION: f64 = 0.001;
/// Distance to the true goal under which an insertion counts as completed.
pub const SUCCESS_DISTANCE: f64 = 0.001;

/// Geometry and contact parameters of one insertion task.
///
/// `hole_pose` is the peg-tip pose at full insertion. In the hole frame the
/// peg travels along -z; the top surface sits at `z = hole_depth` and the
/// hole floor at `z = 0`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PegHoleScene {
    pub hole_pose: Pose,
    pub hole_half_width: f64,
    pub peg_half_width: f64,
    pub hole_depth: f64,
    pub peg_length: f64,
    /// Surface stiffness k_s (N/m).
    pub surface_stiffness: f64,
    /// Contact damping d_s (N s/m).
    pub contact_damping: f64,
    pub friction: f64,
    /// Restrict contact to the hole-frame x-z cross-section.
    pub planar: bool,
}

impl Default for PegHoleScene {
    fn default() -> Self {
        Self {
            hole_pose: Pose::identity(),
            hole_half_width: 0.006,
            peg_half_width: 0.005,
            hole_depth: 0.01,
            peg_length: 0.03,
            surface_stiffness: 1.0e4,
            contact_damping: 10.0,
            friction: 0.3,
            planar: false,
        }
    }
}

impl PegHoleScene {
    /// Hole width minus peg width.
    pub fn clearance(&self) -> f64 {
        2.0 * (self.hole_half_width - self.peg_half_width)
    }

    /// Unit direction (world frame) along which the peg is inserted.
    pub fn insertion_axis(&self) -> Vec3 {
        self.hole_pose.q() * Vec3::new(0.0, 0.0, -1.0)
    }

    /// Peg-tip pose at the hole entrance, aligned with the hole.
    pub fn entrance_pose(&self) -> Pose {
        let mut p = self.hole_pose;
        p.p -= self.insertion_axis() * self.hole_depth;
        p
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hole_half_width", self.hole_half_width),
            ("peg_half_width", self.peg_half_width),
            ("hole_depth", self.hole_depth),
            ("peg_length", self.peg_length),
            ("surface_stiffness", self.surface_stiffness),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.clearance() > 0.0) {
            return Err(Error::Config(format!(
                "clearance must be positive (hole {} <= peg {})",
                self.hole_half_width, self.peg_half_width
            )));
        }
        if !(self.contact_damping >= 0.0) || !self.contact_damping.is_finite() {
            return Err(Error::Config("contact_damping must be >= 0".into()));
        }
        if !(0.0..2.0).contains(&self.friction) {
            return Err(Error::Config(format!(
                "friction must be in [0, 2), got {}",
                self.friction
            )));
        }
        if !self.hole_pose.is_finite() {
            return Err(Error::Config("hole_pose is not finite".into()));
        }
        Ok(())
    }
}

/// Timing of the inner control loop and the tracking model.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SimConfig {
    /// 500 Hz inner loop.
    pub inner_dt: f64,
    pub tracking_time_constant: f64,
    pub max_linear_speed: f64,
    pub max_angular_speed: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            inner_dt: 1.0 / 500.0,
            tracking_time_constant: 0.05,
            max_linear_speed: 0.25,
            max_angular_speed: 1.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inner_dt > 0.0) {
            return Err(Error::Config("inner_dt must be positive".into()));
        }
        if !(self.tracking_time_constant >= self.inner_dt) {
            return Err(Error::Config(
                "tracking_time_constant must be >= inner_dt".into(),
            ));
        }
        if !(self.max_linear_speed > 0.0 && self.max_angular_speed > 0.0) {
            return Err(Error::Config("speed caps must be positive".into()));
        }
        Ok(())
    }
}

/// Simulated robot side: end-effector pose, velocity and the last contact wrench
/// (acting on the peg, world frame, moments about the peg tip).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RobotState {
    pub x: Pose,
    pub twist: Twist,
    pub wrench: Wrench,
}

pub fn reset(scene: &PegHoleScene, init: Pose) -> Result<RobotState> {
    if !init.is_finite() {
        return Err(crate::error::invalid("initial pose is not finite"));
    }
    let depth = max_penetration(&init, scene);
    if depth > MAX_START_PENETRATION {
        return Err(Error::InvalidStart {
            depth,
            limit: MAX_START_PENETRATION,
        });
    }
    Ok(RobotState {
        x: init,
        twist: Twist::zero(),
        wrench: Wrench::zero(),
    })
}

fn cap(v: Vec3, max: f64) -> Vec3 {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

/// One inner-loop step: move toward `x_c` with a first-order lag, then
/// recompute the contact wrench at the new pose.
pub fn step_inner(
    state: &RobotState,
    x_c: &Pose,
    scene: &PegHoleScene,
    cfg: &SimConfig,
) -> RobotState {
    let dt = cfg.inner_dt;
    let e = pose_error(&state.x, x_c);
    let cmd = Twist {
        v: cap(e.dp / cfg.tracking_time_constant, cfg.max_linear_speed),
        w: cap(e.dtheta / cfg.tracking_time_constant, cfg.max_angular_speed),
    };
    let x = integrate_pose(&state.x, &cmd, dt).unwrap_or(state.x);
    let moved = pose_error(&state.x, &x);
    let mut next = RobotState {
        x,
        twist: Twist {
            v: moved.dp / dt,
            w: moved.dtheta / dt,
        },
        wrench: Wrench::zero(),
    };
    next.wrench = contact_wrench(&next, scene);
    next
}

pub fn check_success(state: &RobotState, goal: &Pose) -> bool {
    (state.x.p - goal.p).norm() < SUCCESS_DISTANCE
}
