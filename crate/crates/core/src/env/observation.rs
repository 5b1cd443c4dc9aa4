use alloc::vec::Vec;

use crate::geom::{pose_error, Pose, Vec6};
use crate::sim::RobotState;

pub const PROPRIO_DIM: usize = 37;
pub const WINDOW_LEN: usize = 12;
pub const WINDOW_CHANNELS: usize = 6;
/// Index of the desired-force entry in the proprioceptive vector.
pub const DESIRED_FORCE_SLOT: usize = 12;
/// First index of the previous action in the proprioceptive vector.
pub const PREV_ACTION_SLOT: usize = 13;

/// What the policy sees.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Observation {
    /// Pose error to the estimated goal (6), end-effector twist (6), desired
    /// force (1), previous action (24).
    pub proprio: Vec<f64>,
    /// Filtered wrench history, `WINDOW_LEN x WINDOW_CHANNELS` row-major,
    /// oldest row first.
    pub window: Vec<f64>,
}

/// Fixed normalization constants.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ObservationScales {
    /// m
    pub position: f64,
    /// rad
    pub angle: f64,
    /// m/s and rad/s
    pub velocity: f64,
    /// N
    pub desired_force: f64,
    /// Lever arm (m) turning the force scale into the moment scale.
    pub moment_arm: f64,
}

impl Default for ObservationScales {
    fn default() -> Self {
        Self {
            position: 0.05,
            angle: 0.17,
            velocity: 0.1,
            desired_force: 10.0,
            moment_arm: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ObservationConfig {
    pub scales: ObservationScales,
    /// Zero the previous-action slots.
    pub hide_prev_action: bool,
    /// Zero the desired-force slot.
    pub hide_desired_force: bool,
}

/// Assemble the observation. Only the estimated goal enters; the true goal
/// is never an argument.
pub fn build_observation(
    state: &RobotState,
    noisy_goal: &Pose,
    desired_force: f64,
    a_prev: &[f64],
    window: &[[f64; WINDOW_CHANNELS]],
    f_max: f64,
    cfg: &ObservationConfig,
) -> Observation {
    let s = &cfg.scales;
    let e = pose_error(&state.x, noisy_goal);
    let mut proprio = Vec::with_capacity(PROPRIO_DIM);
    proprio.extend(e.dp.iter().map(|v| v / s.position));
    proprio.extend(e.dtheta.iter().map(|v| v / s.angle));
    proprio.extend(state.twist.to_vec6().iter().map(|v| v / s.velocity));
    proprio.push(if cfg.hide_desired_force {
        0.0
    } else {
        desired_force / s.desired_force
    });
    if cfg.hide_prev_action {
        proprio.extend(a_prev.iter().map(|_| 0.0));
    } else {
        proprio.extend_from_slice(a_prev);
    }
    let moment_scale = f_max * s.moment_arm;
    let mut flat = Vec::with_capacity(window.len() * WINDOW_CHANNELS);
    for row in window {
        flat.extend(row[..3].iter().map(|v| v / f_max));
        flat.extend(row[3..].iter().map(|v| v / moment_scale));
    }
    Observation {
        proprio,
        window: flat,
    }
}

/// Fixed-length history, oldest first.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WrenchWindow {
    rows: Vec<[f64; WINDOW_CHANNELS]>,
}

impl Default for WrenchWindow {
    fn default() -> Self {
        Self {
            rows: alloc::vec![[0.0; WINDOW_CHANNELS]; WINDOW_LEN],
        }
    }
}

impl WrenchWindow {
    pub fn push(&mut self, w: &Vec6) {
        self.rows.remove(0);
        self.rows.push([w[0], w[1], w[2], w[3], w[4], w[5]]);
    }

    pub fn rows(&self) -> &[[f64; WINDOW_CHANNELS]] {
        &self.rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Twist, Vec3, Wrench};

    fn state_at(p: Vec3) -> RobotState {
        RobotState {
            x: Pose::from_translation(p),
            twist: Twist::zero(),
            wrench: Wrench::zero(),
        }
    }

    #[test]
    fn at_goal_only_desired_force_is_set() {
        let g = Pose::from_translation(Vec3::new(0.1, 0.2, 0.3));
        let o = build_observation(
            &state_at(g.p),
            &g,
            5.0,
            &[0.0; 24],
            WrenchWindow::default().rows(),
            30.0,
            &Default::default(),
        );
        assert_eq!(o.proprio.len(), PROPRIO_DIM);
        assert_eq!(o.window.len(), WINDOW_LEN * WINDOW_CHANNELS);
        for (i, v) in o.proprio.iter().enumerate() {
            assert_eq!(*v, if i == DESIRED_FORCE_SLOT { 0.5 } else { 0.0 });
        }
    }

    #[test]
    fn position_scale() {
        let g = Pose::identity();
        let o = build_observation(
            &state_at(Vec3::new(-0.001, 0.0, 0.0)),
            &g,
            0.0,
            &[0.0; 24],
            WrenchWindow::default().rows(),
            30.0,
            &Default::default(),
        );
        assert!((o.proprio[0] - 0.02).abs() < 1e-15);
    }

    #[test]
    fn newest_row_is_last() {
        let mut w = WrenchWindow::default();
        w.push(&Vec6::repeat(1.0));
        let marker = Vec6::new(3.0, -6.0, 9.0, 0.3, 0.0, -1.5);
        w.push(&marker);
        let o = build_observation(
            &state_at(Vec3::zeros()),
            &Pose::identity(),
            0.0,
            &[0.0; 24],
            w.rows(),
            30.0,
            &Default::default(),
        );
        let row = &o.window[11 * 6..];
        for (got, want) in row.iter().zip([0.1, -0.2, 0.3, 0.2, 0.0, -1.0]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert_eq!(o.window[10 * 6], 1.0 / 30.0);
        assert!(o.window[..10 * 6].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ablation_masks() {
        let cfg = ObservationConfig {
            hide_prev_action: true,
            hide_desired_force: true,
            ..Default::default()
        };
        let o = build_observation(
            &state_at(Vec3::zeros()),
            &Pose::identity(),
            5.0,
            &[0.7; 24],
            WrenchWindow::default().rows(),
            30.0,
            &cfg,
        );
        assert!(o.proprio[DESIRED_FORCE_SLOT..].iter().all(|&v| v == 0.0));
    }
}
