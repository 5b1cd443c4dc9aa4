//! Per-step reward: a smoothed force-tracking term plus a terminal bonus.

use num_traits::Float;

use crate::geom::Vec6;

/// Smoothing constant of the L1-L2 cost.
pub const L12_SMOOTHING: f64 = 1e-6;
pub const COLLISION_BONUS: f64 = -50.0;

/// Episode status after a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Status {
    #[default]
    Running,
    Success,
    Collision,
    Timeout,
}

impl Status {
    pub fn is_done(self) -> bool {
        self != Status::Running
    }

    /// Whether the episode ended in a true terminal state (no bootstrapping).
    pub fn is_terminal(self) -> bool {
        matches!(self, Status::Success | Status::Collision)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Running => "running",
            Status::Success => "success",
            Status::Collision => "collision",
            Status::Timeout => "timeout",
        }
    }
}

/// `0.5 |e|^2 + sqrt(alpha + |e|^2)`.
pub fn l12(norm: f64) -> f64 {
    0.5 * norm * norm + Float::sqrt(L12_SMOOTHING + norm * norm)
}

/// Linear map of the L1-L2 cost from `[l12(0), l12(1)]` onto `[1, 0]`, clamped.
pub fn force_score(norm: f64) -> f64 {
    let lo = l12(0.0);
    let hi = l12(1.0);
    (1.0 - (l12(norm) - lo) / (hi - lo)).clamp(0.0, 1.0)
}

/// Terminal bonus: `100 + (1 - t/T) 100` on success, `-50` on collision.
pub fn terminal_bonus(status: Status, t: usize, max_steps: usize) -> f64 {
    match status {
        Status::Success => 100.0 + (1.0 - t as f64 / max_steps as f64) * 100.0,
        Status::Collision => COLLISION_BONUS,
        Status::Running | Status::Timeout => 0.0,
    }
}

/// `w1 score(|(F_ext - F_g) / F_max|) + w2 bonus`.
#[allow(clippy::too_many_arguments)]
pub fn compute_reward(
    f_ext: &Vec6,
    f_goal: &Vec6,
    f_max: f64,
    status: Status,
    t: usize,
    max_steps: usize,
    w_force: f64,
    w_terminal: f64,
) -> f64 {
    let e = (f_ext - f_goal) / f_max;
    w_force * force_score(e.norm()) + w_terminal * terminal_bonus(status, t, max_steps)
}
