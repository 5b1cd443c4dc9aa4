//! The 20 Hz insertion environment: one policy step runs the parallel
//! controller and the simulator for a fixed number of 500 Hz inner steps.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;

use crate::control::{
    apply_command, map_action_to_params, parallel_control, CommandLimits, ControllerConfig,
    ControllerParams, ControllerState, ParamRanges, PARAM_ACTION_DIM,
};
use crate::error::{Error, Result};
use crate::geom::{pose_error, Pose, Vec3, Vec6};
use crate::sim::{
    check_success, randomize_scene, reset, step_inner, PegHoleScene, RandomizationRanges,
    RandomizedScene, RobotState, SimConfig,
};

mod observation;
mod reward;

pub use observation::{
    build_observation, Observation, ObservationConfig, ObservationScales, WrenchWindow,
    DESIRED_FORCE_SLOT, PREV_ACTION_SLOT, PROPRIO_DIM, WINDOW_CHANNELS, WINDOW_LEN,
};
pub use reward::{
    compute_reward, force_score, l12, terminal_bonus, Status, COLLISION_BONUS, L12_SMOOTHING,
};

pub const POSE_ACTION_DIM: usize = 6;
pub const ACTION_DIM: usize = POSE_ACTION_DIM + PARAM_ACTION_DIM;
pub const POLICY_RATE_HZ: f64 = 20.0;
const ACTION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct EpisodeConfig {
    /// Policy steps before timeout.
    pub max_steps: usize,
    /// Collision threshold on any filtered wrench component (N, N m).
    pub max_force: f64,
    pub force_weight: f64,
    pub terminal_weight: f64,
    /// Optional shaping `w_d (1 - |dp| / d0)` on the estimated-goal distance.
    pub distance_weight: f64,
    pub distance_scale: f64,
    pub inner_steps: usize,
    pub filter_cutoff_hz: f64,
    /// Pose-increment magnitude of a unit position action: `[m, rad]`.
    pub pose_action_scale: [f64; 2],
    /// Fixed base gains; the policy contributes only the pose action.
    pub residual: bool,
    pub observation: ObservationConfig,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_steps: 300,
            max_force: 30.0,
            force_weight: 1.0,
            terminal_weight: 1.0,
            distance_weight: 0.0,
            distance_scale: 0.02,
            inner_steps: 25,
            filter_cutoff_hz: 50.0,
            pose_action_scale: [0.005, 1f64.to_radians()],
            residual: false,
            observation: ObservationConfig::default(),
        }
    }
}

/// Everything an environment instance needs.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct EnvConfig {
    pub scene: PegHoleScene,
    pub randomization: RandomizationRanges,
    pub episode: EpisodeConfig,
    pub sim: SimConfig,
    pub controller: ControllerConfig,
    pub limits: CommandLimits,
    pub params: ParamRanges,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.randomization.validate()?;
        self.sim.validate()?;
        self.params.validate()?;
        let e = &self.episode;
        let cfg = |m: &str| Err(Error::Config(format!("episode: {m}")));
        if e.max_steps == 0 {
            return cfg("max_steps must be > 0");
        }
        if e.inner_steps == 0 {
            return cfg("inner_steps must be > 0");
        }
        if !(e.max_force > self.randomization.desired_force[1])
            || !(self.randomization.desired_force[0] >= 0.0)
        {
            return cfg("need max_force > desired force >= 0");
        }
        if !(e.filter_cutoff_hz > 0.0) || !(e.distance_scale > 0.0) {
            return cfg("filter cutoff and distance scale must be positive");
        }
        let s = &e.observation.scales;
        if ![
            s.position,
            s.angle,
            s.velocity,
            s.desired_force,
            s.moment_arm,
        ]
        .iter()
        .all(|&v| v > 0.0)
        {
            return cfg("observation scales must be positive");
        }
        if !(self.controller.integral_bound > 0.0)
            || !(self.limits.max_translation > 0.0)
            || !(self.limits.max_rotation > 0.0)
        {
            return Err(Error::Config(format!("controller bounds must be positive")));
        }
        Ok(())
    }

    /// Inner steps per policy step implied by the two loop rates.
    pub fn nominal_inner_steps(&self) -> usize {
        Float::round(1.0 / (self.sim.inner_dt * POLICY_RATE_HZ)) as usize
    }
}

/// Diagnostics attached to every step.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepInfo {
    /// Distance from the peg tip to the true goal (m).
    pub goal_distance: f64,
    /// Peg tip minus true goal, world frame (m).
    pub relative_position: [f64; 3],
    /// Policy-step aggregate of the filtered sensor wrench.
    pub wrench: [f64; 6],
    /// Largest filtered force magnitude seen during the step (N).
    pub peak_force: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub status: Status,
    pub info: StepInfo,
}

/// Complete mutable episode state; serializable for exact resume.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpisodeState {
    pub scene: PegHoleScene,
    pub robot: RobotState,
    /// What the policy is told.
    pub noisy_goal: Pose,
    /// Used only for success detection and diagnostics.
    pub true_goal: Pose,
    pub desired_force: f64,
    pub controller: ControllerState,
    pub filtered: Vec6,
    pub window: WrenchWindow,
    pub prev_action: Vec<f64>,
    pub t: usize,
    pub status: Status,
}

/// Sensor reading: the wrench the peg exerts on the environment.
fn sensor_wrench(robot: &RobotState) -> Vec6 {
    -robot.wrench.to_vec6()
}

/// Project a task-space increment onto the hole-frame x-z plane (translation)
/// and the hole-frame y axis (rotation).
fn planar_projection(v: &Vec6, hole: &Pose) -> Vec6 {
    let q = hole.q();
    let t = q.inverse() * Vec3::new(v[0], v[1], v[2]);
    let r = q.inverse() * Vec3::new(v[3], v[4], v[5]);
    let t = q * Vec3::new(t.x, 0.0, t.z);
    let r = q * Vec3::new(0.0, r.y, 0.0);
    Vec6::new(t.x, t.y, t.z, r.x, r.y, r.z)
}

#[derive(Debug, Clone)]
pub struct InsertionEnv {
    cfg: EnvConfig,
    state: Option<EpisodeState>,
}

impl InsertionEnv {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, state: None })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> Option<&EpisodeState> {
        self.state.as_ref()
    }

    /// Restore a state captured with [`InsertionEnv::state`].
    pub fn restore(&mut self, state: Option<EpisodeState>) {
        self.state = state;
    }

    /// Start an episode on a freshly randomized scene.
    pub fn reset<R: rand::Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Observation> {
        let rs = randomize_scene(rng, &self.cfg.randomization, &self.cfg.scene)?;
        let goal = rs.scene.hole_pose;
        self.reset_from(rs, goal)
    }

    /// Start an episode on a given scene with an explicit true goal.
    pub fn reset_from(&mut self, rs: RandomizedScene, true_goal: Pose) -> Result<Observation> {
        let robot = reset(&rs.scene, rs.init)?;
        let st = EpisodeState {
            scene: rs.scene,
            robot,
            noisy_goal: rs.noisy_goal,
            true_goal,
            desired_force: rs.desired_force,
            controller: ControllerState::default(),
            filtered: Vec6::zeros(),
            window: WrenchWindow::default(),
            prev_action: alloc::vec![0.0; ACTION_DIM],
            t: 0,
            status: Status::Running,
        };
        let obs = self.observe(&st);
        self.state = Some(st);
        Ok(obs)
    }

    /// Observation of the current episode state.
    pub fn observation(&self) -> Option<Observation> {
        self.state.as_ref().map(|st| self.observe(st))
    }

    fn observe(&self, st: &EpisodeState) -> Observation {
        build_observation(
            &st.robot,
            &st.noisy_goal,
            st.desired_force,
            &st.prev_action,
            st.window.rows(),
            self.cfg.episode.max_force,
            &self.cfg.episode.observation,
        )
    }

    /// Controller gains for an action.
    pub fn controller_params(&self, action: &[f64]) -> Result<ControllerParams> {
        if self.cfg.episode.residual {
            map_action_to_params(&[0.0; PARAM_ACTION_DIM], &self.cfg.params)
        } else {
            map_action_to_params(&action[POSE_ACTION_DIM..], &self.cfg.params)
        }
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let mut st = match self.state.take() {
            Some(s) if s.status == Status::Running => s,
            other => {
                self.state = other;
                return Err(Error::EpisodeOver);
            }
        };
        let res = self.advance(&mut st, action);
        self.state = Some(st);
        res
    }

    fn advance(&self, st: &mut EpisodeState, action: &[f64]) -> Result<StepResult> {
        if action.len() != ACTION_DIM {
            return Err(Error::InvalidAction(format!(
                "expected {ACTION_DIM} actions, got {}",
                action.len()
            )));
        }
        if let Some((i, v)) = action
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || v.abs() > 1.0 + ACTION_TOL)
        {
            return Err(Error::InvalidAction(format!(
                "a[{i}] = {v} outside [-1, 1]"
            )));
        }
        let action: Vec<f64> = action.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        let ep = &self.cfg.episode;
        let params = self.controller_params(&action)?;
        let [ts, rs] = ep.pose_action_scale;
        let mut a_x = Vec6::from_fn(|i, _| action[i] * if i < 3 { ts } else { rs });
        let planar = st.scene.planar;
        let hole = st.scene.hole_pose;
        if planar {
            a_x = planar_projection(&a_x, &hole);
        }
        let axis = st.scene.insertion_axis();
        let f_goal = Vec6::new(axis.x, axis.y, axis.z, 0.0, 0.0, 0.0) * st.desired_force;
        let dt = self.cfg.sim.inner_dt;
        let rc = 1.0 / (2.0 * core::f64::consts::PI * ep.filter_cutoff_hz);
        let alpha = dt / (dt + rc);

        let mut sum = Vec6::zeros();
        let mut count = 0usize;
        let mut peak: f64 = 0.0;
        let mut status = Status::Running;
        for _ in 0..ep.inner_steps {
            let mut x_e = pose_error(&st.robot.x, &st.noisy_goal).to_vec6();
            if planar {
                x_e = planar_projection(&x_e, &hole);
            }
            let xdot_e = st.controller.error_increment(&x_e);
            let f_e = f_goal - st.filtered;
            let (terms, next) = parallel_control(
                &x_e,
                &xdot_e,
                &f_e,
                &params,
                &a_x,
                &st.controller,
                dt,
                &self.cfg.controller,
            )?;
            st.controller = next;
            let mut delta = terms.total();
            if planar {
                delta = planar_projection(&delta, &hole);
            }
            let x_c = apply_command(&st.robot.x, &delta, &self.cfg.limits);
            st.robot = step_inner(&st.robot, &x_c, &st.scene, &self.cfg.sim);
            st.filtered += (sensor_wrench(&st.robot) - st.filtered) * alpha;
            sum += st.filtered;
            count += 1;
            peak = peak.max(Vec3::new(st.filtered[0], st.filtered[1], st.filtered[2]).norm());
            if st.filtered.iter().any(|c| c.abs() > ep.max_force) {
                status = Status::Collision;
                break;
            }
        }
        // Judged once per policy step so the true goal cannot alter the motion.
        if status == Status::Running && check_success(&st.robot, &st.true_goal) {
            status = Status::Success;
        }
        let agg = sum / count as f64;
        st.window.push(&agg);
        st.t += 1;
        if status == Status::Running && st.t >= ep.max_steps {
            status = Status::Timeout;
        }
        st.status = status;
        st.prev_action = action;

        let mut reward = compute_reward(
            &agg,
            &f_goal,
            ep.max_force,
            status,
            st.t,
            ep.max_steps,
            ep.force_weight,
            ep.terminal_weight,
        );
        if ep.distance_weight != 0.0 {
            let d = (st.noisy_goal.p - st.robot.x.p).norm();
            reward += ep.distance_weight * (1.0 - d / ep.distance_scale);
        }
        let rel = st.robot.x.p - st.true_goal.p;
        let info = StepInfo {
            goal_distance: rel.norm(),
            relative_position: [rel.x, rel.y, rel.z],
            wrench: [agg[0], agg[1], agg[2], agg[3], agg[4], agg[5]],
            peak_force: peak,
        };
        Ok(StepResult {
            obs: self.observe(st),
            reward,
            status,
            info,
        })
    }
}

/// Unrandomized scene starting at `offset` (hole frame) from the entrance,
/// with an exact goal estimate.
pub fn fixed_scene(scene: &PegHoleScene, offset: Vec3, desired_force: f64) -> RandomizedScene {
    let entrance = scene.entrance_pose();
    let mut init = entrance;
    init.p = entrance.p + scene.hole_pose.q() * offset;
    RandomizedScene {
        scene: scene.clone(),
        init,
        noisy_goal: scene.hole_pose,
        desired_force,
    }
}
