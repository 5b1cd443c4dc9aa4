//! Deterministic policy evaluation, per-episode traces, and a scripted
//! reference policy.

use std::path::Path;
use std::time::{Duration, Instant};

use peginsert_core::env::{EnvConfig, InsertionEnv, Observation, Status, ACTION_DIM, POLICY_RATE_HZ};
use peginsert_core::nn::PolicyNet;
use peginsert_core::Rng;
use rand::SeedableRng;

use crate::error::Result;
use crate::metrics::{write_trace, EvalRow, TraceRow};

/// Maps observations to actions.
pub trait Actor {
    fn act(&self, obs: &Observation) -> Result<Vec<f64>>;
}

/// The squashed mean of a trained policy.
pub struct MeanAction<'a>(pub &'a PolicyNet<f32>);

impl Actor for MeanAction<'_> {
    fn act(&self, obs: &Observation) -> Result<Vec<f64>> {
        // The generator is unused in deterministic mode.
        let mut unused = Rng::seed_from_u64(0);
        Ok(self.0.act(&obs.proprio, &obs.window, &mut unused, true)?.0)
    }
}

/// Straight-line insertion under pure position control with mid-range gains
/// and no pose offsets.
pub struct ScriptedInsert;

impl Actor for ScriptedInsert {
    fn act(&self, _obs: &Observation) -> Result<Vec<f64>> {
        let mut a = vec![0.0; ACTION_DIM];
        a[18..24].fill(1.0);
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub status: Status,
    pub steps: usize,
    pub episode_return: f64,
    pub peak_force: f64,
    pub wall: Duration,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalOutcome {
    pub episodes: Vec<EpisodeOutcome>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl EvalOutcome {
    pub fn success_rate(&self) -> f64 {
        mean(self.episodes.iter().map(|e| (e.status == Status::Success) as u8 as f64))
    }

    pub fn mean_steps(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.steps as f64))
    }

    pub fn mean_return(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.episode_return))
    }

    pub fn mean_peak_force(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.peak_force))
    }

    /// Wall-clock time per episode, measured.
    pub fn mean_wall_ms(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.wall.as_secs_f64() * 1e3))
    }

    pub fn row(&self, step: u64) -> EvalRow {
        EvalRow {
            step,
            episodes: self.episodes.len(),
            success_rate: self.success_rate(),
            mean_return: self.mean_return(),
            mean_steps: self.mean_steps(),
            mean_time_s: self.mean_steps() / POLICY_RATE_HZ,
            mean_peak_force: self.mean_peak_force(),
        }
    }

    pub fn write_traces(&self, dir: &Path, limit: usize) -> Result<()> {
        for (k, e) in self.episodes.iter().take(limit).enumerate() {
            write_trace(&dir.join(format!("trace-{k:03}.csv")), &e.trace, ACTION_DIM)?;
        }
        Ok(())
    }
}

/// Run `episodes` episodes; scenes come from a generator seeded with `seed`,
/// so repeated calls see the same scenes. Traces are kept for the first
/// `traces` episodes.
pub fn evaluate(actor: &dyn Actor, env: &EnvConfig, episodes: usize, seed: u64, traces: usize) -> Result<EvalOutcome> {
    let mut rng = Rng::seed_from_u64(seed);
    let mut env = InsertionEnv::new(env.clone())?;
    let mut out = EvalOutcome::default();
    for k in 0..episodes {
        let start = Instant::now();
        let mut obs = env.reset(&mut rng)?;
        let mut ep = EpisodeOutcome {
            status: Status::Running,
            steps: 0,
            episode_return: 0.0,
            peak_force: 0.0,
            wall: Duration::ZERO,
            trace: Vec::new(),
        };
        while ep.status == Status::Running {
            let action = actor.act(&obs)?;
            let r = env.step(&action)?;
            ep.steps += 1;
            ep.episode_return += r.reward;
            ep.peak_force = ep.peak_force.max(r.info.peak_force);
            ep.status = r.status;
            if k < traces {
                ep.trace.push(TraceRow {
                    t: ep.steps,
                    relative_position: r.info.relative_position,
                    wrench: r.info.wrench,
                    action,
                    reward: r.reward,
                    status: r.status.as_str().to_string(),
                });
            }
            obs = r.obs;
        }
        ep.wall = start.elapsed();
        out.episodes.push(ep);
    }
    Ok(out)
}
