//! Rollout/learn loop with periodic deterministic evaluation, checkpointing
//! and exact resume.
//!
//! Every environment step of every worker counts toward `total_steps`. After
//! each round of worker steps the learner performs `updates_per_step` updates
//! per collected transition. Workers act with a snapshot of the policy that is
//! refreshed every `sync_every` steps; with one worker and `sync_every = 1`
//! this is plain sequential SAC.

use std::path::{Path, PathBuf};

use peginsert_core::env::{EpisodeState, InsertionEnv, Observation, StepResult, ACTION_DIM};
use peginsert_core::nn::checkpoint::{blocks_of, Block};
use peginsert_core::nn::{Params, PolicyNet};
use peginsert_core::sac::{Batch, ReplayBuffer, SacAgent, Transition, TransitionShape};
use peginsert_core::Rng;
use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self as ck, Sidecar};
use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::eval::{evaluate, MeanAction};
use crate::metrics::{CsvLog, EpisodeRow, EvalRow, EPISODE_HEADER, EPISODE_SCHEMA, EVAL_HEADER, EVAL_SCHEMA};

pub const EPISODES_FILE: &str = "episodes.csv";
pub const EVAL_FILE: &str = "eval.csv";

const AGENT_STREAM: u64 = 0;
const LEARNER_STREAM: u64 = 1;

fn stream(seed: u64, id: u64) -> Rng {
    let mut r = Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

struct Worker {
    env: InsertionEnv,
    obs: Observation,
    env_rng: Rng,
    act_rng: Rng,
    episode_return: f64,
    episode_len: usize,
    peak_force: f64,
}

#[derive(Serialize, Deserialize)]
struct WorkerState {
    episode: Option<EpisodeState>,
    episode_return: f64,
    episode_len: usize,
    peak_force: f64,
}

impl Worker {
    fn new(cfg: &ExperimentConfig, seed: u64, index: u64) -> Result<Self> {
        let mut env = InsertionEnv::new(cfg.env.clone())?;
        let mut env_rng = stream(seed, 10 + 2 * index);
        let obs = env.reset(&mut env_rng)?;
        Ok(Self {
            env,
            obs,
            env_rng,
            act_rng: stream(seed, 11 + 2 * index),
            episode_return: 0.0,
            episode_len: 0,
            peak_force: 0.0,
        })
    }

    fn act(&mut self, policy: &PolicyNet<f32>, random: bool) -> Result<Vec<f64>> {
        if random {
            Ok((0..ACTION_DIM).map(|_| self.act_rng.random_range(-1.0..=1.0)).collect())
        } else {
            Ok(policy.act(&self.obs.proprio, &self.obs.window, &mut self.act_rng, false)?.0)
        }
    }

    fn step(&mut self, policy: &PolicyNet<f32>, random: bool) -> Result<(Vec<f64>, StepResult)> {
        let action = self.act(policy, random)?;
        let r = self.env.step(&action)?;
        Ok((action, r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LastLoss {
    critic: f64,
    actor: f64,
    alpha: f64,
    entropy: f64,
}

/// Outcome of a finished (or stopped) training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub out: PathBuf,
    pub steps: u64,
    pub evals: Vec<EvalRow>,
}

impl TrainSummary {
    /// First evaluated step whose success rate reached `threshold`.
    pub fn steps_to(&self, threshold: f64) -> Option<u64> {
        steps_to(&self.evals, threshold)
    }

    pub fn final_success(&self) -> f64 {
        self.evals.last().map_or(0.0, |e| e.success_rate)
    }
}

pub fn steps_to(evals: &[EvalRow], threshold: f64) -> Option<u64> {
    evals.iter().find(|e| e.success_rate >= threshold).map(|e| e.step)
}

pub struct Trainer {
    cfg: ExperimentConfig,
    seed: u64,
    out: PathBuf,
    pub agent: SacAgent<f32>,
    snapshot: PolicyNet<f32>,
    replay: ReplayBuffer,
    workers: Vec<Worker>,
    learner_rng: Rng,
    step: u64,
    episodes: u64,
    last_loss: Option<LastLoss>,
    episode_log: CsvLog<EpisodeRow>,
    eval_log: CsvLog<EvalRow>,
    evals: Vec<EvalRow>,
    last_checkpoint: Option<PathBuf>,
    /// Print evaluation lines to stderr.
    pub verbose: bool,
}

fn replay_for(cfg: &ExperimentConfig) -> Result<ReplayBuffer> {
    let shape = TransitionShape {
        proprio: cfg.net.proprio_dim,
        window: cfg.net.window_len * cfg.net.window_channels,
        action: cfg.net.action_dim,
    };
    Ok(ReplayBuffer::new(shape, cfg.sac.capacity, cfg.sac.per_alpha)?)
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(HarnessError::io(p))
}

impl Trainer {
    /// Fresh run writing into `out`; the seed is `cfg.seed()`.
    pub fn new(cfg: ExperimentConfig, out: &Path) -> Result<Self> {
        let mut rng = stream(cfg.seed(), AGENT_STREAM);
        let agent = SacAgent::new(&cfg.net, &cfg.sac, &mut rng)?;
        Self::with_agent(cfg, out, agent)
    }

    /// Fresh run starting from existing networks and optimizer state (used for
    /// fine-tuning). The replay buffer starts empty.
    pub fn with_agent(mut cfg: ExperimentConfig, out: &Path, agent: SacAgent<f32>) -> Result<Self> {
        cfg.validate()?;
        if agent.net_config() != &cfg.net {
            return Err(HarnessError::Config("agent networks do not match net config".into()));
        }
        let seed = cfg.seed();
        cfg.seeds = vec![seed];
        create_dir(out)?;
        cfg.write(&out.join(ck::CONFIG_FILE))?;
        let workers =
            (0..cfg.train.workers as u64).map(|w| Worker::new(&cfg, seed, w)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            snapshot: agent.policy.clone(),
            agent,
            replay: replay_for(&cfg)?,
            workers,
            learner_rng: stream(seed, LEARNER_STREAM),
            step: 0,
            episodes: 0,
            last_loss: None,
            episode_log: CsvLog::create(&out.join(EPISODES_FILE), EPISODE_SCHEMA, EPISODE_HEADER)?,
            eval_log: CsvLog::create(&out.join(EVAL_FILE), EVAL_SCHEMA, EVAL_HEADER)?,
            evals: Vec::new(),
            last_checkpoint: None,
            out: out.to_path_buf(),
            verbose: false,
            seed,
            cfg,
        })
    }

    /// Continue from a checkpoint. Outputs go to `out`, or to the run
    /// directory the checkpoint belongs to. `total_steps` extends or shortens
    /// the run; everything else comes from the checkpoint's config.
    pub fn resume(checkpoint: &Path, out: Option<&Path>, total_steps: Option<u64>) -> Result<Self> {
        let dir = ck::resolve(checkpoint)?;
        let state = Sidecar::read(&dir.join(ck::STATE_FILE))?;
        let cfg_path = dir.join(ck::CONFIG_FILE);
        let mut cfg = crate::config::load_layered(Some(&cfg_path), crate::config::env_overrides([]))?;
        if let Some(n) = total_steps {
            cfg.train.total_steps = n;
        }
        let run_dir = match out {
            Some(o) => o.to_path_buf(),
            None => dir
                .parent()
                .and_then(Path::parent)
                .map(Path::to_path_buf)
                .ok_or_else(|| HarnessError::Config(format!("{} is not inside a run", dir.display())))?,
        };
        let seed: u64 = state.parse("seed")?;
        let agent = load_agent_from(&dir, &cfg)?;
        let mut snapshot = agent.policy.clone();
        ck::load_net(&ck::read_model(&dir.join(ck::MODEL_FILE))?, "snapshot", &mut snapshot)?;

        let replay_path = dir.join(ck::REPLAY_FILE);
        if !replay_path.exists() {
            return Err(HarnessError::Config(format!(
                "{} keeps no replay buffer; resume from the run's latest checkpoint",
                dir.display()
            )));
        }
        let replay = ck::read_replay(&replay_path)?;

        let wpath = dir.join(ck::WORKERS_FILE);
        let text = std::fs::read_to_string(&wpath).map_err(HarnessError::io(&wpath))?;
        let saved: Vec<WorkerState> =
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", wpath.display())))?;
        if saved.len() != cfg.train.workers {
            return Err(HarnessError::Config("worker count differs from the checkpoint".into()));
        }
        let mut workers = Vec::with_capacity(saved.len());
        for (w, s) in saved.into_iter().enumerate() {
            let mut env = InsertionEnv::new(cfg.env.clone())?;
            env.restore(s.episode);
            let obs = env
                .observation()
                .ok_or_else(|| HarnessError::Config(format!("worker {w} has no running episode")))?;
            workers.push(Worker {
                env,
                obs,
                env_rng: ck::rng_from_text(state.get(&format!("rng.worker.{w}.env"))?)?,
                act_rng: ck::rng_from_text(state.get(&format!("rng.worker.{w}.act"))?)?,
                episode_return: s.episode_return,
                episode_len: s.episode_len,
                peak_force: s.peak_force,
            });
        }

        create_dir(&run_dir)?;
        cfg.write(&run_dir.join(ck::CONFIG_FILE))?;
        let episode_rows: usize = state.parse("metrics.episode_rows")?;
        let eval_rows: usize = state.parse("metrics.eval_rows")?;
        let (episode_log, eval_log) = if run_dir.join(EPISODES_FILE).exists() {
            (
                CsvLog::resume(&run_dir.join(EPISODES_FILE), EPISODE_SCHEMA, EPISODE_HEADER, episode_rows)?,
                CsvLog::resume(&run_dir.join(EVAL_FILE), EVAL_SCHEMA, EVAL_HEADER, eval_rows)?,
            )
        } else {
            return Err(HarnessError::Config(format!("{} holds no metrics to continue", run_dir.display())));
        };
        let evals = crate::metrics::read_rows(&run_dir.join(EVAL_FILE), EVAL_SCHEMA)?;
        let last_loss = match state.parse_opt("loss.critic")? {
            None => None,
            Some(critic) => Some(LastLoss {
                critic,
                actor: state.parse("loss.actor")?,
                alpha: state.parse("loss.alpha")?,
                entropy: state.parse("loss.entropy")?,
            }),
        };
        Ok(Self {
            seed,
            out: run_dir,
            agent,
            snapshot,
            replay,
            workers,
            learner_rng: ck::rng_from_text(state.get("rng.learner")?)?,
            step: state.parse("step")?,
            episodes: state.parse("episodes")?,
            last_loss,
            episode_log,
            eval_log,
            evals,
            last_checkpoint: Some(dir),
            verbose: false,
            cfg,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    fn evaluate_now(&mut self) -> Result<EvalRow> {
        let e = &self.cfg.eval;
        let outcome = evaluate(
            &MeanAction(&self.agent.policy),
            &self.cfg.env,
            e.episodes,
            self.seed.wrapping_add(e.seed_offset),
            0,
        )?;
        let row = outcome.row(self.step);
        if self.verbose {
            eprintln!(
                "step {:>8}  success {:>5.2}  return {:>8.2}  steps {:>6.1}  alpha {:.4}",
                row.step,
                row.success_rate,
                row.mean_return,
                row.mean_steps,
                self.agent.alpha()
            );
        }
        self.eval_log.append(&row)?;
        self.evals.push(row.clone());
        Ok(row)
    }

    /// Collect one transition per worker (fewer near the end of the run).
    fn collect(&mut self, count: usize) -> Result<()> {
        let random = (self.step as usize) < self.cfg.sac.warmup;
        let policy = &self.snapshot;
        let results: Vec<Result<(Vec<f64>, StepResult)>> = if count == 1 {
            vec![self.workers[0].step(policy, random)]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = self.workers[..count]
                    .iter_mut()
                    .map(|w| s.spawn(move || w.step(policy, random)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("rollout worker panicked")).collect()
            })
        };
        for (w, res) in results.into_iter().enumerate() {
            let (action, r) = res?;
            self.step += 1;
            let worker = &mut self.workers[w];
            let t = Transition {
                proprio: worker.obs.proprio.clone(),
                window: worker.obs.window.clone(),
                action,
                reward: r.reward,
                next_proprio: r.obs.proprio.clone(),
                next_window: r.obs.window.clone(),
                terminal: r.status.is_terminal(),
            };
            self.replay.push(&t)?;
            worker.episode_return += r.reward;
            worker.episode_len += 1;
            worker.peak_force = worker.peak_force.max(r.info.peak_force);
            if r.status.is_done() {
                self.episodes += 1;
                let l = self.last_loss;
                let row = EpisodeRow {
                    step: self.step,
                    episode: self.episodes,
                    episode_return: worker.episode_return,
                    length: worker.episode_len,
                    success: (r.status == peginsert_core::env::Status::Success) as u8,
                    status: r.status.as_str().to_string(),
                    peak_force: worker.peak_force,
                    critic_loss: l.map(|l| l.critic),
                    actor_loss: l.map(|l| l.actor),
                    alpha_loss: l.map(|l| l.alpha),
                    alpha: self.agent.alpha() as f64,
                    entropy: l.map(|l| l.entropy),
                };
                self.episode_log.append(&row)?;
                worker.obs = worker.env.reset(&mut worker.env_rng)?;
                worker.episode_return = 0.0;
                worker.episode_len = 0;
                worker.peak_force = 0.0;
            } else {
                worker.obs = r.obs;
            }
        }
        Ok(())
    }

    fn learn(&mut self, transitions: usize) -> Result<()> {
        let sac = &self.cfg.sac;
        if (self.step as usize) < sac.warmup || self.replay.len() < sac.batch_size {
            return Ok(());
        }
        let progress = self.step as f64 / self.cfg.train.total_steps.max(1) as f64;
        let beta = sac.beta_at(progress);
        for _ in 0..sac.updates_per_step * transitions {
            let sampled = self.replay.sample(sac.batch_size, beta, &mut self.learner_rng)?;
            let batch = Batch::from_sampled(&sampled, &self.cfg.net)?;
            let report = self.agent.update(&batch, &mut self.learner_rng)?;
            self.replay.update_priorities(&sampled.indices, &report.priorities)?;
            self.last_loss = Some(LastLoss {
                critic: report.critic_loss,
                actor: report.actor_loss,
                alpha: report.alpha_loss,
                entropy: report.entropy,
            });
        }
        Ok(())
    }

    /// Run until `total_steps`, an early stop, or an error. A non-finite loss
    /// stops the run; the newest checkpoint on disk is the last good state.
    pub fn run(&mut self) -> Result<TrainSummary> {
        self.run_until(self.cfg.train.total_steps)
    }

    /// Like [`Trainer::run`] but pause after `limit` steps, as if interrupted.
    /// Schedules still follow the configured `total_steps`.
    pub fn run_until(&mut self, limit: u64) -> Result<TrainSummary> {
        let total = self.cfg.train.total_steps;
        let limit = limit.min(total);
        let every = self.cfg.train.eval_every;
        let sync = self.cfg.train.sync_every;
        if self.step == 0 && self.evals.is_empty() {
            if total > 0 {
                self.evaluate_now()?;
            }
            self.save_checkpoint()?;
        }
        while self.step < limit && !self.reached_stop() {
            let before = self.step;
            let count = (self.workers.len() as u64).min(limit - self.step) as usize;
            self.collect(count)?;
            self.learn(count)?;
            if self.step / sync != before / sync {
                self.snapshot = self.agent.policy.clone();
            }
            if self.step / every != before / every || self.step == total {
                self.evaluate_now()?;
                self.save_checkpoint()?;
            } else if self.step == limit {
                // Interrupted: keep the state but add no evaluation row.
                self.save_checkpoint()?;
            }
        }
        Ok(self.summary())
    }

    fn reached_stop(&self) -> bool {
        match (self.cfg.train.stop_at_success, self.evals.last()) {
            (Some(th), Some(e)) => e.success_rate >= th,
            _ => false,
        }
    }

    pub fn summary(&self) -> TrainSummary {
        TrainSummary { out: self.out.clone(), steps: self.step, evals: self.evals.clone() }
    }

    /// Write a checkpoint for the current step. Only the newest checkpoint
    /// keeps the replay buffer; older ones keep networks and state.
    pub fn save_checkpoint(&mut self) -> Result<PathBuf> {
        let dir = ck::step_dir(&self.out, self.step);
        create_dir(&dir)?;
        let mut blocks = agent_blocks(&self.agent);
        blocks.extend(blocks_of("snapshot", &self.snapshot));
        ck::write_model(&dir.join(ck::MODEL_FILE), &blocks)?;
        ck::write_replay(&dir.join(ck::REPLAY_FILE), &self.replay)?;
        let workers: Vec<WorkerState> = self
            .workers
            .iter()
            .map(|w| WorkerState {
                episode: w.env.state().cloned(),
                episode_return: w.episode_return,
                episode_len: w.episode_len,
                peak_force: w.peak_force,
            })
            .collect();
        let wpath = dir.join(ck::WORKERS_FILE);
        let json = serde_json::to_string(&workers).map_err(|e| HarnessError::Config(e.to_string()))?;
        std::fs::write(&wpath, json).map_err(HarnessError::io(&wpath))?;
        self.cfg.write(&dir.join(ck::CONFIG_FILE))?;

        let mut s = Sidecar::default();
        s.set("seed", self.seed);
        s.set("step", self.step);
        s.set("episodes", self.episodes);
        s.set("updates", self.agent.updates);
        s.set("alpha", self.agent.alpha() as f64);
        let progress = self.step as f64 / self.cfg.train.total_steps.max(1) as f64;
        s.set("per_beta", self.cfg.sac.beta_at(progress));
        s.set("opt.policy.t", self.agent.policy_opt.t);
        s.set("opt.q1.t", self.agent.q1_opt.t);
        s.set("opt.q2.t", self.agent.q2_opt.t);
        s.set("opt.log_alpha.t", self.agent.alpha_opt.t);
        s.set("metrics.episode_rows", self.episode_log.rows());
        s.set("metrics.eval_rows", self.eval_log.rows());
        let l = self.last_loss;
        s.set_opt("loss.critic", l.map(|l| l.critic));
        s.set_opt("loss.actor", l.map(|l| l.actor));
        s.set_opt("loss.alpha", l.map(|l| l.alpha));
        s.set_opt("loss.entropy", l.map(|l| l.entropy));
        s.set("rng.learner", ck::rng_to_text(&self.learner_rng));
        for (w, wk) in self.workers.iter().enumerate() {
            s.set(&format!("rng.worker.{w}.env"), ck::rng_to_text(&wk.env_rng));
            s.set(&format!("rng.worker.{w}.act"), ck::rng_to_text(&wk.act_rng));
        }
        s.write(&dir.join(ck::STATE_FILE))?;
        ck::mark_latest(&self.out, &dir)?;

        if let Some(prev) = self.last_checkpoint.replace(dir.clone()) {
            if prev != dir {
                let old = prev.join(ck::REPLAY_FILE);
                if old.exists() {
                    std::fs::remove_file(&old).map_err(HarnessError::io(&old))?;
                }
            }
        }
        Ok(dir)
    }
}

/// Networks, temperature and optimizer moments as named blocks.
pub fn agent_blocks(a: &SacAgent<f32>) -> Vec<Block> {
    let mut b = Vec::new();
    b.extend(blocks_of("policy", &a.policy));
    b.extend(blocks_of("q1", &a.q1));
    b.extend(blocks_of("q2", &a.q2));
    b.extend(blocks_of("q1_target", &a.q1_target));
    b.extend(blocks_of("q2_target", &a.q2_target));
    b.extend(blocks_of("log_alpha", &a.log_alpha));
    b.extend(blocks_of("opt.policy.m", &a.policy_opt.m));
    b.extend(blocks_of("opt.policy.v", &a.policy_opt.v));
    b.extend(blocks_of("opt.q1.m", &a.q1_opt.m));
    b.extend(blocks_of("opt.q1.v", &a.q1_opt.v));
    b.extend(blocks_of("opt.q2.m", &a.q2_opt.m));
    b.extend(blocks_of("opt.q2.v", &a.q2_opt.v));
    b.extend(blocks_of("opt.log_alpha.m", &a.alpha_opt.m));
    b.extend(blocks_of("opt.log_alpha.v", &a.alpha_opt.v));
    b
}

/// Inverse of [`agent_blocks`] (optimizer step counts live in the sidecar).
pub fn load_agent(blocks: &[Block], a: &mut SacAgent<f32>) -> Result<()> {
    ck::load_net(blocks, "policy", &mut a.policy)?;
    ck::load_net(blocks, "q1", &mut a.q1)?;
    ck::load_net(blocks, "q2", &mut a.q2)?;
    ck::load_net(blocks, "q1_target", &mut a.q1_target)?;
    ck::load_net(blocks, "q2_target", &mut a.q2_target)?;
    ck::load_net(blocks, "log_alpha", &mut a.log_alpha)?;
    ck::load_net(blocks, "opt.policy.m", &mut a.policy_opt.m)?;
    ck::load_net(blocks, "opt.policy.v", &mut a.policy_opt.v)?;
    ck::load_net(blocks, "opt.q1.m", &mut a.q1_opt.m)?;
    ck::load_net(blocks, "opt.q1.v", &mut a.q1_opt.v)?;
    ck::load_net(blocks, "opt.q2.m", &mut a.q2_opt.m)?;
    ck::load_net(blocks, "opt.q2.v", &mut a.q2_opt.v)?;
    ck::load_net(blocks, "opt.log_alpha.m", &mut a.alpha_opt.m)?;
    ck::load_net(blocks, "opt.log_alpha.v", &mut a.alpha_opt.v)?;
    Ok(())
}

/// Load the policy stored in a checkpoint together with the config it was
/// trained under.
pub fn load_policy(checkpoint: &Path) -> Result<(PolicyNet<f32>, ExperimentConfig)> {
    let dir = ck::resolve(checkpoint)?;
    let model = dir.join(ck::MODEL_FILE);
    let blocks = ck::read_model(&model)?;
    let cfg_path = dir.join(ck::CONFIG_FILE);
    let cfg = if cfg_path.exists() {
        crate::config::load_layered(Some(&cfg_path), crate::config::env_overrides([]))?
    } else {
        ExperimentConfig::default()
    };
    let mut rng = Rng::seed_from_u64(0);
    let mut policy = PolicyNet::init(&cfg.net, &mut rng);
    ck::load_net(&blocks, "policy", &mut policy)?;
    if !policy.is_finite() {
        return Err(HarnessError::Config(format!("{} holds non-finite weights", model.display())));
    }
    Ok((policy, cfg))
}

/// Load a whole agent (networks and optimizer moments) from a checkpoint.
pub fn load_agent_from(checkpoint: &Path, cfg: &ExperimentConfig) -> Result<SacAgent<f32>> {
    let dir = ck::resolve(checkpoint)?;
    let state = Sidecar::read(&dir.join(ck::STATE_FILE))?;
    let mut agent = SacAgent::new(&cfg.net, &cfg.sac, &mut Rng::seed_from_u64(0))?;
    load_agent(&ck::read_model(&dir.join(ck::MODEL_FILE))?, &mut agent)?;
    agent.updates = state.parse("updates")?;
    agent.policy_opt.t = state.parse("opt.policy.t")?;
    agent.q1_opt.t = state.parse("opt.q1.t")?;
    agent.q2_opt.t = state.parse("opt.q2.t")?;
    agent.alpha_opt.t = state.parse("opt.log_alpha.t")?;
    Ok(agent)
}
