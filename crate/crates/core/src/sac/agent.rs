//! Twin-critic soft actor-critic update with automatic temperature.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use super::replay::SampledBatch;
use crate::error::{invalid, shape_err, Error, Result};
use crate::nn::{
    zeros_like, Adam, AdamConfig, NetConfig, ObsBatch, Params, PolicyNet, QNet, Real, Tensor,
};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SacConfig {
    /// Discount.
    pub gamma: f64,
    /// Target smoothing: `target <- polyak target + (1 - polyak) online`.
    pub polyak: f64,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    /// Defaults to minus the action dimension.
    pub target_entropy: Option<f64>,
    pub init_alpha: f64,
    /// Environment steps with uniform random actions before learning starts.
    pub warmup: usize,
    /// Gradient updates per environment step.
    pub updates_per_step: usize,
    pub capacity: usize,
    /// Priority exponent.
    pub per_alpha: f64,
    /// Importance-sampling exponent, annealed linearly over the run.
    pub per_beta_start: f64,
    pub per_beta_end: f64,
    /// Added to the TD magnitude to keep priorities positive.
    pub priority_eps: f64,
    pub seed: u64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            polyak: 0.995,
            batch_size: 256,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            target_entropy: None,
            init_alpha: 1.0,
            warmup: 1000,
            updates_per_step: 1,
            capacity: 1_000_000,
            per_alpha: 0.6,
            per_beta_start: 0.4,
            per_beta_end: 1.0,
            priority_eps: 1e-6,
            seed: 0,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must be in [0, 1), got {}", self.gamma));
        }
        if !(self.polyak > 0.0 && self.polyak < 1.0) {
            return bad(format!("polyak must be in (0, 1), got {}", self.polyak));
        }
        if self.batch_size == 0 || self.capacity < self.batch_size {
            return bad(format!(
                "need 0 < batch_size ({}) <= capacity ({})",
                self.batch_size, self.capacity
            ));
        }
        for (name, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("alpha_lr", self.alpha_lr),
            ("init_alpha", self.init_alpha),
            ("priority_eps", self.priority_eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.per_alpha >= 0.0 && self.per_alpha.is_finite()) {
            return bad(format!("per_alpha must be >= 0, got {}", self.per_alpha));
        }
        for v in [self.per_beta_start, self.per_beta_end] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("importance exponent must be in [0, 1], got {v}"));
            }
        }
        if self.target_entropy.is_some_and(|h| !h.is_finite()) {
            return bad("target_entropy must be finite".into());
        }
        Ok(())
    }

    pub fn target_entropy_for(&self, action_dim: usize) -> f64 {
        self.target_entropy.unwrap_or(-(action_dim as f64))
    }

    /// Importance exponent after `progress` (0..=1) of the run.
    pub fn beta_at(&self, progress: f64) -> f64 {
        let p = progress.clamp(0.0, 1.0);
        self.per_beta_start + (self.per_beta_end - self.per_beta_start) * p
    }
}

/// A minibatch in network precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub obs: ObsBatch<T>,
    pub action: Tensor<T>,
    pub reward: Vec<T>,
    pub next_obs: ObsBatch<T>,
    /// No bootstrapping past these transitions.
    pub terminal: Vec<bool>,
    /// Importance weights.
    pub weights: Vec<T>,
}

impl<T: Real> Batch<T> {
    pub fn from_sampled(s: &SampledBatch, cfg: &NetConfig) -> Result<Self> {
        let n = s.indices.len();
        let conv = |v: &[f32]| v.iter().map(|&x| T::of(x as f64)).collect::<Vec<T>>();
        let obs_of = |p: &[f32], w: &[f32]| -> Result<ObsBatch<T>> {
            Ok(ObsBatch {
                proprio: Tensor::new(&[n, cfg.proprio_dim], conv(p))?,
                window: Tensor::new(&[n, cfg.window_len, cfg.window_channels], conv(w))?,
            })
        };
        Ok(Self {
            obs: obs_of(&s.proprio, &s.window)?,
            action: Tensor::new(&[n, cfg.action_dim], conv(&s.action))?,
            reward: conv(&s.reward),
            next_obs: obs_of(&s.next_proprio, &s.next_window)?,
            terminal: s.terminal.clone(),
            weights: s.weights.iter().map(|&w| T::of(w)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reward.is_empty()
    }

    fn check(&self, cfg: &NetConfig) -> Result<()> {
        let n = self.len();
        self.obs.check(cfg)?;
        self.next_obs.check(cfg)?;
        self.action.expect_matrix(cfg.action_dim)?;
        for (what, len) in [
            ("observations", self.obs.rows()),
            ("next observations", self.next_obs.rows()),
            ("actions", self.action.rows()),
            ("terminal flags", self.terminal.len()),
            ("weights", self.weights.len()),
        ] {
            if len != n {
                return Err(shape_err(format_args!("{n} {what}"), len));
            }
        }
        if n == 0 {
            return Err(invalid("empty batch"));
        }
        Ok(())
    }
}

/// Standard-normal noise for the two policy samples in one update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateNoise<T> {
    /// For the next-state action in the critic target.
    pub next: Tensor<T>,
    /// For the current-state action in the actor and temperature losses.
    pub current: Tensor<T>,
}

/// Losses and statistics of one update.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha_loss: f64,
    /// Temperature used in this update (before its own step).
    pub alpha: f64,
    /// `-mean log pi(a|s)` of the current-state samples.
    pub entropy: f64,
    pub mean_q: f64,
    /// New replay priorities, one per batch row.
    pub priorities: Vec<f64>,
}

/// Gradients of the three losses, shaped like the networks they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct SacGrads<T> {
    pub policy: PolicyNet<T>,
    pub q1: QNet<T>,
    pub q2: QNet<T>,
    pub log_alpha: Tensor<T>,
}

impl<T: Real> SacGrads<T> {
    pub fn is_finite(&self) -> bool {
        self.policy.is_finite()
            && self.q1.is_finite()
            && self.q2.is_finite()
            && self.log_alpha.is_finite()
    }
}

/// `target <- rho target + (1 - rho) online`, element-wise.
pub fn polyak_update<T: Real, N: Params<T>>(target: &mut N, online: &N, rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(invalid(format!(
            "polyak coefficient must be in [0, 1], got {rho}"
        )));
    }
    let src = online.params();
    let mut dst = target.params_mut();
    if src.len() != dst.len() {
        return Err(shape_err(dst.len(), src.len()));
    }
    for (d, (_, s)) in dst.iter().zip(&src) {
        if d.shape() != s.shape() {
            return Err(shape_err(
                format_args!("{:?}", d.shape()),
                format_args!("{:?}", s.shape()),
            ));
        }
    }
    let (keep, mix) = (T::of(rho), T::of(1.0 - rho));
    for (d, (_, s)) in dst.iter_mut().zip(&src) {
        for (x, &y) in d.data_mut().iter_mut().zip(s.data()) {
            *x = keep * *x + mix * y;
        }
    }
    Ok(())
}

/// Policy, twin critics with targets, temperature, and their optimizers.
#[derive(Debug, Clone, PartialEq)]
pub struct SacAgent<T> {
    pub policy: PolicyNet<T>,
    pub q1: QNet<T>,
    pub q2: QNet<T>,
    pub q1_target: QNet<T>,
    pub q2_target: QNet<T>,
    /// Log of the temperature, shape `[1]`.
    pub log_alpha: Tensor<T>,
    pub policy_opt: Adam<PolicyNet<T>>,
    pub q1_opt: Adam<QNet<T>>,
    pub q2_opt: Adam<QNet<T>>,
    pub alpha_opt: Adam<Tensor<T>>,
    /// Completed gradient updates.
    pub updates: u64,
    cfg: SacConfig,
    net: NetConfig,
}

impl<T: Real> SacAgent<T> {
    pub fn new<R: Rng + ?Sized>(net: &NetConfig, cfg: &SacConfig, rng: &mut R) -> Result<Self> {
        net.validate()?;
        cfg.validate()?;
        let policy = PolicyNet::init(net, rng);
        let q1 = QNet::init(net, rng);
        let q2 = QNet::init(net, rng);
        let log_alpha = Tensor::new(&[1], alloc::vec![T::of(Float::ln(cfg.init_alpha))])?;
        let adam = |lr| AdamConfig {
            lr,
            ..AdamConfig::default()
        };
        Ok(Self {
            policy_opt: Adam::new(&policy, adam(cfg.actor_lr)),
            q1_opt: Adam::new(&q1, adam(cfg.critic_lr)),
            q2_opt: Adam::new(&q2, adam(cfg.critic_lr)),
            alpha_opt: Adam::new(&log_alpha, adam(cfg.alpha_lr)),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            policy,
            q1,
            q2,
            log_alpha,
            updates: 0,
            cfg: cfg.clone(),
            net: net.clone(),
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.cfg
    }

    pub fn net_config(&self) -> &NetConfig {
        &self.net
    }

    pub fn alpha(&self) -> T {
        self.log_alpha.data()[0].exp()
    }

    pub fn draw_noise<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> UpdateNoise<T> {
        let next = self.policy.noise(n, rng);
        let current = self.policy.noise(n, rng);
        UpdateNoise { next, current }
    }

    /// `y = r + gamma (1 - terminal) (min_k Q'_k(s', a') - alpha log pi(a'|s'))`
    /// with `a'` drawn from the current policy.
    pub fn critic_targets(&self, batch: &Batch<T>, next_noise: &Tensor<T>) -> Result<Vec<T>> {
        let cache = self.policy.forward(&batch.next_obs)?;
        let next = self.policy.sample_with_noise(&cache, next_noise)?;
        let t1 = self.q1_target.forward(&batch.next_obs, &next.action)?;
        let t2 = self.q2_target.forward(&batch.next_obs, &next.action)?;
        let alpha = self.alpha();
        let gamma = T::of(self.cfg.gamma);
        Ok((0..batch.len())
            .map(|i| {
                if batch.terminal[i] {
                    batch.reward[i]
                } else {
                    let soft = t1[i].min(t2[i]) - alpha * next.log_prob[i];
                    batch.reward[i] + gamma * soft
                }
            })
            .collect())
    }

    /// Losses and gradients at the current parameters. Nothing is modified;
    /// the actor and temperature losses use the critics as they are before
    /// this update.
    pub fn losses(
        &self,
        batch: &Batch<T>,
        noise: &UpdateNoise<T>,
    ) -> Result<(LossReport, SacGrads<T>)> {
        batch.check(&self.net)?;
        let n = batch.len();
        let inv_n = T::of(1.0 / n as f64);
        let y = self.critic_targets(batch, &noise.next)?;

        let mut g = SacGrads {
            policy: zeros_like(&self.policy),
            q1: zeros_like(&self.q1),
            q2: zeros_like(&self.q2),
            log_alpha: Tensor::zeros(&[1]),
        };

        // Critics.
        let enc1 = self.q1.encode(&batch.obs)?;
        let enc2 = self.q2.encode(&batch.obs)?;
        let h1 = self.q1.head(&enc1, &batch.action)?;
        let h2 = self.q2.head(&enc2, &batch.action)?;
        let half = T::of(0.5);
        let mut critic_loss = T::zero();
        let mut d1 = Vec::with_capacity(n);
        let mut d2 = Vec::with_capacity(n);
        let mut priorities = Vec::with_capacity(n);
        for i in 0..n {
            let (e1, e2) = (h1.q[i] - y[i], h2.q[i] - y[i]);
            let w = batch.weights[i];
            critic_loss = critic_loss + half * w * (e1 * e1 + e2 * e2) * inv_n;
            d1.push(w * e1 * inv_n);
            d2.push(w * e2 * inv_n);
            priorities.push(0.5 * (e1.abs().f64() + e2.abs().f64()) + self.cfg.priority_eps);
        }
        let (df1, _) = self.q1.head_backward(&h1, &d1, Some(&mut g.q1))?;
        self.q1
            .encode_backward(&batch.obs, &enc1, &df1, &mut g.q1)?;
        let (df2, _) = self.q2.head_backward(&h2, &d2, Some(&mut g.q2))?;
        self.q2
            .encode_backward(&batch.obs, &enc2, &df2, &mut g.q2)?;

        // Actor, through the reparameterized sample and the smaller critic.
        let alpha = self.alpha();
        let cache = self.policy.forward(&batch.obs)?;
        let sample = self.policy.sample_with_noise(&cache, &noise.current)?;
        let p1 = self.q1.head(&enc1, &sample.action)?;
        let p2 = self.q2.head(&enc2, &sample.action)?;
        let mut actor_loss = T::zero();
        let mut sel1 = alloc::vec![T::zero(); n];
        let mut sel2 = alloc::vec![T::zero(); n];
        let mut mean_q = 0.0;
        for i in 0..n {
            let q = p1.q[i].min(p2.q[i]);
            actor_loss = actor_loss + (alpha * sample.log_prob[i] - q) * inv_n;
            if p1.q[i] <= p2.q[i] {
                sel1[i] = -inv_n;
            } else {
                sel2[i] = -inv_n;
            }
            mean_q += q.f64() / n as f64;
        }
        let (_, da1) = self.q1.head_backward(&p1, &sel1, None)?;
        let (_, da2) = self.q2.head_backward(&p2, &sel2, None)?;
        let mut d_action = da1;
        for (a, &b) in d_action.data_mut().iter_mut().zip(da2.data()) {
            *a = *a + b;
        }
        let d_logp = alloc::vec![alpha * inv_n; n];
        let (d_mean, d_ls) = self
            .policy
            .sample_backward(&cache, &sample, &d_action, &d_logp);
        self.policy
            .backward(&batch.obs, &cache, &d_mean, &d_ls, &mut g.policy)?;

        // Temperature.
        let target_entropy = T::of(self.cfg.target_entropy_for(self.net.action_dim));
        let mean_logp = sample.log_prob.iter().fold(T::zero(), |s, &l| s + l) * inv_n;
        let log_alpha = self.log_alpha.data()[0];
        let alpha_loss = -log_alpha * (mean_logp + target_entropy);
        g.log_alpha.data_mut()[0] = -(mean_logp + target_entropy);

        let report = LossReport {
            critic_loss: critic_loss.f64(),
            actor_loss: actor_loss.f64(),
            alpha_loss: alpha_loss.f64(),
            alpha: alpha.f64(),
            entropy: -mean_logp.f64(),
            mean_q,
            priorities,
        };
        Ok((report, g))
    }

    /// One gradient step on both critics, the actor and the temperature,
    /// followed by the target update. On a non-finite loss or gradient
    /// nothing changes and an error describes which part failed.
    pub fn update_with_noise(
        &mut self,
        batch: &Batch<T>,
        noise: &UpdateNoise<T>,
    ) -> Result<LossReport> {
        let (report, g) = self.losses(batch, noise)?;
        let bad: Vec<&str> = [
            ("critic loss", report.critic_loss.is_finite()),
            ("actor loss", report.actor_loss.is_finite()),
            ("temperature loss", report.alpha_loss.is_finite()),
            ("gradients", g.is_finite()),
        ]
        .into_iter()
        .filter(|(_, ok)| !ok)
        .map(|(name, _)| name)
        .collect();
        if !bad.is_empty() {
            return Err(Error::NonFinite(format!(
                "{} at update {} (critic {}, actor {}, temperature {}, alpha {})",
                bad.join(", "),
                self.updates,
                report.critic_loss,
                report.actor_loss,
                report.alpha_loss,
                report.alpha
            )));
        }
        self.q1_opt.step(&mut self.q1, &g.q1)?;
        self.q2_opt.step(&mut self.q2, &g.q2)?;
        self.policy_opt.step(&mut self.policy, &g.policy)?;
        self.alpha_opt.step(&mut self.log_alpha, &g.log_alpha)?;
        polyak_update(&mut self.q1_target, &self.q1, self.cfg.polyak)?;
        polyak_update(&mut self.q2_target, &self.q2, self.cfg.polyak)?;
        self.updates += 1;
        Ok(report)
    }

    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch<T>, rng: &mut R) -> Result<LossReport> {
        let noise = self.draw_noise(batch.len(), rng);
        self.update_with_noise(batch, &noise)
    }
}
