//! Finite-difference verification of every analytic gradient used in
//! training, on small randomly initialized 64-bit networks.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};

use super::agent::{Batch, SacAgent, SacConfig};
use crate::error::Result;
use crate::nn::{
    grad_check, zeros_like, Activation, Dense, EncoderKind, NetConfig, ObsBatch, Params, Tcn,
    Tensor,
};

/// Step used for the central differences.
pub const CHECK_EPS: f64 = 1e-6;

/// Largest relative error per gradient family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientReport {
    pub dense: f64,
    pub tcn: f64,
    /// Policy head through the squashed sample and its log-probability.
    pub policy: f64,
    pub critic: f64,
    pub actor: f64,
    pub temperature: f64,
}

impl GradientReport {
    pub fn max(&self) -> f64 {
        [
            self.dense,
            self.tcn,
            self.policy,
            self.critic,
            self.actor,
            self.temperature,
        ]
        .into_iter()
        .fold(0.0, worst)
    }

    pub fn entries(&self) -> [(&'static str, f64); 6] {
        [
            ("dense", self.dense),
            ("tcn", self.tcn),
            ("policy", self.policy),
            ("critic", self.critic),
            ("actor", self.actor),
            ("temperature", self.temperature),
        ]
    }
}

/// Maximum that keeps NaN.
fn worst(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

fn small_net(encoder: EncoderKind) -> NetConfig {
    NetConfig {
        proprio_dim: 5,
        window_len: 12,
        window_channels: 6,
        action_dim: 3,
        feature_dim: 4,
        hidden_dim: 6,
        encoder,
        tcn_channels: 4,
        tcn_kernel: 3,
        tcn_dilations: vec![1, 2],
    }
}

fn uniform(shape: &[usize], rng: &mut crate::Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn weighted_sum(t: &Tensor<f64>, c: &Tensor<f64>) -> f64 {
    t.data().iter().zip(c.data()).map(|(a, b)| a * b).sum()
}

fn check_net<N: Params<f64> + Clone>(net: &N, grad: &N, f: impl Fn(&N) -> f64) -> f64 {
    let theta = net.flatten();
    grad_check(
        |th| {
            let mut n = net.clone();
            n.load_flat(th).expect("same length");
            f(&n)
        },
        &theta,
        &grad.flatten(),
        CHECK_EPS,
    )
    .max_rel_error
}

fn random_batch(cfg: &NetConfig, n: usize, rng: &mut crate::Rng) -> Batch<f64> {
    let obs = |rng: &mut crate::Rng| ObsBatch {
        proprio: uniform(&[n, cfg.proprio_dim], rng),
        window: uniform(&[n, cfg.window_len, cfg.window_channels], rng),
    };
    Batch {
        obs: obs(rng),
        action: uniform(&[n, cfg.action_dim], rng),
        reward: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        next_obs: obs(rng),
        terminal: (0..n).map(|i| i % 3 == 0).collect(),
        weights: (0..n).map(|_| rng.random_range(0.2..1.0)).collect(),
    }
}

/// Compare analytic and central-difference gradients of a dense layer, the
/// TCN encoder, the sampled policy output, and the critic, actor and
/// temperature losses.
pub fn verify_gradients(seed: u64) -> Result<GradientReport> {
    let mut rng = crate::Rng::seed_from_u64(seed);

    let layer = Dense::<f64>::init(5, 4, Activation::Relu, &mut rng);
    let x = uniform(&[3, 5], &mut rng);
    let c = uniform(&[3, 4], &mut rng);
    let y = layer.forward(&x)?;
    let mut g = zeros_like(&layer);
    layer.backward(&x, &y, &c, Some(&mut g), false)?;
    let dense = check_net(&layer, &g, |l| weighted_sum(&l.forward(&x).unwrap(), &c));

    let tcn = Tcn::<f64>::init(12, 6, 4, 3, &[1, 2], 4, &mut rng);
    let w = uniform(&[2, 12, 6], &mut rng);
    let c = uniform(&[2, 4], &mut rng);
    let cache = tcn.forward(&w)?;
    let mut g = zeros_like(&tcn);
    tcn.backward(&cache, &c, &mut g)?;
    let tcn_err = check_net(&tcn, &g, |t| {
        weighted_sum(&t.forward(&w).unwrap().features, &c)
    });

    let cfg = small_net(EncoderKind::Tcn);
    let sac_cfg = SacConfig {
        init_alpha: 0.7,
        ..SacConfig::default()
    };
    let mut agent = SacAgent::<f64>::new(&cfg, &sac_cfg, &mut rng)?;
    // Targets that differ from the online critics.
    agent.q1_target = crate::nn::QNet::init(&cfg, &mut rng);
    agent.q2_target = crate::nn::QNet::init(&cfg, &mut rng);
    let batch = random_batch(&cfg, 4, &mut rng);
    let noise = agent.draw_noise(4, &mut rng);

    let policy = &agent.policy;
    let ca = uniform(&[4, cfg.action_dim], &mut rng);
    let cl: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let sampled = |p: &crate::nn::PolicyNet<f64>| {
        let cache = p.forward(&batch.obs).unwrap();
        let s = p.sample_with_noise(&cache, &noise.current).unwrap();
        weighted_sum(&s.action, &ca) + s.log_prob.iter().zip(&cl).map(|(a, b)| a * b).sum::<f64>()
    };
    let cache = policy.forward(&batch.obs)?;
    let s = policy.sample_with_noise(&cache, &noise.current)?;
    let (dm, dl) = policy.sample_backward(&cache, &s, &ca, &cl);
    let mut g = zeros_like(policy);
    policy.backward(&batch.obs, &cache, &dm, &dl, &mut g)?;
    let policy_err = check_net(policy, &g, sampled);

    let (_, grads) = agent.losses(&batch, &noise)?;
    let critic1 = check_net(&agent.q1, &grads.q1, |q| {
        let mut a = agent.clone();
        a.q1 = q.clone();
        a.losses(&batch, &noise).unwrap().0.critic_loss
    });
    let critic2 = check_net(&agent.q2, &grads.q2, |q| {
        let mut a = agent.clone();
        a.q2 = q.clone();
        a.losses(&batch, &noise).unwrap().0.critic_loss
    });
    let actor = check_net(&agent.policy, &grads.policy, |p| {
        let mut a = agent.clone();
        a.policy = p.clone();
        a.losses(&batch, &noise).unwrap().0.actor_loss
    });
    let temperature = check_net(&agent.log_alpha, &grads.log_alpha, |t| {
        let mut a = agent.clone();
        a.log_alpha = t.clone();
        a.losses(&batch, &noise).unwrap().0.alpha_loss
    });
    Ok(GradientReport {
        dense,
        tcn: tcn_err,
        policy: policy_err,
        critic: worst(critic1, critic2),
        actor,
        temperature,
    })
}
