use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};

use super::*;
use crate::nn::{
    Dense, EncoderKind, FtEncoder, Mlp, NetConfig, ObsBatch, Params, PolicyNet, QNet, Tensor,
};
use crate::Error;

fn rng(seed: u64) -> crate::Rng {
    crate::Rng::seed_from_u64(seed)
}

/// Widths of at most four everywhere.
fn tiny() -> NetConfig {
    NetConfig {
        proprio_dim: 3,
        window_len: 2,
        window_channels: 2,
        action_dim: 2,
        feature_dim: 2,
        hidden_dim: 4,
        encoder: EncoderKind::Mlp,
        tcn_channels: 2,
        tcn_kernel: 2,
        tcn_dilations: vec![1],
    }
}

fn batch(cfg: &NetConfig, n: usize, r: &mut crate::Rng) -> Batch<f64> {
    let obs = |r: &mut crate::Rng| ObsBatch {
        proprio: Tensor::from_fn(&[n, cfg.proprio_dim], |_| r.random_range(-1.0..1.0)),
        window: Tensor::from_fn(&[n, cfg.window_len, cfg.window_channels], |_| {
            r.random_range(-1.0..1.0)
        }),
    };
    Batch {
        obs: obs(r),
        action: Tensor::from_fn(&[n, cfg.action_dim], |_| r.random_range(-0.9..0.9)),
        reward: (0..n).map(|_| r.random_range(-2.0..2.0)).collect(),
        next_obs: obs(r),
        terminal: vec![false; n],
        weights: vec![1.0; n],
    }
}

fn agent(cfg: &SacConfig, seed: u64) -> SacAgent<f64> {
    SacAgent::new(&tiny(), cfg, &mut rng(seed)).unwrap()
}

// Independent forward passes written directly against the weight layout.

fn dense(l: &Dense<f64>, x: &[f64], relu: bool) -> Vec<f64> {
    let (i, o) = (l.input_dim(), l.output_dim());
    (0..o)
        .map(|r| {
            let mut z = l.bias.data()[r];
            for c in 0..i {
                z += l.weight.data()[r * i + c] * x[c];
            }
            if relu {
                z.max(0.0)
            } else {
                z
            }
        })
        .collect()
}

fn mlp(m: &Mlp<f64>, x: &[f64], linear_out: bool) -> Vec<f64> {
    let mut h = x.to_vec();
    let last = m.layers.len() - 1;
    for (k, l) in m.layers.iter().enumerate() {
        h = dense(l, &h, !(linear_out && k == last));
    }
    h
}

fn ft(f: &FtEncoder<f64>, w: &[f64]) -> Vec<f64> {
    match f {
        FtEncoder::Mlp(m) => mlp(m, w, false),
        FtEncoder::Tcn(_) => unreachable!("tiny nets use the dense encoder"),
    }
}

fn q_oracle(q: &QNet<f64>, p: &[f64], w: &[f64], a: &[f64]) -> f64 {
    let mut x = mlp(&q.proprio, p, false);
    x.extend(ft(&q.ft, w));
    x.extend_from_slice(a);
    mlp(&q.head, &x, true)[0]
}

/// (action, log-probability) for one observation and noise row.
fn policy_oracle(pi: &PolicyNet<f64>, p: &[f64], w: &[f64], e: &[f64]) -> (Vec<f64>, f64) {
    let mut x = mlp(&pi.proprio, p, false);
    x.extend(ft(&pi.ft, w));
    let out = mlp(&pi.head, &x, true);
    let a_dim = e.len();
    let mut action = Vec::new();
    let mut lp = 0.0;
    for j in 0..a_dim {
        let ls = out[a_dim + j].clamp(-20.0, 2.0);
        let u = out[j] + ls.exp() * e[j];
        let t = u.tanh();
        action.push(t);
        let gauss = -0.5 * e[j] * e[j] - ls - 0.5 * (2.0 * core::f64::consts::PI).ln();
        lp += gauss - (1.0 - t * t).ln();
    }
    (action, lp)
}

#[test]
fn targets_match_step_by_step_oracle() {
    let cfg = SacConfig {
        gamma: 0.97,
        init_alpha: 0.3,
        ..SacConfig::default()
    };
    let mut a = agent(&cfg, 1);
    let mut r = rng(2);
    a.q1_target = QNet::init(&tiny(), &mut r);
    a.q2_target = QNet::init(&tiny(), &mut r);
    let mut b = batch(&tiny(), 5, &mut r);
    b.terminal[2] = true;
    let noise = a.draw_noise(5, &mut r);
    let y = a.critic_targets(&b, &noise.next).unwrap();
    for i in 0..5 {
        let (p, w, e) = (
            b.next_obs.proprio.row(i),
            &b.next_obs.window.data()[i * 4..(i + 1) * 4],
            noise.next.row(i),
        );
        let (act, lp) = policy_oracle(&a.policy, p, w, e);
        let q = q_oracle(&a.q1_target, p, w, &act).min(q_oracle(&a.q2_target, p, w, &act));
        let want = if b.terminal[i] {
            b.reward[i]
        } else {
            b.reward[i] + 0.97 * (q - 0.3 * lp)
        };
        assert!((y[i] - want).abs() < 1e-10, "row {i}: {} vs {want}", y[i]);
    }
}

#[test]
fn myopic_target_is_reward() {
    let a = agent(
        &SacConfig {
            gamma: 0.0,
            ..SacConfig::default()
        },
        3,
    );
    let mut r = rng(4);
    let b = batch(&tiny(), 6, &mut r);
    let noise = a.draw_noise(6, &mut r);
    assert_eq!(a.critic_targets(&b, &noise.next).unwrap(), b.reward);
}

#[test]
fn terminal_masks_bootstrap_timeout_does_not() {
    let a = agent(&SacConfig::default(), 5);
    let mut r = rng(6);
    let mut b = batch(&tiny(), 2, &mut r);
    // Same transition twice: once ended by success/collision, once by the step limit.
    b.obs.proprio = Tensor::from_fn(&[2, 3], |k| b.obs.proprio.data()[k % 3]);
    b.next_obs = ObsBatch {
        proprio: Tensor::from_fn(&[2, 3], |k| b.next_obs.proprio.data()[k % 3]),
        window: Tensor::from_fn(&[2, 2, 2], |k| b.next_obs.window.data()[k % 4]),
    };
    b.reward = vec![1.5, 1.5];
    b.terminal = vec![true, false];
    let noise = UpdateNoise {
        next: Tensor::zeros(&[2, 2]),
        current: Tensor::zeros(&[2, 2]),
    };
    let y = a.critic_targets(&b, &noise.next).unwrap();
    assert_eq!(y[0], 1.5);
    assert!(y[1] != 1.5);
}

#[test]
fn polyak_examples() {
    let online = Tensor::<f64>::new(&[3], vec![1.0, 1.0, 1.0]).unwrap();
    let mut t = Tensor::new(&[3], vec![0.0; 3]).unwrap();
    polyak_update(&mut t, &online, 0.995).unwrap();
    assert!(t.data().iter().all(|&v| (v - 0.005).abs() < 1e-15));
    let before = t.clone();
    polyak_update(&mut t, &online, 1.0).unwrap();
    assert_eq!(t, before);
    polyak_update(&mut t, &online, 0.0).unwrap();
    assert_eq!(t, online);
    let wrong = Tensor::new(&[2], vec![0.0; 2]).unwrap();
    assert!(matches!(
        polyak_update(&mut t, &wrong, 0.5),
        Err(Error::Shape { .. })
    ));
    assert!(polyak_update(&mut t, &online, 1.5).is_err());
}

#[test]
fn non_finite_loss_leaves_agent_untouched() {
    let mut a = agent(&SacConfig::default(), 7);
    let mut r = rng(8);
    let mut b = batch(&tiny(), 4, &mut r);
    b.reward[1] = f64::NAN;
    let before = a.clone();
    let err = a.update(&b, &mut r).unwrap_err();
    assert!(
        matches!(err, Error::NonFinite(ref m) if m.contains("critic loss")),
        "{err}"
    );
    assert_eq!(a, before);
}

#[test]
fn shape_mismatch_is_rejected() {
    let mut a = agent(&SacConfig::default(), 9);
    let mut r = rng(10);
    let mut b = batch(&tiny(), 4, &mut r);
    b.weights.pop();
    assert!(matches!(a.update(&b, &mut r), Err(Error::Shape { .. })));
}

#[test]
fn updates_are_repeatable_and_keep_invariants() {
    let cfg = SacConfig {
        init_alpha: 0.5,
        ..SacConfig::default()
    };
    let run = || {
        let mut a = agent(&cfg, 11);
        let mut r = rng(12);
        let mut reports = Vec::new();
        for _ in 0..20 {
            let b = batch(&tiny(), 8, &mut r);
            reports.push(a.update(&b, &mut r).unwrap());
        }
        (a, reports)
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(ra, rb);
    assert_eq!(a, b);
    assert_eq!(a.updates, 20);
    assert!(a.alpha() > 0.0);
    assert!(ra.iter().all(|r| r.priorities.iter().all(|&p| p > 0.0)));
    // Targets trail the online critics.
    assert_ne!(a.q1_target, a.q1);
}

#[test]
fn critic_fits_fixed_rewards() {
    let cfg = SacConfig {
        gamma: 0.0,
        critic_lr: 3e-3,
        ..SacConfig::default()
    };
    let mut a = agent(&cfg, 13);
    let mut r = rng(14);
    let b = batch(&tiny(), 16, &mut r);
    let first = a.update(&b, &mut r).unwrap().critic_loss;
    let mut last = first;
    for _ in 0..400 {
        last = a.update(&b, &mut r).unwrap().critic_loss;
    }
    assert!(last < 0.1 * first, "{first} -> {last}");
}

#[test]
fn temperature_moves_toward_target_entropy() {
    // Far above the entropy a tiny policy can reach: alpha has to grow.
    let cfg = SacConfig {
        target_entropy: Some(50.0),
        alpha_lr: 1e-2,
        ..SacConfig::default()
    };
    let mut a = agent(&cfg, 15);
    let mut r = rng(16);
    let start = a.alpha();
    for _ in 0..20 {
        let b = batch(&tiny(), 8, &mut r);
        a.update(&b, &mut r).unwrap();
    }
    assert!(a.alpha() > start);
}

#[test]
fn sampled_batch_converts() {
    let shape = TransitionShape {
        proprio: 3,
        window: 4,
        action: 2,
    };
    let mut buf = ReplayBuffer::new(shape, 8, 0.6).unwrap();
    for k in 0..4 {
        let v = k as f64 * 0.25;
        buf.push(&Transition {
            proprio: vec![v; 3],
            window: vec![v; 4],
            action: vec![0.5, -0.5],
            reward: v,
            next_proprio: vec![v; 3],
            next_window: vec![v; 4],
            terminal: k == 3,
        })
        .unwrap();
    }
    let s = buf.sample(4, 0.4, &mut rng(17)).unwrap();
    let b = Batch::<f64>::from_sampled(&s, &tiny()).unwrap();
    assert_eq!(b.obs.window.shape(), &[4, 2, 2]);
    for i in 0..4 {
        assert_eq!(b.terminal[i], s.indices[i] == 3);
        assert_eq!(b.reward[i], s.indices[i] as f64 * 0.25);
    }
    let mut a = agent(&SacConfig::default(), 18);
    let rep = a.update(&b, &mut rng(19)).unwrap();
    buf.update_priorities(&s.indices, &rep.priorities).unwrap();
}

#[test]
fn config_validation() {
    assert!(SacConfig::default().validate().is_ok());
    assert!(SacConfig {
        gamma: 1.0,
        ..SacConfig::default()
    }
    .validate()
    .is_err());
    assert!(SacConfig {
        polyak: 1.0,
        ..SacConfig::default()
    }
    .validate()
    .is_err());
    assert!(SacConfig {
        batch_size: 0,
        ..SacConfig::default()
    }
    .validate()
    .is_err());
    assert!(SacConfig {
        per_beta_start: 1.5,
        ..SacConfig::default()
    }
    .validate()
    .is_err());
    assert_eq!(SacConfig::default().target_entropy_for(24), -24.0);
    let c = SacConfig::default();
    assert_eq!(c.beta_at(0.0), 0.4);
    assert_eq!(c.beta_at(1.0), 1.0);
    assert_eq!(c.beta_at(7.0), 1.0);
}

#[test]
fn gradients_match_finite_differences() {
    for seed in [0, 1] {
        let rep = verify_gradients(seed).unwrap();
        for (name, e) in rep.entries() {
            assert!(e < 1e-4, "seed {seed}: {name} gradient error {e}");
        }
    }
}

#[test]
fn mixed_precision_agents_share_layout() {
    let a = SacAgent::<f32>::new(&tiny(), &SacConfig::default(), &mut rng(20)).unwrap();
    let b = SacAgent::<f64>::new(&tiny(), &SacConfig::default(), &mut rng(20)).unwrap();
    assert_eq!(a.policy.num_params(), b.policy.num_params());
    let names: Vec<_> = a.q1.params().into_iter().map(|(n, _)| n).collect();
    let names64: Vec<_> = b.q1.params().into_iter().map(|(n, _)| n).collect();
    assert_eq!(names, names64);
}
