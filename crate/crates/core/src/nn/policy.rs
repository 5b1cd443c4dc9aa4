//! Squashed-Gaussian policy over the proprioceptive vector and the
//! force/torque window.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{prefixed, FtEncoder, FtEncoderCache, Mlp, MlpCache, NetConfig, Params, Real, Tensor};
use crate::error::{shape_err, Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
const LN_2: f64 = core::f64::consts::LN_2;

/// A batch of observations.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsBatch<T> {
    /// `[n, proprio_dim]`.
    pub proprio: Tensor<T>,
    /// `[n, window_len, window_channels]`, oldest step first.
    pub window: Tensor<T>,
}

impl<T: Real> ObsBatch<T> {
    pub fn rows(&self) -> usize {
        self.proprio.rows()
    }

    /// Single observation from flat slices.
    pub fn single(proprio: &[f64], window: &[f64], cfg: &NetConfig) -> Result<Self> {
        let p = Tensor::new(
            &[1, proprio.len()],
            proprio.iter().map(|&x| T::of(x)).collect(),
        )?;
        p.expect_matrix(cfg.proprio_dim)?;
        let w = Tensor::new(
            &[1, cfg.window_len, cfg.window_channels],
            window.iter().map(|&x| T::of(x)).collect(),
        )?;
        Ok(Self {
            proprio: p,
            window: w,
        })
    }

    pub fn check(&self, cfg: &NetConfig) -> Result<()> {
        self.proprio.expect_matrix(cfg.proprio_dim)?;
        let ws = self.window.shape();
        if ws != [self.rows(), cfg.window_len, cfg.window_channels] {
            return Err(shape_err(
                format_args!(
                    "[{}, {}, {}]",
                    self.rows(),
                    cfg.window_len,
                    cfg.window_channels
                ),
                format_args!("{ws:?}"),
            ));
        }
        Ok(())
    }
}

fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// `log(1 - tanh(u)^2)`, stable for large `|u|`.
fn log_tanh_jacobian<T: Real>(u: T) -> T {
    T::of(2.0) * (T::of(LN_2) - u - softplus(T::of(-2.0) * u))
}

/// Log-density of `tanh(u)` for one coordinate with pre-squash value `u`
/// drawn from `N(mean, exp(log_std)^2)`.
pub fn squashed_log_prob<T: Real>(mean: T, log_std: T, u: T) -> T {
    let eps = (u - mean) / log_std.exp();
    T::of(-0.5) * eps * eps - log_std - T::of(HALF_LN_2PI) - log_tanh_jacobian(u)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet<T> {
    pub proprio: Mlp<T>,
    pub ft: FtEncoder<T>,
    /// `[2 feature] -> hidden -> [2 action]` (means then log-stds).
    pub head: Mlp<T>,
    cfg: NetConfig,
}

#[derive(Debug, Clone)]
pub struct PolicyCache<T> {
    proprio: MlpCache<T>,
    ft: FtEncoderCache<T>,
    joint: Tensor<T>,
    head: MlpCache<T>,
    /// `[n, action]`.
    pub mean: Tensor<T>,
    /// `[n, action]`, clamped to `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub log_std: Tensor<T>,
    clamped: Vec<bool>,
}

impl<T> PolicyCache<T> {
    /// Concatenated encoder features `[n, 2 feature]`.
    pub fn joint_features(&self) -> &Tensor<T> {
        &self.joint
    }
}

/// Reparameterized draw `a = tanh(mean + std * noise)`.
#[derive(Debug, Clone)]
pub struct PolicySample<T> {
    pub action: Tensor<T>,
    pub log_prob: Vec<T>,
    pub pre_tanh: Tensor<T>,
    pub noise: Tensor<T>,
}

impl<T: Real> PolicyNet<T> {
    pub fn init<R: Rng + ?Sized>(cfg: &NetConfig, rng: &mut R) -> Self {
        let proprio = Mlp::init(
            &[cfg.proprio_dim, cfg.hidden_dim, cfg.feature_dim],
            false,
            rng,
        );
        let ft = FtEncoder::init(cfg, rng);
        let head = Mlp::init(
            &[2 * cfg.feature_dim, cfg.hidden_dim, 2 * cfg.action_dim],
            true,
            rng,
        );
        Self {
            proprio,
            ft,
            head,
            cfg: cfg.clone(),
        }
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn action_dim(&self) -> usize {
        self.cfg.action_dim
    }

    pub fn forward(&self, obs: &ObsBatch<T>) -> Result<PolicyCache<T>> {
        obs.check(&self.cfg)?;
        let proprio = self.proprio.forward(&obs.proprio)?;
        let ft = self.ft.forward(&obs.window)?;
        let joint = Tensor::concat_cols(proprio.output(), ft.features())?;
        let head = self.head.forward(&joint)?;
        let (mean, raw) = head.output().split_cols(self.cfg.action_dim);
        let (lo, hi) = (T::of(LOG_STD_MIN), T::of(LOG_STD_MAX));
        let clamped: Vec<bool> = raw.data().iter().map(|&v| v < lo || v > hi).collect();
        let mut log_std = raw;
        log_std
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = v.max(lo).min(hi));
        Ok(PolicyCache {
            proprio,
            ft,
            joint,
            head,
            mean,
            log_std,
            clamped,
        })
    }

    /// Accumulate parameter gradients given upstream gradients on the mean and
    /// (clamped) log-std.
    pub fn backward(
        &self,
        obs: &ObsBatch<T>,
        cache: &PolicyCache<T>,
        d_mean: &Tensor<T>,
        d_log_std: &Tensor<T>,
        grad: &mut PolicyNet<T>,
    ) -> Result<()> {
        let mut d_ls = d_log_std.clone();
        for (d, &c) in d_ls.data_mut().iter_mut().zip(&cache.clamped) {
            if c {
                *d = T::zero();
            }
        }
        let d_out = Tensor::concat_cols(d_mean, &d_ls)?;
        let d_joint = self
            .head
            .backward(
                &cache.joint,
                &cache.head,
                &d_out,
                Some(&mut grad.head),
                true,
            )?
            .expect("input gradient requested");
        let (d_p, d_f) = d_joint.split_cols(self.proprio.output_dim());
        self.proprio.backward(
            &obs.proprio,
            &cache.proprio,
            &d_p,
            Some(&mut grad.proprio),
            false,
        )?;
        self.ft.backward(&cache.ft, &d_f, &mut grad.ft)
    }

    /// Squashed sample for given standard-normal `noise: [n, action]`.
    pub fn sample_with_noise(
        &self,
        cache: &PolicyCache<T>,
        noise: &Tensor<T>,
    ) -> Result<PolicySample<T>> {
        if noise.shape() != cache.mean.shape() {
            return Err(shape_err(
                format_args!("{:?}", cache.mean.shape()),
                format_args!("{:?}", noise.shape()),
            ));
        }
        let a_dim = self.cfg.action_dim;
        let n = cache.mean.rows();
        let edge = T::one() - T::epsilon();
        let mut pre = Tensor::zeros(&[n, a_dim]);
        let mut action = Tensor::zeros(&[n, a_dim]);
        let mut log_prob = vec![T::zero(); n];
        for r in 0..n {
            let (m, ls, e) = (cache.mean.row(r), cache.log_std.row(r), noise.row(r));
            let mut lp = T::zero();
            for j in 0..a_dim {
                let u = m[j] + ls[j].exp() * e[j];
                pre.row_mut(r)[j] = u;
                action.row_mut(r)[j] = u.tanh().max(-edge).min(edge);
                lp = lp + T::of(-0.5) * e[j] * e[j]
                    - ls[j]
                    - T::of(HALF_LN_2PI)
                    - log_tanh_jacobian(u);
            }
            log_prob[r] = lp;
        }
        Ok(PolicySample {
            action,
            log_prob,
            pre_tanh: pre,
            noise: noise.clone(),
        })
    }

    /// Draw standard-normal noise of the action shape for `n` rows.
    pub fn noise<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Tensor<T> {
        Tensor::from_fn(&[n, self.cfg.action_dim], |_| {
            let z: f64 = StandardNormal.sample(rng);
            T::of(z)
        })
    }

    /// Chain rule through the reparameterized sample: gradients on the mean
    /// and log-std given gradients on the action and on the log-probability.
    pub fn sample_backward(
        &self,
        cache: &PolicyCache<T>,
        sample: &PolicySample<T>,
        d_action: &Tensor<T>,
        d_log_prob: &[T],
    ) -> (Tensor<T>, Tensor<T>) {
        let a_dim = self.cfg.action_dim;
        let n = cache.mean.rows();
        let mut d_mean = Tensor::zeros(&[n, a_dim]);
        let mut d_ls = Tensor::zeros(&[n, a_dim]);
        let two = T::of(2.0);
        for r in 0..n {
            let dl = d_log_prob[r];
            for j in 0..a_dim {
                let u = sample.pre_tanh.row(r)[j];
                let t = u.tanh();
                let std = cache.log_std.row(r)[j].exp();
                let e = sample.noise.row(r)[j];
                let du = d_action.row(r)[j] * (T::one() - t * t) + dl * two * t;
                d_mean.row_mut(r)[j] = du;
                d_ls.row_mut(r)[j] = du * std * e - dl;
            }
        }
        (d_mean, d_ls)
    }

    /// Action and log-probability for one observation; the squashed mean when
    /// `deterministic`.
    pub fn act<R: Rng + ?Sized>(
        &self,
        proprio: &[f64],
        window: &[f64],
        rng: &mut R,
        deterministic: bool,
    ) -> Result<(Vec<f64>, f64)> {
        let obs = ObsBatch::single(proprio, window, &self.cfg)?;
        let cache = self.forward(&obs)?;
        if !cache.mean.is_finite() || !cache.log_std.is_finite() {
            let bad = cache
                .mean
                .data()
                .iter()
                .chain(cache.log_std.data())
                .filter(|v| !v.is_finite())
                .count();
            return Err(Error::NonFinite(format!(
                "policy head output ({bad} of {} values)",
                2 * self.cfg.action_dim
            )));
        }
        let noise = if deterministic {
            Tensor::zeros(&[1, self.cfg.action_dim])
        } else {
            self.noise(1, rng)
        };
        let s = self.sample_with_noise(&cache, &noise)?;
        Ok((
            s.action.data().iter().map(|x| x.f64()).collect(),
            s.log_prob[0].f64(),
        ))
    }
}

impl<T: Real> Params<T> for PolicyNet<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v: Vec<_> = prefixed("proprio", self.proprio.params()).collect();
        v.extend(prefixed("ft", self.ft.params()));
        v.extend(prefixed("head", self.head.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.proprio.params_mut();
        v.extend(self.ft.params_mut());
        v.extend(self.head.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, zeros_like, EncoderKind};
    use rand::SeedableRng;

    fn tiny() -> NetConfig {
        NetConfig {
            proprio_dim: 5,
            window_len: 6,
            window_channels: 2,
            action_dim: 3,
            feature_dim: 4,
            hidden_dim: 6,
            encoder: EncoderKind::Tcn,
            tcn_channels: 4,
            tcn_kernel: 2,
            tcn_dilations: vec![1, 2],
        }
    }

    fn batch(cfg: &NetConfig, n: usize, r: &mut crate::Rng) -> ObsBatch<f64> {
        ObsBatch {
            proprio: Tensor::from_fn(&[n, cfg.proprio_dim], |_| r.random_range(-1.0..1.0)),
            window: Tensor::from_fn(&[n, cfg.window_len, cfg.window_channels], |_| {
                r.random_range(-1.0..1.0)
            }),
        }
    }

    #[test]
    fn default_architecture_widths() {
        let cfg = NetConfig::default();
        let mut r = crate::Rng::seed_from_u64(1);
        let p = PolicyNet::<f32>::init(&cfg, &mut r);
        assert_eq!(p.proprio.output_dim(), 32);
        assert_eq!(p.ft.output_dim(), 32);
        assert_eq!(p.head.input_dim(), 64);
        assert_eq!(p.head.output_dim(), 48);
        let obs = ObsBatch::<f32> {
            proprio: Tensor::zeros(&[2, 37]),
            window: Tensor::zeros(&[2, 12, 6]),
        };
        let c = p.forward(&obs).unwrap();
        assert_eq!(c.joint_features().shape(), &[2, 64]);
        assert_eq!(c.mean.shape(), &[2, 24]);
    }

    #[test]
    fn rejects_bad_observation_shape() {
        let mut r = crate::Rng::seed_from_u64(2);
        let p = PolicyNet::<f64>::init(&NetConfig::default(), &mut r);
        assert!(p.act(&[0.0; 36], &[0.0; 72], &mut r, false).is_err());
        assert!(p.act(&[0.0; 37], &[0.0; 71], &mut r, false).is_err());
    }

    #[test]
    fn seeded_sampling_is_repeatable() {
        let mut r = crate::Rng::seed_from_u64(3);
        let p = PolicyNet::<f32>::init(&NetConfig::default(), &mut r);
        let pr: Vec<f64> = (0..37).map(|i| (i as f64 * 0.1).sin()).collect();
        let w: Vec<f64> = (0..72).map(|i| (i as f64 * 0.3).cos()).collect();
        let a = p
            .act(&pr, &w, &mut crate::Rng::seed_from_u64(9), false)
            .unwrap();
        let b = p
            .act(&pr, &w, &mut crate::Rng::seed_from_u64(9), false)
            .unwrap();
        assert_eq!(a, b);
        assert!(a.0.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn degenerate_std_returns_squashed_mean() {
        let cfg = tiny();
        let mut r = crate::Rng::seed_from_u64(4);
        let mut p = PolicyNet::<f64>::init(&cfg, &mut r);
        let last = p.head.layers.last_mut().unwrap();
        let in_dim = last.input_dim();
        for j in cfg.action_dim..2 * cfg.action_dim {
            last.weight.data_mut()[j * in_dim..(j + 1) * in_dim].fill(0.0);
            last.bias.data_mut()[j] = -1e3;
        }
        let obs = batch(&cfg, 1, &mut r);
        let (pr, w) = (obs.proprio.data().to_vec(), obs.window.data().to_vec());
        let cache = p.forward(&obs).unwrap();
        assert!(cache.log_std.data().iter().all(|&v| v == LOG_STD_MIN));
        let (det, _) = p.act(&pr, &w, &mut r, true).unwrap();
        for _ in 0..3 {
            let (a, _) = p.act(&pr, &w, &mut r, false).unwrap();
            for (x, y) in a.iter().zip(&det) {
                assert!((x - y).abs() < 1e-7);
            }
        }
        for (x, m) in det.iter().zip(cache.mean.data()) {
            assert!((x - m.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn actions_stay_open_interval_for_huge_means() {
        let cfg = tiny();
        let mut r = crate::Rng::seed_from_u64(5);
        let mut p = PolicyNet::<f32>::init(&cfg, &mut r);
        p.head.layers.last_mut().unwrap().bias.data_mut()[0] = 1e4;
        let obs = ObsBatch::<f32> {
            proprio: Tensor::zeros(&[1, 5]),
            window: Tensor::zeros(&[1, 6, 2]),
        };
        let c = p.forward(&obs).unwrap();
        let s = p.sample_with_noise(&c, &p.noise(1, &mut r)).unwrap();
        assert!(s.action.data().iter().all(|a| a.abs() < 1.0));
        assert!(s.log_prob[0].is_finite());
    }

    /// Kolmogorov-Smirnov statistic of sampled first coordinates against the
    /// CDF of `tanh(N(mean, std^2))`.
    #[test]
    fn samples_follow_squashed_gaussian() {
        let cfg = tiny();
        let mut r = crate::Rng::seed_from_u64(8);
        let p = PolicyNet::<f64>::init(&cfg, &mut r);
        let obs = batch(&cfg, 1, &mut r);
        let (pr, w) = (obs.proprio.data().to_vec(), obs.window.data().to_vec());
        let c = p.forward(&obs).unwrap();
        let (mu, sigma) = (c.mean.data()[0], c.log_std.data()[0].exp());
        let n = 100_000;
        let mut xs: Vec<f64> = (0..n)
            .map(|_| p.act(&pr, &w, &mut r, false).unwrap().0[0])
            .collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cdf = |a: f64| {
            0.5 * (1.0 + libm::erf((a.atanh() - mu) / (sigma * core::f64::consts::SQRT_2)))
        };
        let mut d: f64 = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            let f = cdf(x);
            d = d
                .max((i + 1) as f64 / n as f64 - f)
                .max(f - i as f64 / n as f64);
        }
        let critical = 1.6276 / (n as f64).sqrt();
        assert!(d < critical, "KS statistic {d} >= {critical}");
    }

    /// Trapezoid integration of the squashed density over (-1, 1).
    #[test]
    fn density_integrates_to_one() {
        for (m, ls) in [(0.0, 0.0), (0.7, -1.0), (-1.5, 0.5), (2.0, -2.5)] {
            let n = 400_000;
            let mut total = 0.0;
            for k in 1..n {
                let a: f64 = -1.0 + 2.0 * k as f64 / n as f64;
                total += squashed_log_prob(m, ls, a.atanh()).exp();
            }
            total *= 2.0 / n as f64;
            assert!((total - 1.0).abs() < 1e-3, "mean {m} log_std {ls}: {total}");
        }
    }

    #[test]
    fn gradients_through_sample() {
        let cfg = tiny();
        let mut r = crate::Rng::seed_from_u64(6);
        let p = PolicyNet::<f64>::init(&cfg, &mut r);
        let obs = batch(&cfg, 3, &mut r);
        let noise = p.noise(3, &mut r);
        let ca = Tensor::from_fn(&[3, cfg.action_dim], |_| r.random_range(-1.0..1.0));
        let cl = [0.3, -0.7, 1.1];
        // loss = sum(ca * a) + sum(cl * log_prob)
        let loss = |net: &PolicyNet<f64>| -> f64 {
            let c = net.forward(&obs).unwrap();
            let s = net.sample_with_noise(&c, &noise).unwrap();
            let la: f64 = s
                .action
                .data()
                .iter()
                .zip(ca.data())
                .map(|(a, b)| a * b)
                .sum();
            la + s.log_prob.iter().zip(&cl).map(|(a, b)| a * b).sum::<f64>()
        };
        let c = p.forward(&obs).unwrap();
        let s = p.sample_with_noise(&c, &noise).unwrap();
        let (dm, dls) = p.sample_backward(&c, &s, &ca, &cl);
        let mut g = zeros_like(&p);
        p.backward(&obs, &c, &dm, &dls, &mut g).unwrap();
        let rep = grad_check(
            |th| {
                let mut n = p.clone();
                n.load_flat(th).unwrap();
                loss(&n)
            },
            &p.flatten(),
            &g.flatten(),
            1e-6,
        );
        assert!(rep.max_rel_error < 1e-5, "{rep:?}");
    }

    #[test]
    fn mlp_variant_gradients() {
        let cfg = NetConfig {
            encoder: EncoderKind::Mlp,
            ..tiny()
        };
        let mut r = crate::Rng::seed_from_u64(7);
        let p = PolicyNet::<f64>::init(&cfg, &mut r);
        let obs = batch(&cfg, 2, &mut r);
        let dm = Tensor::from_fn(&[2, 3], |_| r.random_range(-1.0..1.0));
        let dl = Tensor::from_fn(&[2, 3], |_| r.random_range(-1.0..1.0));
        let loss = |net: &PolicyNet<f64>| -> f64 {
            let c = net.forward(&obs).unwrap();
            let a: f64 = c
                .mean
                .data()
                .iter()
                .zip(dm.data())
                .map(|(x, y)| x * y)
                .sum();
            a + c
                .log_std
                .data()
                .iter()
                .zip(dl.data())
                .map(|(x, y)| x * y)
                .sum::<f64>()
        };
        let c = p.forward(&obs).unwrap();
        let mut g = zeros_like(&p);
        p.backward(&obs, &c, &dm, &dl, &mut g).unwrap();
        let rep = grad_check(
            |th| {
                let mut n = p.clone();
                n.load_flat(th).unwrap();
                loss(&n)
            },
            &p.flatten(),
            &g.flatten(),
            1e-6,
        );
        assert!(rep.max_rel_error < 1e-5, "{rep:?}");
    }
}
