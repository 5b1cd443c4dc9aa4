//! Critic: the policy's two encoders (own weights) with the action appended
//! to the joint features before a scalar head.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::{
    prefixed, FtEncoder, FtEncoderCache, Mlp, MlpCache, NetConfig, ObsBatch, Params, Real, Tensor,
};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct QNet<T> {
    pub proprio: Mlp<T>,
    pub ft: FtEncoder<T>,
    /// `[2 feature + action] -> hidden -> 1`.
    pub head: Mlp<T>,
    cfg: NetConfig,
}

/// Observation features; independent of the action, so one encoding serves
/// several action batches.
#[derive(Debug, Clone)]
pub struct QEncoding<T> {
    proprio: MlpCache<T>,
    ft: FtEncoderCache<T>,
    pub features: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct QHead<T> {
    input: Tensor<T>,
    cache: MlpCache<T>,
    pub q: Vec<T>,
}

impl<T: Real> QNet<T> {
    pub fn init<R: Rng + ?Sized>(cfg: &NetConfig, rng: &mut R) -> Self {
        let proprio = Mlp::init(
            &[cfg.proprio_dim, cfg.hidden_dim, cfg.feature_dim],
            false,
            rng,
        );
        let ft = FtEncoder::init(cfg, rng);
        let head = Mlp::init(
            &[2 * cfg.feature_dim + cfg.action_dim, cfg.hidden_dim, 1],
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

    pub fn encode(&self, obs: &ObsBatch<T>) -> Result<QEncoding<T>> {
        obs.check(&self.cfg)?;
        let proprio = self.proprio.forward(&obs.proprio)?;
        let ft = self.ft.forward(&obs.window)?;
        let features = Tensor::concat_cols(proprio.output(), ft.features())?;
        Ok(QEncoding {
            proprio,
            ft,
            features,
        })
    }

    pub fn head(&self, enc: &QEncoding<T>, action: &Tensor<T>) -> Result<QHead<T>> {
        action.expect_matrix(self.cfg.action_dim)?;
        let input = Tensor::concat_cols(&enc.features, action)?;
        let cache = self.head.forward(&input)?;
        let q = cache.output().data().to_vec();
        Ok(QHead { input, cache, q })
    }

    pub fn forward(&self, obs: &ObsBatch<T>, action: &Tensor<T>) -> Result<Vec<T>> {
        Ok(self.head(&self.encode(obs)?, action)?.q)
    }

    /// Gradients of `sum(dq * q)` w.r.t. the joint features and the action;
    /// head parameter gradients are accumulated when `grad` is given.
    pub fn head_backward(
        &self,
        head: &QHead<T>,
        dq: &[T],
        grad: Option<&mut QNet<T>>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let d_out = Tensor::new(&[dq.len(), 1], dq.to_vec())?;
        let d_in = self
            .head
            .backward(
                &head.input,
                &head.cache,
                &d_out,
                grad.map(|g| &mut g.head),
                true,
            )?
            .expect("input gradient requested");
        Ok(d_in.split_cols(2 * self.cfg.feature_dim))
    }

    pub fn encode_backward(
        &self,
        obs: &ObsBatch<T>,
        enc: &QEncoding<T>,
        d_features: &Tensor<T>,
        grad: &mut QNet<T>,
    ) -> Result<()> {
        let (d_p, d_f) = d_features.split_cols(self.proprio.output_dim());
        self.proprio.backward(
            &obs.proprio,
            &enc.proprio,
            &d_p,
            Some(&mut grad.proprio),
            false,
        )?;
        self.ft.backward(&enc.ft, &d_f, &mut grad.ft)
    }
}

impl<T: Real> Params<T> for QNet<T> {
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
