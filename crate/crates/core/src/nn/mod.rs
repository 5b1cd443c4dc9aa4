//! Minimal reverse-mode network engine: dense layers, dilated causal
//! temporal convolutions, the squashed-Gaussian policy and the critics.
//!
//! Networks are generic over [`Real`]: `f32` for training, `f64` for
//! gradient verification. Every network doubles as its own gradient
//! container (same structure, values are partial derivatives).

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Debug;

use num_traits::Float;

use crate::error::{shape_err, Result};

mod adam;
pub mod checkpoint;
mod dense;
mod encoder;
pub mod gradcheck;
mod policy;
mod qnet;
mod tcn;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use dense::{backward_dense, forward_dense, Activation, Dense};
pub use encoder::{FtEncoder, FtEncoderCache, Mlp, MlpCache};
pub use gradcheck::{grad_check, GradCheckReport};
pub use policy::{
    squashed_log_prob, ObsBatch, PolicyCache, PolicyNet, PolicySample, LOG_STD_MAX, LOG_STD_MIN,
};
pub use qnet::{QEncoding, QHead, QNet};
pub use tcn::{Tcn, TcnBlock, TcnCache};
pub use tensor::Tensor;
pub(crate) use tensor::{axpy, dot};

/// Floating-point scalar used by the networks.
pub trait Real: Float + Default + Debug + Send + Sync + 'static {
    fn of(x: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

/// Uniform access to the trainable tensors of a network, in a fixed order.
pub trait Params<T: Real> {
    fn params(&self) -> Vec<(String, &Tensor<T>)>;
    fn params_mut(&mut self) -> Vec<&mut Tensor<T>>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    fn zero_(&mut self) {
        for t in self.params_mut() {
            t.fill(T::zero());
        }
    }

    /// All parameters as one `f64` vector.
    fn flatten(&self) -> Vec<f64> {
        self.params()
            .iter()
            .flat_map(|(_, t)| t.data().iter().map(|x| x.f64()))
            .collect()
    }

    /// Inverse of [`Params::flatten`].
    fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(shape_err(n, flat.len()));
        }
        let mut off = 0;
        for t in self.params_mut() {
            for x in t.data_mut() {
                *x = T::of(flat[off]);
                off += 1;
            }
        }
        Ok(())
    }

    fn is_finite(&self) -> bool {
        self.params().iter().all(|(_, t)| t.is_finite())
    }
}

/// Copy of `net` with every parameter set to zero.
pub fn zeros_like<T: Real, N: Params<T> + Clone>(net: &N) -> N {
    let mut z = net.clone();
    z.zero_();
    z
}

pub(crate) fn prefixed<'a, T>(
    prefix: &str,
    inner: Vec<(String, &'a T)>,
) -> impl Iterator<Item = (String, &'a T)> {
    let prefix = String::from(prefix);
    inner.into_iter().map(move |(n, t)| {
        let mut s = prefix.clone();
        s.push('.');
        s.push_str(&n);
        (s, t)
    })
}

/// Which encoder digests the force/torque window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum EncoderKind {
    #[default]
    Tcn,
    /// Two dense layers over the flattened window.
    Mlp,
}

/// Network sizes. The defaults are the production architecture; tests use
/// tiny instances.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct NetConfig {
    pub proprio_dim: usize,
    pub window_len: usize,
    pub window_channels: usize,
    pub action_dim: usize,
    /// Width of each encoder's output; the head sees twice this.
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub encoder: EncoderKind,
    pub tcn_channels: usize,
    pub tcn_kernel: usize,
    pub tcn_dilations: Vec<usize>,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            proprio_dim: 37,
            window_len: 12,
            window_channels: 6,
            action_dim: 24,
            feature_dim: 32,
            hidden_dim: 64,
            encoder: EncoderKind::Tcn,
            tcn_channels: 32,
            tcn_kernel: 3,
            tcn_dilations: alloc::vec![1, 2],
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.proprio_dim,
            self.window_len,
            self.window_channels,
            self.action_dim,
            self.feature_dim,
            self.hidden_dim,
            self.tcn_channels,
            self.tcn_kernel,
        ];
        if dims.contains(&0) || self.tcn_dilations.is_empty() || self.tcn_dilations.contains(&0) {
            return Err(crate::Error::Config(String::from(
                "network sizes must be positive",
            )));
        }
        Ok(())
    }
}

/// A bare tensor is a network with a single parameter.
impl<T: Real> Params<T> for Tensor<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        alloc::vec![(String::from("value"), self)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        alloc::vec![self]
    }
}
