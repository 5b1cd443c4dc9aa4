use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::{
    prefixed, Activation, Dense, EncoderKind, NetConfig, Params, Real, Tcn, TcnCache, Tensor,
};
use crate::error::Result;

/// Stack of dense layers; ReLU everywhere except optionally the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
}

/// Outputs of every layer; the input is not stored.
#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    pub outputs: Vec<Tensor<T>>,
}

impl<T> MlpCache<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.outputs.last().expect("non-empty network")
    }
}

impl<T: Real> Mlp<T> {
    /// `widths = [in, h1, .., out]`.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], linear_output: bool, rng: &mut R) -> Self {
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if linear_output && i + 1 == n {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                Dense::init(widths[i], widths[i + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<MlpCache<T>> {
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let y = l.forward(outputs.last().unwrap_or(x))?;
            outputs.push(y);
        }
        Ok(MlpCache { outputs })
    }

    /// Back-propagate `dy`; accumulates into `grad` when given and returns the
    /// input gradient when `need_dx`.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        cache: &MlpCache<T>,
        dy: &Tensor<T>,
        mut grad: Option<&mut Mlp<T>>,
        need_dx: bool,
    ) -> Result<Option<Tensor<T>>> {
        let mut d = dy.clone();
        for i in (0..self.layers.len()).rev() {
            let input = if i == 0 { x } else { &cache.outputs[i - 1] };
            let g = grad.as_deref_mut().map(|g| &mut g.layers[i]);
            let want = i > 0 || need_dx;
            match self.layers[i].backward(input, &cache.outputs[i], &d, g, want)? {
                Some(dx) => d = dx,
                None => return Ok(None),
            }
        }
        Ok(Some(d))
    }
}

impl<T: Real> Params<T> for Mlp<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            v.extend(prefixed(&format!("{i}"), l.params()));
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }
}

/// Encoder of the `[n, steps, channels]` force/torque window.
#[derive(Debug, Clone, PartialEq)]
pub enum FtEncoder<T> {
    Tcn(Tcn<T>),
    /// Dense layers over the flattened window.
    Mlp(Mlp<T>),
}

#[derive(Debug, Clone)]
pub enum FtEncoderCache<T> {
    Tcn(TcnCache<T>),
    Mlp { flat: Tensor<T>, cache: MlpCache<T> },
}

impl<T> FtEncoderCache<T> {
    pub fn features(&self) -> &Tensor<T> {
        match self {
            Self::Tcn(c) => &c.features,
            Self::Mlp { cache, .. } => cache.output(),
        }
    }
}

impl<T: Real> FtEncoder<T> {
    pub fn init<R: Rng + ?Sized>(cfg: &NetConfig, rng: &mut R) -> Self {
        match cfg.encoder {
            EncoderKind::Tcn => Self::Tcn(Tcn::init(
                cfg.window_len,
                cfg.window_channels,
                cfg.tcn_channels,
                cfg.tcn_kernel,
                &cfg.tcn_dilations,
                cfg.feature_dim,
                rng,
            )),
            EncoderKind::Mlp => Self::Mlp(Mlp::init(
                &[
                    cfg.window_len * cfg.window_channels,
                    cfg.hidden_dim,
                    cfg.feature_dim,
                ],
                false,
                rng,
            )),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Self::Tcn(t) => t.feature_dim(),
            Self::Mlp(m) => m.output_dim(),
        }
    }

    pub fn forward(&self, window: &Tensor<T>) -> Result<FtEncoderCache<T>> {
        match self {
            Self::Tcn(t) => t.forward(window).map(FtEncoderCache::Tcn),
            Self::Mlp(m) => {
                let n = window.rows();
                let flat = window.clone().reshape(&[n, window.cols()])?;
                let cache = m.forward(&flat)?;
                Ok(FtEncoderCache::Mlp { flat, cache })
            }
        }
    }

    pub fn backward(
        &self,
        cache: &FtEncoderCache<T>,
        d_features: &Tensor<T>,
        grad: &mut FtEncoder<T>,
    ) -> Result<()> {
        match (self, cache, grad) {
            (Self::Tcn(t), FtEncoderCache::Tcn(c), Self::Tcn(g)) => t.backward(c, d_features, g),
            (Self::Mlp(m), FtEncoderCache::Mlp { flat, cache }, Self::Mlp(g)) => m
                .backward(flat, cache, d_features, Some(g), false)
                .map(|_| ()),
            _ => Err(crate::error::shape_err(
                "matching encoder kinds",
                "mixed encoder kinds",
            )),
        }
    }
}

impl<T: Real> Params<T> for FtEncoder<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        match self {
            Self::Tcn(t) => prefixed("tcn", t.params()).collect(),
            Self::Mlp(m) => prefixed("mlp", m.params()).collect(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Self::Tcn(t) => t.params_mut(),
            Self::Mlp(m) => m.params_mut(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, zeros_like};
    use rand::SeedableRng;

    #[test]
    fn mlp_gradients() {
        let mut r = crate::Rng::seed_from_u64(11);
        let m = Mlp::<f64>::init(&[5, 7, 3], true, &mut r);
        let x = Tensor::from_fn(&[4, 5], |_| r.random_range(-1.0..1.0));
        let c = Tensor::from_fn(&[4, 3], |_| r.random_range(-1.0..1.0));
        let loss = |net: &Mlp<f64>, x: &Tensor<f64>| -> f64 {
            net.forward(x)
                .unwrap()
                .output()
                .data()
                .iter()
                .zip(c.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        let cache = m.forward(&x).unwrap();
        let mut g = zeros_like(&m);
        let dx = m
            .backward(&x, &cache, &c, Some(&mut g), true)
            .unwrap()
            .unwrap();
        let rep = grad_check(
            |th| {
                let mut n = m.clone();
                n.load_flat(th).unwrap();
                loss(&n, &x)
            },
            &m.flatten(),
            &g.flatten(),
            1e-6,
        );
        assert!(rep.max_rel_error < 1e-6, "{rep:?}");
        let rep = grad_check(
            |xs| loss(&m, &Tensor::new(&[4, 5], xs.to_vec()).unwrap()),
            x.data(),
            dx.data(),
            1e-6,
        );
        assert!(rep.max_rel_error < 1e-6, "{rep:?}");
    }

    #[test]
    fn mlp_window_encoder_shapes() {
        let mut r = crate::Rng::seed_from_u64(12);
        let cfg = NetConfig {
            encoder: EncoderKind::Mlp,
            ..NetConfig::default()
        };
        let e = FtEncoder::<f32>::init(&cfg, &mut r);
        let c = e.forward(&Tensor::zeros(&[3, 12, 6])).unwrap();
        assert_eq!(c.features().shape(), &[3, 32]);
    }
}
