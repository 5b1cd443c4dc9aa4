use super::{zeros_like, Params, Real};
use crate::error::{shape_err, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates. The moment buffers share the
/// network's structure.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<N> {
    pub m: N,
    pub v: N,
    pub t: u64,
    pub cfg: AdamConfig,
}

impl<N> Adam<N> {
    pub fn new<T: Real>(net: &N, cfg: AdamConfig) -> Self
    where
        N: Params<T> + Clone,
    {
        Self {
            m: zeros_like(net),
            v: zeros_like(net),
            t: 0,
            cfg,
        }
    }

    /// One descent step along `grad`.
    pub fn step<T: Real>(&mut self, net: &mut N, grad: &N) -> Result<()>
    where
        N: Params<T>,
    {
        let gp = grad.params();
        let mut pp = net.params_mut();
        let mut mp = self.m.params_mut();
        let mut vp = self.v.params_mut();
        if gp.len() != pp.len() || mp.len() != pp.len() {
            return Err(shape_err(pp.len(), gp.len()));
        }
        for ((p, (_, g)), m) in pp.iter().zip(&gp).zip(mp.iter()) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(shape_err(
                    format_args!("{:?}", p.shape()),
                    format_args!("{:?}", g.shape()),
                ));
            }
        }
        self.t += 1;
        let c = &self.cfg;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = 1.0 - num_traits::Float::powi(c.beta1, self.t.min(i32::MAX as u64) as i32);
        let bc2 = 1.0 - num_traits::Float::powi(c.beta2, self.t.min(i32::MAX as u64) as i32);
        let step = T::of(c.lr / bc1);
        let inv_bc2 = T::of(1.0 / bc2);
        let eps = T::of(c.eps);
        for (((p, (_, g)), m), v) in pp.iter_mut().zip(&gp).zip(mp.iter_mut()).zip(vp.iter_mut()) {
            let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                p[i] = p[i] - step * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use alloc::vec;

    #[test]
    fn first_step_moves_by_lr() {
        let mut x = Tensor::<f64>::new(&[2], vec![1.0, -1.0]).unwrap();
        let g = Tensor::<f64>::new(&[2], vec![0.5, -3.0]).unwrap();
        let mut opt = Adam::new(&x, AdamConfig::default());
        opt.step(&mut x, &g).unwrap();
        assert!((x.data()[0] - (1.0 - 3e-4)).abs() < 1e-9);
        assert!((x.data()[1] - (-1.0 + 3e-4)).abs() < 1e-9);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut x = Tensor::<f64>::new(&[3], vec![2.0, -1.0, 0.5]).unwrap();
        let mut opt = Adam::new(
            &x,
            AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
        );
        for _ in 0..2000 {
            let g = Tensor::new(&[3], x.data().iter().map(|v| 2.0 * v).collect()).unwrap();
            opt.step(&mut x, &g).unwrap();
        }
        assert!(x.data().iter().all(|v| v.abs() < 1e-2), "{:?}", x.data());
    }

    #[test]
    fn shape_mismatch() {
        let mut x = Tensor::<f64>::zeros(&[2]);
        let mut opt = Adam::new(&x, AdamConfig::default());
        assert!(opt.step(&mut x, &Tensor::zeros(&[3])).is_err());
    }
}
