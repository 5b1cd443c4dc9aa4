use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{axpy, dot, Params, Real, Tensor};
use crate::error::{shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

/// Fully connected layer `y = act(W x + b)` applied to each row of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `[out, in]`.
    pub weight: Tensor<T>,
    /// `[out]`.
    pub bias: Tensor<T>,
    pub activation: Activation,
}

impl<T: Real> Dense<T> {
    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weight: Tensor::zeros(&[output, input]),
            bias: Tensor::zeros(&[output]),
            activation,
        }
    }

    /// Uniform `±1/sqrt(fan_in)` initialization for weights and biases.
    pub fn init<R: Rng + ?Sized>(
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / num_traits::Float::sqrt(input as f64);
        let mut draw = |_| T::of(rng.random_range(-bound..bound));
        Self {
            weight: Tensor::from_fn(&[output, input], &mut draw),
            bias: Tensor::from_fn(&[output], &mut draw),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    /// `x: [n, in] -> [n, out]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (i_dim, o_dim) = (self.input_dim(), self.output_dim());
        x.expect_matrix(i_dim)?;
        let n = x.rows();
        let w = self.weight.data();
        let b = self.bias.data();
        let mut y = Tensor::zeros(&[n, o_dim]);
        for r in 0..n {
            let xr = x.row(r);
            let yr = y.row_mut(r);
            for o in 0..o_dim {
                let z = dot(&w[o * i_dim..(o + 1) * i_dim], xr) + b[o];
                yr[o] = match self.activation {
                    Activation::Identity => z,
                    Activation::Relu => z.max(T::zero()),
                };
            }
        }
        Ok(y)
    }

    /// Back-propagate `dy` through the layer given its input `x` and output `y`.
    ///
    /// Parameter gradients are accumulated into `grad` when given; the input
    /// gradient is returned when `need_dx`.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        y: &Tensor<T>,
        dy: &Tensor<T>,
        grad: Option<&mut Dense<T>>,
        need_dx: bool,
    ) -> Result<Option<Tensor<T>>> {
        let (i_dim, o_dim) = (self.input_dim(), self.output_dim());
        x.expect_matrix(i_dim)?;
        y.expect_matrix(o_dim)?;
        dy.expect_matrix(o_dim)?;
        let n = x.rows();
        if y.rows() != n || dy.rows() != n {
            return Err(shape_err(
                format_args!("{n} rows"),
                format_args!("{} / {}", y.rows(), dy.rows()),
            ));
        }
        if let Some(g) = &grad {
            if g.weight.shape() != self.weight.shape() {
                return Err(shape_err(
                    format_args!("{:?}", self.weight.shape()),
                    format_args!("{:?}", g.weight.shape()),
                ));
            }
        }
        let w = self.weight.data();
        let mut dx = need_dx.then(|| Tensor::zeros(&[n, i_dim]));
        let mut grad = grad;
        let mut dz = vec![T::zero(); o_dim];
        for r in 0..n {
            let (yr, dyr) = (y.row(r), dy.row(r));
            for o in 0..o_dim {
                dz[o] = match self.activation {
                    Activation::Identity => dyr[o],
                    Activation::Relu if yr[o] > T::zero() => dyr[o],
                    Activation::Relu => T::zero(),
                };
            }
            if let Some(dx) = dx.as_mut() {
                let dxr = dx.row_mut(r);
                for (o, &g) in dz.iter().enumerate() {
                    if g != T::zero() {
                        axpy(g, &w[o * i_dim..(o + 1) * i_dim], dxr);
                    }
                }
            }
            if let Some(g) = grad.as_deref_mut() {
                let xr = x.row(r);
                let gw = g.weight.data_mut();
                for (o, &d) in dz.iter().enumerate() {
                    if d != T::zero() {
                        axpy(d, xr, &mut gw[o * i_dim..(o + 1) * i_dim]);
                    }
                }
                for (gb, &d) in g.bias.data_mut().iter_mut().zip(&dz) {
                    *gb = *gb + d;
                }
            }
        }
        Ok(dx)
    }
}

impl<T: Real> Params<T> for Dense<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            (String::from("weight"), &self.weight),
            (String::from("bias"), &self.bias),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// `y = act(W x + b)` for a batch `x: [n, in]`.
pub fn forward_dense<T: Real>(layer: &Dense<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    layer.forward(x)
}

/// Gradients `(dx, dW, db)` of a dense layer for upstream gradient `dy`.
pub fn backward_dense<T: Real>(
    layer: &Dense<T>,
    x: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let y = layer.forward(x)?;
    let mut g = Dense::zeros(layer.input_dim(), layer.output_dim(), layer.activation);
    let dx = layer
        .backward(x, &y, dy, Some(&mut g), true)?
        .unwrap_or_else(|| Tensor::zeros(&[0]));
    Ok((dx, g.weight, g.bias))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use rand::SeedableRng;

    fn rng() -> crate::Rng {
        crate::Rng::seed_from_u64(7)
    }

    #[test]
    fn identity_layer_passes_nonnegative_input() {
        let mut l = Dense::<f64>::zeros(3, 3, Activation::Relu);
        for i in 0..3 {
            l.weight.data_mut()[i * 3 + i] = 1.0;
        }
        let x = Tensor::new(&[2, 3], vec![0.0, 1.0, 2.5, 3.0, 0.5, 0.0]).unwrap();
        assert_eq!(l.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_input_zero_bias() {
        let mut l = Dense::<f64>::init(4, 5, Activation::Identity, &mut rng());
        l.bias.fill(0.0);
        let y = l.forward(&Tensor::zeros(&[3, 4])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch() {
        let l = Dense::<f64>::zeros(4, 2, Activation::Relu);
        assert!(l.forward(&Tensor::zeros(&[3, 5])).is_err());
        let x = Tensor::zeros(&[3, 4]);
        assert!(backward_dense(&l, &x, &Tensor::zeros(&[3, 3])).is_err());
    }

    /// Scalar loss `sum(c * y)` with fixed random `c`; compared against
    /// central differences over every weight, bias and input.
    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng();
        for act in [Activation::Identity, Activation::Relu] {
            let layer = Dense::<f64>::init(5, 4, act, &mut r);
            let x = Tensor::from_fn(&[3, 5], |_| r.random_range(-1.0..1.0));
            let c = Tensor::from_fn(&[3, 4], |_| r.random_range(-1.0..1.0));
            let loss = |l: &Dense<f64>, x: &Tensor<f64>| -> f64 {
                l.forward(x)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(c.data())
                    .map(|(a, b)| a * b)
                    .sum()
            };
            let (dx, dw, db) = backward_dense(&layer, &x, &c).unwrap();

            let mut analytic = dw.data().to_vec();
            analytic.extend_from_slice(db.data());
            let rep = grad_check(
                |theta| {
                    let mut l = layer.clone();
                    l.load_flat(theta).unwrap();
                    loss(&l, &x)
                },
                &layer.flatten(),
                &analytic,
                1e-6,
            );
            assert!(rep.max_rel_error < 1e-6, "{act:?} params: {rep:?}");

            let rep = grad_check(
                |xs| loss(&layer, &Tensor::new(&[3, 5], xs.to_vec()).unwrap()),
                x.data(),
                dx.data(),
                1e-6,
            );
            assert!(rep.max_rel_error < 1e-6, "{act:?} inputs: {rep:?}");
        }
    }
}
