//! Dilated causal temporal convolutions over a `[steps, channels]` window.
//!
//! Each block computes `relu(conv(x) + residual(x))` where the convolution at
//! step `t` reads only steps `t, t - d, .., t - (k - 1) d` (zero before the
//! window start) and the residual is the identity or a 1x1 projection when
//! channel counts differ. The last block's final step is projected to the
//! feature width.
//!
//! Training only needs the final step, so the forward pass evaluates each
//! block at the steps that feed it and nothing else.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{prefixed, Activation, Dense, Params, Real, Tensor};
use crate::error::{shape_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TcnBlock<T> {
    /// `[kernel * c_in] -> [c_out]`, taps ordered oldest first.
    pub conv: Dense<T>,
    pub residual: Option<Dense<T>>,
    pub kernel: usize,
    pub dilation: usize,
}

impl<T: Real> TcnBlock<T> {
    pub fn in_channels(&self) -> usize {
        self.conv.input_dim() / self.kernel
    }

    pub fn out_channels(&self) -> usize {
        self.conv.output_dim()
    }

    fn lag(&self, tap: usize) -> usize {
        (self.kernel - 1 - tap) * self.dilation
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tcn<T> {
    pub blocks: Vec<TcnBlock<T>>,
    /// Final-step projection to the feature width.
    pub output: Dense<T>,
    steps: usize,
    channels: usize,
    /// Output steps each block must evaluate to produce the final step.
    plan: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    times: Vec<usize>,
    cols: Tensor<T>,
    gathered: Tensor<T>,
    projected: Option<Tensor<T>>,
    conv_out: Tensor<T>,
    /// `[n * times.len(), c_out]` post-activation rows.
    out: Tensor<T>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct TcnCache<T> {
    blocks: Vec<BlockCache<T>>,
    /// Block outputs at full time resolution, `[n, steps, c_out]`; entries at
    /// steps a block did not evaluate are zero.
    pub block_outputs: Vec<Tensor<T>>,
    top_in: Tensor<T>,
    pub features: Tensor<T>,
}

impl<T: Real> Tcn<T> {
    pub fn init<R: Rng + ?Sized>(
        steps: usize,
        channels: usize,
        hidden: usize,
        kernel: usize,
        dilations: &[usize],
        feature: usize,
        rng: &mut R,
    ) -> Self {
        let mut blocks = Vec::with_capacity(dilations.len());
        let mut c_in = channels;
        for &d in dilations {
            let conv = Dense::init(kernel * c_in, hidden, Activation::Identity, rng);
            let residual =
                (c_in != hidden).then(|| Dense::init(c_in, hidden, Activation::Identity, rng));
            blocks.push(TcnBlock {
                conv,
                residual,
                kernel,
                dilation: d,
            });
            c_in = hidden;
        }
        let output = Dense::init(c_in, feature, Activation::Relu, rng);
        let plan = Self::pruned_plan(&blocks, steps);
        Self {
            blocks,
            output,
            steps,
            channels,
            plan,
        }
    }

    fn pruned_plan(blocks: &[TcnBlock<T>], steps: usize) -> Vec<Vec<usize>> {
        let mut plan = vec![Vec::new(); blocks.len()];
        let mut need = vec![false; steps];
        need[steps - 1] = true;
        for (b, blk) in blocks.iter().enumerate().rev() {
            plan[b] = (0..steps).filter(|&t| need[t]).collect();
            let mut below = vec![false; steps];
            for &t in &plan[b] {
                below[t] = true;
                for k in 0..blk.kernel {
                    if let Some(src) = t.checked_sub(blk.lag(k)) {
                        below[src] = true;
                    }
                }
            }
            need = below;
        }
        plan
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn feature_dim(&self) -> usize {
        self.output.output_dim()
    }

    /// Steps each block evaluates in [`Tcn::forward`].
    pub fn plan(&self) -> &[Vec<usize>] {
        &self.plan
    }

    fn check_window(&self, window: &Tensor<T>) -> Result<()> {
        let s = window.shape();
        if s.len() != 3 || s[1] != self.steps || s[2] != self.channels {
            return Err(shape_err(
                format_args!("[n, {}, {}]", self.steps, self.channels),
                format_args!("{s:?}"),
            ));
        }
        Ok(())
    }

    /// Features of the final step for a batch `window: [n, steps, channels]`.
    pub fn forward(&self, window: &Tensor<T>) -> Result<TcnCache<T>> {
        self.run(window, &self.plan)
    }

    /// Evaluates every block at every step; same features as [`Tcn::forward`].
    pub fn forward_full(&self, window: &Tensor<T>) -> Result<TcnCache<T>> {
        let all: Vec<usize> = (0..self.steps).collect();
        let plan = vec![all; self.blocks.len()];
        self.run(window, &plan)
    }

    fn run(&self, window: &Tensor<T>, plan: &[Vec<usize>]) -> Result<TcnCache<T>> {
        self.check_window(window)?;
        let n = window.rows();
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(self.blocks.len());
        for (blk, times) in self.blocks.iter().zip(plan) {
            let input = outputs.last().unwrap_or(window);
            let (cache, full) = block_forward(blk, input, self.steps, times)?;
            caches.push(cache);
            outputs.push(full);
        }
        let last = outputs.last().unwrap_or(window);
        let c = last.shape()[2];
        let mut top_in = Tensor::zeros(&[n, c]);
        for b in 0..n {
            top_in
                .row_mut(b)
                .copy_from_slice(&last.row(b)[(self.steps - 1) * c..]);
        }
        let features = self.output.forward(&top_in)?;
        Ok(TcnCache {
            blocks: caches,
            block_outputs: outputs,
            top_in,
            features,
        })
    }

    /// Accumulate parameter gradients for upstream `d_features: [n, feature]`.
    pub fn backward(
        &self,
        cache: &TcnCache<T>,
        d_features: &Tensor<T>,
        grad: &mut Tcn<T>,
    ) -> Result<()> {
        let n = cache.top_in.rows();
        let d_top = self.output.backward(
            &cache.top_in,
            &cache.features,
            d_features,
            Some(&mut grad.output),
            !self.blocks.is_empty(),
        )?;
        let Some(d_top) = d_top else { return Ok(()) };
        // Upstream gradient w.r.t. the last block's full-resolution output.
        let c = d_top.cols();
        let mut d_full = Tensor::zeros(&[n, self.steps, c]);
        for b in 0..n {
            d_full.row_mut(b)[(self.steps - 1) * c..].copy_from_slice(d_top.row(b));
        }
        for (i, (blk, bc)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            d_full = block_backward(blk, bc, &d_full, self.steps, &mut grad.blocks[i], i > 0)?;
        }
        Ok(())
    }
}

fn block_forward<T: Real>(
    blk: &TcnBlock<T>,
    input: &Tensor<T>,
    steps: usize,
    times: &[usize],
) -> Result<(BlockCache<T>, Tensor<T>)> {
    let n = input.rows();
    let (c_in, c_out, k) = (blk.in_channels(), blk.out_channels(), blk.kernel);
    if input.shape().get(2) != Some(&c_in) {
        return Err(shape_err(
            format_args!("{c_in} channels"),
            format_args!("{:?}", input.shape()),
        ));
    }
    let m = times.len();
    let mut cols = Tensor::zeros(&[n * m, k * c_in]);
    let mut gathered = Tensor::zeros(&[n * m, c_in]);
    for b in 0..n {
        let inp = input.row(b);
        for (j, &t) in times.iter().enumerate() {
            let row = b * m + j;
            let dst = cols.row_mut(row);
            for tap in 0..k {
                if let Some(src) = t.checked_sub(blk.lag(tap)) {
                    dst[tap * c_in..(tap + 1) * c_in]
                        .copy_from_slice(&inp[src * c_in..(src + 1) * c_in]);
                }
            }
            gathered
                .row_mut(row)
                .copy_from_slice(&inp[t * c_in..(t + 1) * c_in]);
        }
    }
    let conv_out = blk.conv.forward(&cols)?;
    let projected = blk
        .residual
        .as_ref()
        .map(|p| p.forward(&gathered))
        .transpose()?;
    let skip = projected.as_ref().unwrap_or(&gathered);
    let mut out = Tensor::zeros(&[n * m, c_out]);
    for ((o, &z), &r) in out
        .data_mut()
        .iter_mut()
        .zip(conv_out.data())
        .zip(skip.data())
    {
        *o = (z + r).max(T::zero());
    }
    let mut full = Tensor::zeros(&[n, steps, c_out]);
    for b in 0..n {
        let dst = full.row_mut(b);
        for (j, &t) in times.iter().enumerate() {
            dst[t * c_out..(t + 1) * c_out].copy_from_slice(out.row(b * m + j));
        }
    }
    Ok((
        BlockCache {
            times: times.to_vec(),
            cols,
            gathered,
            projected,
            conv_out,
            out,
        },
        full,
    ))
}

/// Returns the gradient w.r.t. the block input at full resolution (zeros
/// when `need_input` is false).
fn block_backward<T: Real>(
    blk: &TcnBlock<T>,
    bc: &BlockCache<T>,
    d_full: &Tensor<T>,
    steps: usize,
    grad: &mut TcnBlock<T>,
    need_input: bool,
) -> Result<Tensor<T>> {
    let n = d_full.rows();
    let (c_in, c_out, k) = (blk.in_channels(), blk.out_channels(), blk.kernel);
    let m = bc.times.len();
    let mut d_pre = Tensor::zeros(&[n * m, c_out]);
    for b in 0..n {
        let src = d_full.row(b);
        for (j, &t) in bc.times.iter().enumerate() {
            let row = b * m + j;
            let o = bc.out.row(row);
            let dst = d_pre.row_mut(row);
            for c in 0..c_out {
                dst[c] = if o[c] > T::zero() {
                    src[t * c_out + c]
                } else {
                    T::zero()
                };
            }
        }
    }
    let d_cols = blk.conv.backward(
        &bc.cols,
        &bc.conv_out,
        &d_pre,
        Some(&mut grad.conv),
        need_input,
    )?;
    let d_gathered = match (&blk.residual, &bc.projected) {
        (Some(p), Some(y)) => {
            p.backward(&bc.gathered, y, &d_pre, grad.residual.as_mut(), need_input)?
        }
        _ => need_input.then(|| d_pre.clone()),
    };
    let mut d_in = Tensor::zeros(&[n, steps, c_in]);
    if let (Some(d_cols), Some(d_gathered)) = (d_cols, d_gathered) {
        for b in 0..n {
            let dst = d_in.row_mut(b);
            for (j, &t) in bc.times.iter().enumerate() {
                let row = b * m + j;
                let dc = d_cols.row(row);
                for tap in 0..k {
                    if let Some(src) = t.checked_sub(blk.lag(tap)) {
                        for c in 0..c_in {
                            dst[src * c_in + c] = dst[src * c_in + c] + dc[tap * c_in + c];
                        }
                    }
                }
                let dg = d_gathered.row(row);
                for c in 0..c_in {
                    dst[t * c_in + c] = dst[t * c_in + c] + dg[c];
                }
            }
        }
    }
    Ok(d_in)
}

impl<T: Real> Params<T> for Tcn<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            v.extend(prefixed(&format!("blocks.{i}.conv"), b.conv.params()));
            if let Some(r) = &b.residual {
                v.extend(prefixed(&format!("blocks.{i}.residual"), r.params()));
            }
        }
        v.extend(prefixed("output", self.output.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = Vec::new();
        for b in &mut self.blocks {
            v.extend(b.conv.params_mut());
            if let Some(r) = &mut b.residual {
                v.extend(r.params_mut());
            }
        }
        v.extend(self.output.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, zeros_like};
    use rand::SeedableRng;

    fn tcn(rng: &mut crate::Rng) -> Tcn<f64> {
        Tcn::init(12, 6, 8, 3, &[1, 2], 5, rng)
    }

    fn window(rng: &mut crate::Rng, n: usize) -> Tensor<f64> {
        Tensor::from_fn(&[n, 12, 6], |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn plan_covers_receptive_field() {
        let mut r = crate::Rng::seed_from_u64(1);
        let t = tcn(&mut r);
        assert_eq!(t.plan()[1], vec![11]);
        assert_eq!(t.plan()[0], vec![7, 9, 11]);
    }

    #[test]
    fn pruned_matches_full() {
        let mut r = crate::Rng::seed_from_u64(2);
        let t = tcn(&mut r);
        let w = window(&mut r, 3);
        let a = t.forward(&w).unwrap();
        let b = t.forward_full(&w).unwrap();
        assert_eq!(a.features, b.features);
    }

    #[test]
    fn zero_window_zero_bias_gives_zero() {
        let mut r = crate::Rng::seed_from_u64(3);
        let mut t = tcn(&mut r);
        for blk in &mut t.blocks {
            blk.conv.bias.fill(0.0);
            if let Some(p) = &mut blk.residual {
                p.bias.fill(0.0);
            }
        }
        t.output.bias.fill(0.0);
        let f = t.forward(&Tensor::zeros(&[2, 12, 6])).unwrap().features;
        assert_eq!(f.shape(), &[2, 5]);
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn causal_in_every_block() {
        let mut r = crate::Rng::seed_from_u64(4);
        let t = tcn(&mut r);
        let w = window(&mut r, 1);
        for step in 0..12 {
            let mut w2 = w.clone();
            for c in 0..6 {
                w2.data_mut()[step * 6 + c] += 0.5;
            }
            let a = t.forward_full(&w).unwrap();
            let b = t.forward_full(&w2).unwrap();
            for (oa, ob) in a.block_outputs.iter().zip(&b.block_outputs) {
                let c = oa.shape()[2];
                assert_eq!(
                    oa.data()[..step * c],
                    ob.data()[..step * c],
                    "block output changed before step {step}"
                );
            }
        }
    }

    #[test]
    fn wrong_window_shape() {
        let mut r = crate::Rng::seed_from_u64(5);
        let t = tcn(&mut r);
        assert!(t.forward(&Tensor::zeros(&[1, 11, 6])).is_err());
        assert!(t.forward(&Tensor::zeros(&[1, 12, 5])).is_err());
        assert!(t.forward(&Tensor::zeros(&[72, 1])).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = crate::Rng::seed_from_u64(6);
        let t = tcn(&mut r);
        let w = window(&mut r, 2);
        let c = Tensor::from_fn(&[2, 5], |_| r.random_range(-1.0..1.0));
        let loss = |net: &Tcn<f64>| -> f64 {
            net.forward(&w)
                .unwrap()
                .features
                .data()
                .iter()
                .zip(c.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        let cache = t.forward(&w).unwrap();
        let mut g = zeros_like(&t);
        t.backward(&cache, &c, &mut g).unwrap();
        let rep = grad_check(
            |theta| {
                let mut n = t.clone();
                n.load_flat(theta).unwrap();
                loss(&n)
            },
            &t.flatten(),
            &g.flatten(),
            1e-6,
        );
        assert!(rep.max_rel_error < 1e-5, "{rep:?}");
    }
}
