//! Per-channel batch normalization over channel-major activations `[C, ...]`.

use crate::error::NnError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{Mode, ParamCount};

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormLayer<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: T,
    pub epsilon: T,
}

/// What the backward pass needs from a forward call.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    mode: Mode,
    /// Normalized input under the statistics the mode used.
    x_hat: Vec<T>,
    /// `1 / sqrt(var + eps)` per channel, batch or running depending on mode.
    inv_std: Vec<T>,
    shape: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct BnGrads<T> {
    pub x: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Scalar> BatchNormLayer<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormLayer {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum: T::of(DEFAULT_MOMENTUM),
            epsilon: T::of(DEFAULT_EPSILON),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn per_channel(&self, op: &'static str, x: &Tensor<T>) -> Result<usize, NnError> {
        if x.rank() < 2 || x.shape()[0] != self.channels() {
            return Err(NnError::shape(
                op,
                format!("[{}, ...]", self.channels()),
                format!("{:?}", x.shape()),
            ));
        }
        let n = x.len() / self.channels();
        if n == 0 {
            return Err(NnError::shape(op, "non-empty batch", format!("{:?}", x.shape())));
        }
        Ok(n)
    }

    /// Train mode normalizes with batch statistics and updates the running
    /// estimates (unbiased variance); infer mode applies the running affine map.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BnCache<T>), NnError> {
        match mode {
            Mode::Train => self.forward_train(x),
            Mode::Infer => self.forward_infer(x),
        }
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, BnCache<T>), NnError> {
        let n = self.per_channel("batchnorm_forward", x)?;
        let mut out = vec![T::zero(); x.len()];
        let mut inv_std = Vec::with_capacity(self.channels());
        let mut x_hat = vec![T::zero(); x.len()];
        let nf = T::of(n as f64);
        let mom = self.momentum;
        for (c, plane) in x.data().chunks_exact(n).enumerate() {
            let mean = plane.iter().copied().sum::<T>() / nf;
            let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let is = T::one() / (var + self.epsilon).sqrt();
            inv_std.push(is);
            let (g, b) = (self.gamma.data()[c], self.beta.data()[c]);
            let xh = &mut x_hat[c * n..(c + 1) * n];
            let o = &mut out[c * n..(c + 1) * n];
            for ((h, y), &v) in xh.iter_mut().zip(o.iter_mut()).zip(plane) {
                *h = (v - mean) * is;
                *y = g * *h + b;
            }
            let unbiased = if n > 1 { var * nf / T::of((n - 1) as f64) } else { var };
            let rm = &mut self.running_mean.data_mut()[c];
            *rm = (T::one() - mom) * *rm + mom * mean;
            let rv = &mut self.running_var.data_mut()[c];
            *rv = (T::one() - mom) * *rv + mom * unbiased;
        }
        Ok((
            Tensor::from_vec(x.shape(), out)?,
            BnCache {
                mode: Mode::Train,
                x_hat,
                inv_std,
                shape: x.shape().to_vec(),
            },
        ))
    }

    pub fn forward_infer(&self, x: &Tensor<T>) -> Result<(Tensor<T>, BnCache<T>), NnError> {
        let n = self.per_channel("batchnorm_forward", x)?;
        let mut out = vec![T::zero(); x.len()];
        let mut inv_std = Vec::with_capacity(self.channels());
        let mut x_hat = vec![T::zero(); x.len()];
        for (c, plane) in x.data().chunks_exact(n).enumerate() {
            let is = T::one() / (self.running_var.data()[c] + self.epsilon).sqrt();
            inv_std.push(is);
            let scale = self.gamma.data()[c] * is;
            let mean = self.running_mean.data()[c];
            let shift = self.beta.data()[c] - mean * scale;
            let xh = &mut x_hat[c * n..(c + 1) * n];
            for ((y, h), &v) in out[c * n..(c + 1) * n].iter_mut().zip(xh).zip(plane) {
                *y = v * scale + shift;
                *h = (v - mean) * is;
            }
        }
        Ok((
            Tensor::from_vec(x.shape(), out)?,
            BnCache {
                mode: Mode::Infer,
                x_hat,
                inv_std,
                shape: x.shape().to_vec(),
            },
        ))
    }

    pub fn backward(&self, cache: &BnCache<T>, grad_out: &Tensor<T>) -> Result<BnGrads<T>, NnError> {
        grad_out.expect_shape("batchnorm_backward", &cache.shape)?;
        let c_n = self.channels();
        let n = grad_out.len() / c_n;
        let nf = T::of(n as f64);
        let mut dx = vec![T::zero(); grad_out.len()];
        let mut dgamma = vec![T::zero(); c_n];
        let mut dbeta = vec![T::zero(); c_n];
        for (c, dy) in grad_out.data().chunks_exact(n).enumerate() {
            let g = self.gamma.data()[c];
            let is = cache.inv_std[c];
            let dxc = &mut dx[c * n..(c + 1) * n];
            let xh = &cache.x_hat[c * n..(c + 1) * n];
            let sum_dy: T = dy.iter().copied().sum();
            let sum_dy_xh: T = dy.iter().zip(xh).map(|(&a, &b)| a * b).sum();
            dgamma[c] = sum_dy_xh;
            dbeta[c] = sum_dy;
            match cache.mode {
                Mode::Train => {
                    let k = g * is / nf;
                    for ((o, &d), &h) in dxc.iter_mut().zip(dy).zip(xh) {
                        *o = k * (nf * d - sum_dy - h * sum_dy_xh);
                    }
                }
                Mode::Infer => {
                    for (o, &d) in dxc.iter_mut().zip(dy) {
                        *o = d * g * is;
                    }
                }
            }
        }
        Ok(BnGrads {
            x: Tensor::from_vec(&cache.shape, dx)?,
            gamma: Tensor::from_vec(&[c_n], dgamma)?,
            beta: Tensor::from_vec(&[c_n], dbeta)?,
        })
    }
}

impl<T: Scalar> ParamCount for BatchNormLayer<T> {
    /// Trainable scale and shift only; running statistics are buffers.
    fn param_count(&self) -> usize {
        2 * self.channels()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut bn = BatchNormLayer::<f64>::new(3);
        let x = Tensor::from_fn(&[3, 4, 2, 5], |i| ((i * 7919) % 101) as f64 * 0.3 + (i / 40) as f64);
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        for plane in y.data().chunks_exact(40) {
            let mean = plane.iter().sum::<f64>() / 40.0;
            let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 40.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-6, "var {}", var);
        }
    }

    #[test]
    fn running_stats_move_toward_batch_stats() {
        let mut bn = BatchNormLayer::<f64>::new(1);
        let x = Tensor::from_vec(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        bn.forward(&x, Mode::Train).unwrap();
        assert!((bn.running_mean.data()[0] - 0.25).abs() < 1e-12);
        // unbiased var = 5/3
        assert!((bn.running_var.data()[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn infer_mode_is_a_fixed_affine_map() {
        let mut bn = BatchNormLayer::<f64>::new(2);
        bn.running_mean = Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap();
        bn.running_var = Tensor::from_vec(&[2], vec![4.0, 0.25]).unwrap();
        bn.gamma = Tensor::from_vec(&[2], vec![2.0, 1.0]).unwrap();
        bn.beta = Tensor::from_vec(&[2], vec![0.5, 0.0]).unwrap();
        bn.epsilon = 0.0;
        let x = Tensor::from_vec(&[2, 2], vec![3.0, 5.0, 0.0, 1.0]).unwrap();
        let before = bn.clone();
        let (y, _) = bn.forward(&x, Mode::Infer).unwrap();
        assert_eq!(bn, before);
        assert_eq!(y.data(), &[2.5, 4.5, 2.0, 4.0]);
    }

    #[test]
    fn rejects_channel_mismatch() {
        let mut bn = BatchNormLayer::<f32>::new(4);
        assert!(bn.forward(&Tensor::zeros(&[3, 10]), Mode::Train).is_err());
    }
}
