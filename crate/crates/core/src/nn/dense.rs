use crate::error::NnError;
use crate::scalar::{gemm, Op, Scalar};
use crate::tensor::Tensor;

use super::ParamCount;

/// Fully connected layer over row-major batches `[B, N_in] -> [B, N_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T> {
    /// `[N_out, N_in]`
    pub weight: Tensor<T>,
    /// `[N_out]`
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct DenseGrads<T> {
    pub x: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        DenseLayer {
            weight: Tensor::zeros(&[n_out, n_in]),
            bias: Tensor::zeros(&[n_out]),
        }
    }

    pub fn n_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn n_out(&self) -> usize {
        self.weight.shape()[0]
    }

    fn batch(&self, op: &'static str, x: &Tensor<T>) -> Result<usize, NnError> {
        match *x.shape() {
            [b, n] if n == self.n_in() => Ok(b),
            _ => Err(NnError::shape(op, format!("[B, {}]", self.n_in()), format!("{:?}", x.shape()))),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let b = self.batch("dense_forward", x)?;
        let (n_in, n_out) = (self.n_in(), self.n_out());
        let mut out = Vec::with_capacity(b * n_out);
        for _ in 0..b {
            out.extend_from_slice(self.bias.data());
        }
        gemm(b, n_in, n_out, x.data(), Op::N, self.weight.data(), Op::T, &mut out, true);
        Tensor::from_vec(&[b, n_out], out)
    }

    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>, need_input_grad: bool) -> Result<DenseGrads<T>, NnError> {
        let b = self.batch("dense_backward", x)?;
        let (n_in, n_out) = (self.n_in(), self.n_out());
        grad_out.expect_shape("dense_backward", &[b, n_out])?;
        let mut gw = vec![T::zero(); n_out * n_in];
        gemm(n_out, b, n_in, grad_out.data(), Op::T, x.data(), Op::N, &mut gw, false);
        let mut gb = vec![T::zero(); n_out];
        for row in grad_out.data().chunks_exact(n_out) {
            for (acc, &g) in gb.iter_mut().zip(row) {
                *acc += g;
            }
        }
        let gx = if need_input_grad {
            let mut dx = vec![T::zero(); b * n_in];
            gemm(b, n_out, n_in, grad_out.data(), Op::N, self.weight.data(), Op::N, &mut dx, false);
            Some(Tensor::from_vec(&[b, n_in], dx)?)
        } else {
            None
        };
        Ok(DenseGrads {
            x: gx,
            weight: Tensor::from_vec(&[n_out, n_in], gw)?,
            bias: Tensor::from_vec(&[n_out], gb)?,
        })
    }
}

pub fn dense_forward<T: Scalar>(layer: &DenseLayer<T>, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    layer.forward(x)
}

pub fn dense_backward<T: Scalar>(layer: &DenseLayer<T>, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<DenseGrads<T>, NnError> {
    layer.backward(x, grad_out, true)
}

impl<T: Scalar> ParamCount for DenseLayer<T> {
    fn param_count(&self) -> usize {
        self.n_in() * self.n_out() + self.n_out()
    }
}
