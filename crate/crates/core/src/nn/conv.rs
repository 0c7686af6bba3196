//! 3x3 same-padded convolution via im2col + GEMM.
//!
//! Activations are channel-major: `[C, B, H, W]` for a batch, or `[C, H, W]`
//! for a single example. The channel-major layout lets a whole batch go
//! through one GEMM per layer: `out[C_out, B*H*W] = W[C_out, C_in*9] * cols`.

use crate::error::NnError;
use crate::scalar::{gemm, Op, Scalar};
use crate::tensor::Tensor;

use super::ParamCount;

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    /// `[C_out, C_in, 3, 3]`
    pub weight: Tensor<T>,
    /// `[C_out]`
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    /// `None` when the caller asked to skip the input gradient.
    pub x: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Logical extents of a channel-major activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub c: usize,
    pub b: usize,
    pub h: usize,
    pub w: usize,
}

impl Geometry {
    pub(crate) fn of<T: Scalar>(op: &'static str, x: &Tensor<T>) -> Result<Self, NnError> {
        match *x.shape() {
            [c, h, w] => Ok(Geometry { c, b: 1, h, w }),
            [c, b, h, w] => Ok(Geometry { c, b, h, w }),
            _ => Err(NnError::shape(op, "[C, H, W] or [C, B, H, W]", format!("{:?}", x.shape()))),
        }
    }

    pub(crate) fn columns(&self) -> usize {
        self.b * self.h * self.w
    }

    pub(crate) fn shape_like(&self, rank: usize, c: usize) -> Vec<usize> {
        if rank == 3 {
            vec![c, self.h, self.w]
        } else {
            vec![c, self.b, self.h, self.w]
        }
    }
}

impl<T: Scalar> ConvLayer<T> {
    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        ConvLayer {
            weight: Tensor::zeros(&[c_out, c_in, KERNEL, KERNEL]),
            bias: Tensor::zeros(&[c_out]),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    fn check(&self, op: &'static str, x: &Tensor<T>) -> Result<Geometry, NnError> {
        let g = Geometry::of(op, x)?;
        if g.c != self.in_channels() {
            return Err(NnError::shape(
                op,
                format!("{} input channels", self.in_channels()),
                format!("{:?}", x.shape()),
            ));
        }
        Ok(g)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let g = self.check("conv2d_forward", x)?;
        let n = g.columns();
        let k = g.c * TAPS;
        let c_out = self.out_channels();
        let mut cols = vec![T::zero(); k * n];
        im2col(x.data(), g, &mut cols);
        let mut out = vec![T::zero(); c_out * n];
        for (row, &b) in out.chunks_exact_mut(n).zip(self.bias.data()) {
            row.fill(b);
        }
        gemm(c_out, k, n, self.weight.data(), Op::N, &cols, Op::N, &mut out, true);
        Tensor::from_vec(&g.shape_like(x.rank(), c_out), out)
    }

    /// Gradients of the forward map given the upstream gradient.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
        need_input_grad: bool,
    ) -> Result<ConvGrads<T>, NnError> {
        let g = self.check("conv2d_backward", x)?;
        let c_out = self.out_channels();
        grad_out.expect_shape("conv2d_backward", &g.shape_like(x.rank(), c_out))?;
        let n = g.columns();
        let k = g.c * TAPS;
        let mut cols = vec![T::zero(); k * n];
        im2col(x.data(), g, &mut cols);

        let mut gw = vec![T::zero(); c_out * k];
        gemm(c_out, n, k, grad_out.data(), Op::N, &cols, Op::T, &mut gw, false);
        let gb: Vec<T> = grad_out
            .data()
            .chunks_exact(n)
            .map(|row| row.iter().copied().sum())
            .collect();

        let gx = if need_input_grad {
            // Reuse the column buffer for d(cols).
            gemm(k, c_out, n, self.weight.data(), Op::T, grad_out.data(), Op::N, &mut cols, false);
            let mut dx = vec![T::zero(); x.len()];
            col2im(&cols, g, &mut dx);
            Some(Tensor::from_vec(x.shape(), dx)?)
        } else {
            None
        };
        Ok(ConvGrads {
            x: gx,
            weight: Tensor::from_vec(self.weight.shape(), gw)?,
            bias: Tensor::from_vec(&[c_out], gb)?,
        })
    }
}

impl<T: Scalar> ParamCount for ConvLayer<T> {
    fn param_count(&self) -> usize {
        let (c_out, c_in) = (self.out_channels(), self.in_channels());
        c_out * c_in * TAPS + c_out
    }
}

/// Forward convolution as a free function (see [`ConvLayer::forward`]).
pub fn conv2d_forward<T: Scalar>(layer: &ConvLayer<T>, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    layer.forward(x)
}

/// Backward convolution as a free function (see [`ConvLayer::backward`]).
pub fn conv2d_backward<T: Scalar>(
    layer: &ConvLayer<T>,
    x: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>, NnError> {
    layer.backward(x, grad_out, true)
}

/// `cols[(c*9 + di*3 + dj), (b*H + i)*W + j] = x[c, b, i+di-1, j+dj-1]`, zero outside.
fn im2col<T: Scalar>(x: &[T], g: Geometry, cols: &mut [T]) {
    let Geometry { c, b, h, w } = g;
    let n = b * h * w;
    let zero = T::zero();
    for ch in 0..c {
        let plane = &x[ch * n..(ch + 1) * n];
        for di in 0..KERNEL {
            for dj in 0..KERNEL {
                let row = &mut cols[(ch * TAPS + di * KERNEL + dj) * n..][..n];
                for bb in 0..b {
                    for i in 0..h {
                        let dst = &mut row[(bb * h + i) * w..][..w];
                        let si = i as isize + di as isize - 1;
                        if si < 0 || si >= h as isize {
                            dst.fill(zero);
                            continue;
                        }
                        let src = &plane[(bb * h + si as usize) * w..][..w];
                        shift_copy(dst, src, dj);
                    }
                }
            }
        }
    }
}

/// `dst[j] = src[j + dj - 1]` with zeros past either edge.
#[inline]
fn shift_copy<T: Scalar>(dst: &mut [T], src: &[T], dj: usize) {
    let w = dst.len();
    match dj {
        0 => {
            dst[0] = T::zero();
            dst[1..].copy_from_slice(&src[..w - 1]);
        }
        1 => dst.copy_from_slice(src),
        _ => {
            dst[..w - 1].copy_from_slice(&src[1..]);
            dst[w - 1] = T::zero();
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds column gradients back to the input.
fn col2im<T: Scalar>(cols: &[T], g: Geometry, dx: &mut [T]) {
    let Geometry { c, b, h, w } = g;
    let n = b * h * w;
    for ch in 0..c {
        let plane = &mut dx[ch * n..(ch + 1) * n];
        for di in 0..KERNEL {
            for dj in 0..KERNEL {
                let row = &cols[(ch * TAPS + di * KERNEL + dj) * n..][..n];
                for bb in 0..b {
                    for i in 0..h {
                        let si = i as isize + di as isize - 1;
                        if si < 0 || si >= h as isize {
                            continue;
                        }
                        let src = &row[(bb * h + i) * w..][..w];
                        let dst = &mut plane[(bb * h + si as usize) * w..][..w];
                        match dj {
                            0 => {
                                for j in 1..w {
                                    dst[j - 1] += src[j];
                                }
                            }
                            1 => {
                                for j in 0..w {
                                    dst[j] += src[j];
                                }
                            }
                            _ => {
                                for j in 0..w - 1 {
                                    dst[j + 1] += src[j];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}
