use crate::error::NnError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of [`relu_forward`] evaluated at `x`; the kink at 0 gets slope 0.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    grad_out.expect_shape("relu_backward", x.shape())?;
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

pub(crate) fn relu_in_place<T: Scalar>(x: &mut Tensor<T>) {
    for v in x.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks `grad` in place where the forward output `y` was clamped.
pub(crate) fn relu_backward_in_place<T: Scalar>(y: &Tensor<T>, grad: &mut Tensor<T>) {
    for (g, &v) in grad.data_mut().iter_mut().zip(y.data()) {
        if v <= T::zero() {
            *g = T::zero();
        }
    }
}
