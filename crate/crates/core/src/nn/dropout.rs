use rand::Rng;

use crate::error::NnError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::Mode;

pub const DEFAULT_DROPOUT: f64 = 0.5;

/// Inverted dropout: train mode zeroes each unit with probability `p` and
/// scales survivors by `1 / (1 - p)`; infer mode is the identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutLayer {
    pub p: f64,
}

impl Default for DropoutLayer {
    fn default() -> Self {
        DropoutLayer { p: DEFAULT_DROPOUT }
    }
}

impl DropoutLayer {
    /// Returns the output and the multiplicative mask (`None` when the map is
    /// the identity).
    pub fn forward<T: Scalar, R: Rng + ?Sized>(
        &self,
        x: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> (Tensor<T>, Option<Tensor<T>>) {
        if mode == Mode::Infer || self.p <= 0.0 {
            return (x.clone(), None);
        }
        let keep = T::of(1.0 / (1.0 - self.p));
        let mask = Tensor::from_fn(x.shape(), |_| {
            if rng.random::<f64>() < self.p {
                T::zero()
            } else {
                keep
            }
        });
        let y = Tensor::from_vec(
            x.shape(),
            x.data().iter().zip(mask.data()).map(|(&a, &m)| a * m).collect(),
        )
        .expect("mask matches input");
        (y, Some(mask))
    }

    pub fn backward<T: Scalar>(&self, mask: Option<&Tensor<T>>, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        match mask {
            None => Ok(grad_out.clone()),
            Some(m) => {
                grad_out.expect_shape("dropout_backward", m.shape())?;
                Tensor::from_vec(
                    m.shape(),
                    grad_out.data().iter().zip(m.data()).map(|(&g, &k)| g * k).collect(),
                )
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn infer_mode_is_identity() {
        let x = Tensor::from_fn(&[4, 8], |i| i as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (y, m) = DropoutLayer::default().forward(&x, Mode::Infer, &mut rng);
        assert_eq!(y, x);
        assert!(m.is_none());
    }

    #[test]
    fn train_mask_is_zero_or_rescaled() {
        let x = Tensor::full(&[1000], 1.0f64);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (y, _) = DropoutLayer::default().forward(&x, Mode::Train, &mut rng);
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = y.data().iter().filter(|&&v| v > 0.0).count();
        assert!((400..600).contains(&kept));
    }

    #[test]
    fn same_seed_same_mask() {
        let x = Tensor::full(&[64], 1.0f32);
        let a = DropoutLayer::default().forward(&x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(3)).0;
        let b = DropoutLayer::default().forward(&x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(3)).0;
        assert_eq!(a, b);
    }
}
