//! 1x2 max pooling along the time (last) axis.

use crate::error::NnError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Flat input index chosen for every output element, plus the input shape.
#[derive(Clone, Debug)]
pub struct PoolIndex {
    pub input_shape: Vec<usize>,
    pub argmax: Vec<u32>,
}

/// Halves the last axis (floor for odd extents); ties pick the earlier sample.
pub fn maxpool_time_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolIndex), NnError> {
    let shape = x.shape();
    let Some(&w) = shape.last() else {
        return Err(NnError::shape("maxpool_time_forward", "rank >= 1", "scalar"));
    };
    if w < 2 {
        return Err(NnError::shape(
            "maxpool_time_forward",
            "time extent >= 2",
            format!("{:?}", shape),
        ));
    }
    let wo = w / 2;
    let rows = x.len() / w;
    let mut out = Vec::with_capacity(rows * wo);
    let mut argmax = Vec::with_capacity(rows * wo);
    for (r, row) in x.data().chunks_exact(w).enumerate() {
        for j in 0..wo {
            let (a, b) = (row[2 * j], row[2 * j + 1]);
            let pick = if b > a { 2 * j + 1 } else { 2 * j };
            out.push(row[pick]);
            argmax.push((r * w + pick) as u32);
        }
    }
    let mut out_shape = shape.to_vec();
    *out_shape.last_mut().unwrap() = wo;
    Ok((
        Tensor::from_vec(&out_shape, out)?,
        PoolIndex {
            input_shape: shape.to_vec(),
            argmax,
        },
    ))
}

pub fn maxpool_time_backward<T: Scalar>(index: &PoolIndex, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    if grad_out.len() != index.argmax.len() {
        return Err(NnError::shape(
            "maxpool_time_backward",
            format!("{} elements", index.argmax.len()),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let mut dx = Tensor::zeros(&index.input_shape);
    let d = dx.data_mut();
    for (&i, &g) in index.argmax.iter().zip(grad_out.data()) {
        d[i as usize] += g;
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn odd_extent_floors() {
        let x = Tensor::<f64>::zeros(&[2, 6, 149]);
        let (y, _) = maxpool_time_forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 6, 74]);
    }

    #[test]
    fn picks_max_and_breaks_ties_early() {
        let x = Tensor::from_vec(&[1, 5], vec![1.0f64, 3.0, 2.0, 2.0, 9.0]).unwrap();
        let (y, idx) = maxpool_time_forward(&x).unwrap();
        assert_eq!(y.data(), &[3.0, 2.0]);
        assert_eq!(idx.argmax, vec![1, 2]);
        let g = maxpool_time_backward(&idx, &Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_length_one_time_axis() {
        assert!(maxpool_time_forward(&Tensor::<f32>::zeros(&[3, 1])).is_err());
    }
}
