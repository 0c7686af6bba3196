//! Dense row-major tensors and their little-endian blob format.
//!
//! Blob layout (all integers little-endian):
//!
//! | bytes       | content                                  |
//! |-------------|------------------------------------------|
//! | 4           | magic `GTNS`                             |
//! | 4 (u32)     | format version, currently 1              |
//! | 4 (u32)     | dtype code: 1 = f32, 2 = f64             |
//! | 4 (u32)     | rank `r`                                 |
//! | 8·r (u64)   | extents, outermost first                 |
//! | n·size      | elements in row-major order              |

use std::io::{Read, Write};

use crate::error::NnError;
use crate::scalar::{DType, Scalar};

pub const TENSOR_MAGIC: &[u8; 4] = b"GTNS";
pub const TENSOR_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, NnError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NnError::shape(
                "tensor",
                format!("{} elements for shape {:?}", n, shape),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, NnError> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(NnError::shape(
                "reshape",
                format!("{} elements", self.data.len()),
                format!("shape {:?}", shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Elementwise conversion to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max)
    }

    pub(crate) fn expect_shape(&self, op: &'static str, shape: &[usize]) -> Result<(), NnError> {
        if self.shape != shape {
            return Err(NnError::shape(
                op,
                format!("{:?}", shape),
                format!("{:?}", self.shape),
            ));
        }
        Ok(())
    }

    /// Appends the blob encoding to `out`.
    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(TENSOR_MAGIC);
        out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
        out.extend_from_slice(&T::DTYPE.code().to_le_bytes());
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.reserve(self.data.len() * T::DTYPE.size());
        for &v in &self.data {
            v.write_le(out);
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let mut buf = Vec::new();
        self.encode(&mut buf);
        w.write_all(&buf)
    }

    /// Reads one blob. Elements stored in another precision are converted.
    pub fn read_from<R: Read>(r: &mut R) -> std::io::Result<Self> {
        let bad = |msg: String| std::io::Error::new(std::io::ErrorKind::InvalidData, msg);
        let mut head = [0u8; 16];
        r.read_exact(&mut head)?;
        if &head[..4] != TENSOR_MAGIC {
            return Err(bad("bad tensor magic".into()));
        }
        let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
        if version != TENSOR_VERSION {
            return Err(bad(format!("unsupported tensor version {}", version)));
        }
        let code = u32::from_le_bytes(head[8..12].try_into().unwrap());
        let dtype = DType::from_code(code).ok_or_else(|| bad(format!("bad dtype {}", code)))?;
        let rank = u32::from_le_bytes(head[12..16].try_into().unwrap()) as usize;
        if rank > 16 {
            return Err(bad(format!("implausible rank {}", rank)));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * dtype.size()];
        r.read_exact(&mut raw)?;
        let data = match dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| T::of(f32::read_le(c) as f64))
                .collect(),
            DType::F64 => raw.chunks_exact(8).map(|c| T::of(f64::read_le(c))).collect(),
        };
        Ok(Tensor { shape, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn reshape_keeps_element_count() {
        let t = Tensor::<f32>::zeros(&[2, 3]);
        assert!(t.clone().reshape(&[3, 2]).is_ok());
        assert!(t.reshape(&[4, 2]).is_err());
    }

    #[test]
    fn blob_header_layout() {
        let t = Tensor::<f32>::from_vec(&[2], vec![1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        t.encode(&mut buf);
        assert_eq!(&buf[..4], b"GTNS");
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(buf[16..24].try_into().unwrap()), 2);
        assert_eq!(buf.len(), 24 + 8);
        assert_eq!(&buf[24..28], &1.0f32.to_le_bytes());
    }

    #[test]
    fn truncated_blob_is_an_error() {
        let t = Tensor::<f64>::zeros(&[4]);
        let mut buf = Vec::new();
        t.encode(&mut buf);
        buf.truncate(buf.len() - 3);
        assert!(Tensor::<f64>::read_from(&mut buf.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn blob_round_trip_is_bit_exact(
            dims in proptest::collection::vec(1usize..5, 1..4),
            seed in any::<u64>(),
        ) {
            let n: usize = dims.iter().product();
            let data: Vec<f64> = (0..n)
                .map(|i| f64::from_bits(seed.wrapping_mul(i as u64 + 1) >> 2))
                .collect();
            let t = Tensor::from_vec(&dims, data).unwrap();
            let mut buf = Vec::new();
            t.encode(&mut buf);
            let back = Tensor::<f64>::read_from(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            for (a, b) in back.data().iter().zip(t.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
