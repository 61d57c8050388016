//! Dense row-major `f64` tensors.
//!
//! All numeric state in the crate lives in [`Tensor`] values: parameters,
//! activations, gradients and optimizer moments. Shapes are explicit and
//! validated at construction; the data buffer length always equals the
//! product of the dimensions.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::ShapeMismatch {
                context: "tensor construction (zero dimension)".into(),
                expected: vec![],
                got: shape,
            });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                context: format!("tensor construction (data length {})", data.len()),
                expected: vec![numel],
                got: shape,
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Size of the trailing dimension.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("tensor has at least one dimension")
    }

    /// Number of rows when the tensor is viewed as `[rows, last_dim]`.
    pub fn rows(&self) -> usize {
        self.numel() / self.last_dim()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.last_dim();
        &self.data[r * w..(r + 1) * w]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let w = self.last_dim();
        &mut self.data[r * w..(r + 1) * w]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks equally-shaped sample tensors along a new leading axis.
    pub fn stack(samples: &[&Tensor]) -> Result<Tensor> {
        let first = samples
            .first()
            .ok_or_else(|| Error::EmptyInput("Tensor::stack".into()))?;
        let mut shape = Vec::with_capacity(first.rank() + 1);
        shape.push(samples.len());
        shape.extend_from_slice(first.shape());
        let mut data = Vec::with_capacity(samples.len() * first.numel());
        for s in samples {
            if s.shape() != first.shape() {
                return Err(Error::ShapeMismatch {
                    context: "Tensor::stack".into(),
                    expected: first.shape().to_vec(),
                    got: s.shape().to_vec(),
                });
            }
            data.extend_from_slice(s.data());
        }
        Tensor::new(shape, data)
    }

    /// Extracts sample `i` along the leading axis, dropping that axis.
    pub fn unstack(&self, i: usize) -> Tensor {
        let sample_numel = self.numel() / self.shape[0];
        let shape = self.shape[1..].to_vec();
        let data = self.data[i * sample_numel..(i + 1) * sample_numel].to_vec();
        Tensor { shape, data }
    }
}

/// SHA-256 digest over the raw little-endian bytes of a sequence of tensors.
/// Used for frozen-parameter immutability checks and cache validity.
pub fn digest_tensors<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> [u8; 32] {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for t in tensors {
        h.update((t.numel() as u64).to_le_bytes());
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().into()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn stack_and_unstack_round_trip() {
        let a = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let b = Tensor::new(vec![3], vec![4.0, 5.0, 6.0]).unwrap();
        let s = Tensor::stack(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), &[2, 3]);
        assert_eq!(s.unstack(0), a);
        assert_eq!(s.unstack(1), b);
    }

    #[test]
    fn digest_is_order_and_value_sensitive() {
        let a = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2], vec![2.0, 1.0]).unwrap();
        assert_ne!(digest_tensors([&a]), digest_tensors([&b]));
        assert_eq!(digest_tensors([&a, &b]), digest_tensors([&a, &b]));
        assert_ne!(digest_tensors([&a, &b]), digest_tensors([&b, &a]));
    }
}
