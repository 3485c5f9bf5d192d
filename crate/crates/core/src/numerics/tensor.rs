//! Dense row-major tensor values.

use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::{Error, Result};

/// A dense n-dimensional value with optional gradient storage.
///
/// Data is row-major. Values are validated to be finite at construction;
/// the only mutation after construction is gradient population, which
/// happens inside `Tape::backward`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
    grad_tracked: bool,
    grad: Option<Vec<F>>,
}

impl<F: Scalar> Tensor<F> {
    /// Build a tensor, rejecting NaN/Inf and shape/data length disagreement.
    pub fn from_vec(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidParameter {
                name: "shape",
                reason: format!("extents must be positive, got {shape:?}"),
            });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                op: "Tensor::from_vec",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("tensor data at flat index {i}"),
            });
        }
        Ok(Self {
            shape,
            data,
            grad_tracked: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Self::from_vec(shape, vec![F::zero(); numel])
    }

    pub fn scalar(v: F) -> Result<Self> {
        Self::from_vec(vec![1], vec![v])
    }

    pub fn vector(data: Vec<F>) -> Result<Self> {
        let n = data.len();
        Self::from_vec(vec![n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        Self::from_vec(vec![rows, cols], data)
    }

    /// Flatten a list of equal-length rows into a `[rows, cols]` tensor.
    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidParameter {
                name: "rows",
                reason: "at least one row required".into(),
            });
        }
        let cols = rows[0].len();
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch {
                op: "Tensor::from_rows",
                lhs: vec![cols],
                rhs: vec![bad.len()],
            });
        }
        let data: Vec<F> = rows.iter().flatten().copied().collect();
        Self::matrix(rows.len(), cols, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn is_grad_tracked(&self) -> bool {
        self.grad_tracked
    }

    pub fn set_grad_tracked(&mut self, tracked: bool) {
        self.grad_tracked = tracked;
        if !tracked {
            self.grad = None;
        }
    }

    pub fn grad(&self) -> Option<&[F]> {
        self.grad.as_deref()
    }

    /// Overwrite the gradient. Called from the backward pass only.
    pub(crate) fn set_grad(&mut self, grad: Vec<F>) {
        debug_assert_eq!(grad.len(), self.data.len());
        self.grad = Some(grad);
    }

    /// In-place data update for optimizer steps. Keeps the finiteness invariant.
    pub(crate) fn update_data(&mut self, f: impl Fn(usize, F) -> F) -> Result<()> {
        for (i, v) in self.data.iter_mut().enumerate() {
            let nv = f(i, *v);
            if !nv.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("parameter update at flat index {i}"),
                });
            }
            *v = nv;
        }
        Ok(())
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<F> {
        if self.numel() != 1 {
            return Err(Error::Contract {
                op: "Tensor::item",
                reason: format!("expected 1 element, got shape {:?}", self.shape),
            });
        }
        Ok(self.data[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensors_and_param_sets_cross_threads() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<Tensor<f64>>();
        assert_send_sync::<Tensor<f32>>();
        assert_send_sync::<crate::numerics::ParamSet<f64>>();
    }

    #[test]
    fn construction_validates_shape_product() {
        let err = Tensor::<f64>::from_vec(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn construction_rejects_non_finite() {
        let err = Tensor::from_vec(vec![2], vec![1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
        let err = Tensor::from_vec(vec![1], vec![f64::INFINITY]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn construction_rejects_zero_extent() {
        let err = Tensor::<f64>::from_vec(vec![0, 3], vec![]).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { .. }));
    }

    #[test]
    fn item_requires_scalar() {
        let t = Tensor::vector(vec![1.0, 2.0]).unwrap();
        assert!(matches!(t.item(), Err(Error::Contract { .. })));
        assert_eq!(Tensor::scalar(3.5).unwrap().item().unwrap(), 3.5);
    }
}
