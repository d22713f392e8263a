//! Dense row-major tensors in 64-bit floating point.
//!
//! Every numeric routine in this crate operates on [`Tensor`]. The layout is
//! contiguous row-major (last axis fastest), which for the ubiquitous
//! `(batch, channels, height, width)` case means one image plane is a
//! contiguous slice. All reductions run in a fixed sequential order so that
//! repeated runs produce bit-identical results.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], value: f64) -> Tensor {
        Tensor { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::shape(format!(
                "buffer of {} elements cannot fill shape {:?} ({} elements)",
                data.len(),
                shape,
                expect
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Tensor> {
        let expect: usize = shape.iter().product();
        if self.data.len() != expect {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data: self.data })
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match *self.shape {
            [a, b] => Ok((a, b)),
            _ => Err(Error::shape(format!("expected 2-d tensor, got {:?}", self.shape))),
        }
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape {
            [a, b, c, d] => Ok((a, b, c, d)),
            _ => Err(Error::shape(format!("expected 4-d tensor, got {:?}", self.shape))),
        }
    }

    /// Element accessor by multi-index; intended for tests and small code
    /// paths, not inner loops.
    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of bounds for axis {i} (len {dim})");
            flat = flat * dim + ix;
        }
        self.data[flat]
    }

    /// `self += scale * other`, elementwise.
    pub fn scaled_add(&mut self, scale: f64, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "scaled_add of {:?} into {:?}",
                other.shape, self.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Fails with [`Error::NonFinite`] if any element is NaN or infinite.
    pub fn validate_finite(&self, context: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{context} (element {i} = {v})")));
            }
        }
        Ok(())
    }
}
