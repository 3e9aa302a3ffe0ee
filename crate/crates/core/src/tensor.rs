//! Dense row-major f64 tensor, the carrier for patches, feature maps,
//! weights and gradients.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Tensor {
        let len = dims.iter().product();
        Tensor { dims: dims.to_vec(), data: vec![0.0; len] }
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(Error::InvalidInput(format!(
                "tensor dims {:?} imply {} elements, got {}",
                dims,
                len,
                data.len()
            )));
        }
        Ok(Tensor { dims: dims.to_vec(), data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
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

    /// Row `y` of channel `c` for a C×H×W tensor.
    #[inline]
    pub fn row(&self, c: usize, y: usize, h: usize, w: usize) -> &[f64] {
        let start = (c * h + y) * w;
        &self.data[start..start + w]
    }

    #[inline]
    pub fn row_mut(&mut self, c: usize, y: usize, h: usize, w: usize) -> &mut [f64] {
        let start = (c * h + y) * w;
        &mut self.data[start..start + w]
    }

    /// Reinterprets the same storage under new dims (no copy).
    pub fn reshaped(mut self, dims: &[usize]) -> Result<Tensor> {
        let len: usize = dims.iter().product();
        if len != self.data.len() {
            return Err(Error::InvalidInput(format!(
                "cannot reshape {} elements to {:?}",
                self.data.len(),
                dims
            )));
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn row_indexing() {
        let t = Tensor::from_vec(&[2, 2, 3], (0..12).map(|i| i as f64).collect()).unwrap();
        assert_eq!(t.row(0, 1, 2, 3), &[3.0, 4.0, 5.0]);
        assert_eq!(t.row(1, 0, 2, 3), &[6.0, 7.0, 8.0]);
    }

    #[test]
    fn reshape_preserves_data() {
        let t = Tensor::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = t.reshaped(&[2, 2]).unwrap();
        assert_eq!(r.dims(), &[2, 2]);
        assert_eq!(r.data(), &[1.0, 2.0, 3.0, 4.0]);
    }
}
