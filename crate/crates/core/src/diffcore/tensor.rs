use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::dim(format!("shape {shape:?} has a zero dimension")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// 1-D tensor.
    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// 2-D tensor from rows of equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("ragged rows"));
        }
        Tensor::new(vec![rows.len(), cols], rows.concat())
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data.clone())
    }

    /// Leading dimension (batch size for batched tensors).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Elements per leading-dimension slice.
    pub fn row_len(&self) -> usize {
        self.data.len() / self.shape[0]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    /// Gathers leading-dimension slices into a new tensor.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::dim("cannot select zero rows"));
        }
        let w = self.row_len();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            if i >= self.rows() {
                return Err(Error::Index(format!("row {i} of {}", self.rows())));
            }
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = idx.len();
        Tensor::new(shape, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += scale * other`, elementwise.
    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) -> Result<()> {
        self.expect_shape(other.shape())?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn expect_shape(&self, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::dim(format!(
                "expected shape {shape:?}, got {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?}", self.shape)?;
        let head = &self.data[..self.data.len().min(SHOWN)];
        write!(f, "{head:?}")?;
        if self.data.len() > SHOWN {
            write!(f, "..")?;
        }
        Ok(())
    }
}
