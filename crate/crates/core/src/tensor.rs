//! Dense rank-≤3 tensors of 64-bit reals.
//!
//! The shape is a list of up to three positive extents; a scalar has an
//! empty shape. Data is row-major. NaN and infinity are rejected at
//! construction so that numerical divergence surfaces as a diagnosable
//! error instead of silently poisoning a training run.

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, validating rank, extents, element count and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        if shape.len() > 3 {
            return Err(Error::shape("Tensor::new", format!("rank {} > 3", shape.len())));
        }
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::shape("Tensor::new", format!("zero extent in {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {shape:?} needs {numel} elements, got {}", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("tensor element {i}")));
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(v: f64) -> Result<Tensor> {
        Tensor::new(vec![], vec![v])
    }

    pub fn vector(data: Vec<f64>) -> Result<Tensor> {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    /// Row-major matrix from nested rows.
    pub fn matrix(rows: &[Vec<f64>]) -> Result<Tensor> {
        let r = rows.len();
        if r == 0 {
            return Err(Error::shape("Tensor::matrix", "no rows"));
        }
        let c = rows[0].len();
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::shape("Tensor::matrix", "ragged rows"));
        }
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            data.extend_from_slice(row);
        }
        Tensor::new(vec![r, c], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let numel: usize = shape.iter().product::<usize>().max(if shape.is_empty() { 1 } else { 0 });
        let numel = if shape.is_empty() { 1 } else { numel };
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: Vec<usize>, v: f64) -> Result<Tensor> {
        let numel: usize = if shape.is_empty() { 1 } else { shape.iter().product() };
        Tensor::new(shape, vec![v; numel])
    }

    /// I.i.d. normal entries with the given standard deviation.
    pub fn randn(shape: Vec<usize>, sd: f64, rng: &mut RngStream) -> Result<Tensor> {
        let numel: usize = if shape.is_empty() { 1 } else { shape.iter().product() };
        let data = (0..numel).map(|_| sd * rng.normal()).collect();
        Tensor::new(shape, data)
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

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn scalar_value(&self) -> Result<f64> {
        if self.numel() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::shape("scalar_value", format!("shape {:?}", self.shape)))
        }
    }

    /// Matrix row count (rank-2 only).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Matrix column count (rank-2 only).
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn at3(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[i * c..(i + 1) * c]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows()).map(|i| self.row_slice(i).to_vec()).collect()
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    /// Unchecked construction for internally-produced values whose
    /// finiteness is verified by the caller.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor { shape, data }
    }
}
