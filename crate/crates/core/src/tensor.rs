//! Dense row-major `f64` arrays.
//!
//! Only what the model needs: most operations assume rank 2 (`rows x cols`).
//! Vectors are stored either as rank 1 or as `1 x n` rows.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}{:?}", self.shape, self.data)
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape(format!("invalid shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    /// Build a matrix from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(r > 0 && c > 0, "from_rows needs a non-empty matrix");
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            shape: vec![r, c],
            data,
        }
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Self {
            shape: vec![1, values.len()],
            data: values.to_vec(),
        }
    }

    pub fn column(values: &[f64]) -> Self {
        Self {
            shape: vec![values.len(), 1],
            data: values.to_vec(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` of a rank-2 tensor; rank-1 tensors read as a single row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => (self.shape[0], self.data.len() / self.shape[0]),
        }
    }

    pub fn rows(&self) -> usize {
        self.dims2().0
    }

    pub fn cols(&self) -> usize {
        self.dims2().1
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let cols = self.cols();
        self.data[r * cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.cols();
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.data.len(), other.data.len());
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|a| *a = v);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = self.dims2();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self {
            shape: vec![c, r],
            data: out,
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Self> {
        let (m, k) = self.dims2();
        let (k2, n) = other.dims2();
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul: {:?} x {:?} inner dimensions differ",
                self.shape, other.shape
            )));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    /// `self^T * other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Tensor) -> Self {
        let (k, m) = self.dims2();
        let (k2, n) = other.dims2();
        debug_assert_eq!(k, k2);
        let mut out = vec![0.0; m * n];
        for p in 0..k {
            let arow = &self.data[p * m..(p + 1) * m];
            let brow = &other.data[p * n..(p + 1) * n];
            for (i, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Self {
            shape: vec![m, n],
            data: out,
        }
    }

    /// `self * other^T` without materializing the transpose.
    pub fn matmul_t(&self, other: &Tensor) -> Self {
        let (m, k) = self.dims2();
        let (n, k2) = other.dims2();
        debug_assert_eq!(k, k2);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &other.data[j * k..(j + 1) * k];
                out[i * n + j] = dot(arow, brow);
            }
        }
        Self {
            shape: vec![m, n],
            data: out,
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ln(1 + e^x)` without overflow for large `|x|`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
