//! Dense row-major matrices, vector helpers, and the two pointwise
//! activations used throughout the network.
//!
//! Everything is `f64`. The shapes involved are small (tens to a few hundred
//! rows), so the kernels are plain loops; no BLAS or SIMD. Shape mismatches
//! panic with a message naming both shapes — they are programming errors, not
//! recoverable conditions.

use serde::{Deserialize, Serialize};

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// All-zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from a row-major data vector. Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "matrix data length {} does not match shape {}x{}",
            data.len(),
            rows,
            cols
        );
        Matrix { rows, cols, data }
    }

    /// Build from explicit rows. Panics if the rows are ragged.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "row {i} has length {}, expected {c}", row.len());
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    /// Borrow row `i` as a slice.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Flat row-major view of the entries.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `y = self * x` for a column vector `x`. Panics on shape mismatch.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(
            x.len(),
            self.cols,
            "matvec shape mismatch: matrix is {}x{}, vector has length {}",
            self.rows,
            self.cols,
            x.len()
        );
        let mut y = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = self.row(i);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x.iter()) {
                acc += a * b;
            }
            y[i] = acc;
        }
        y
    }

    /// `y = selfᵀ * x`, i.e. multiply by the transpose without materializing
    /// it. Panics on shape mismatch.
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(
            x.len(),
            self.rows,
            "matvec_t shape mismatch: matrix is {}x{}, vector has length {}",
            self.rows,
            self.cols,
            x.len()
        );
        let mut y = vec![0.0; self.cols];
        for i in 0..self.rows {
            let row = self.row(i);
            let xi = x[i];
            for (yj, a) in y.iter_mut().zip(row.iter()) {
                *yj += a * xi;
            }
        }
        y
    }

    /// Rank-one accumulate: `self += a ⊗ b` (outer product). Panics on shape
    /// mismatch.
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        assert_eq!(
            (a.len(), b.len()),
            (self.rows, self.cols),
            "add_outer shape mismatch: matrix is {}x{}, operands have lengths {} and {}",
            self.rows,
            self.cols,
            a.len(),
            b.len()
        );
        for i in 0..self.rows {
            let ai = a[i];
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (r, bj) in row.iter_mut().zip(b.iter()) {
                *r += ai * bj;
            }
        }
    }

    /// Sum of squared entries.
    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Logistic function `1 / (1 + e^(-x))`, applied elementwise.
pub fn sigmoid(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| sigmoid_scalar(v)).collect()
}

/// Scalar logistic function. Saturates smoothly at 0 and 1 for large |x|.
pub fn sigmoid_scalar(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Hyperbolic tangent, applied elementwise.
pub fn tanh_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.tanh()).collect()
}

/// The two activations used by the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
}

impl Activation {
    /// Apply the activation elementwise.
    pub fn apply(self, x: &[f64]) -> Vec<f64> {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => tanh_vec(x),
        }
    }
}

/// Derivative of the activation expressed in terms of its *output* `y`:
/// `y(1-y)` for the logistic function, `1-y²` for tanh.
pub fn activation_derivative(kind: Activation, y: &[f64]) -> Vec<f64> {
    match kind {
        Activation::Sigmoid => y.iter().map(|&v| v * (1.0 - v)).collect(),
        Activation::Tanh => y.iter().map(|&v| 1.0 - v * v).collect(),
    }
}

/// Borrowed view of a parameter tensor — either a matrix or a bias vector.
/// Used to walk every tensor of the network in a fixed declaration order for
/// serialization, gradient checking, and optimizer updates.
#[derive(Clone, Copy, Debug)]
pub enum TensorView<'a> {
    Matrix(&'a Matrix),
    Vector(&'a [f64]),
}

impl<'a> TensorView<'a> {
    /// Number of scalar entries.
    pub fn len(&self) -> usize {
        match self {
            TensorView::Matrix(m) => m.data.len(),
            TensorView::Vector(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat row-major view of the entries.
    pub fn values(&self) -> &'a [f64] {
        match self {
            TensorView::Matrix(m) => &m.data,
            TensorView::Vector(v) => v,
        }
    }
}

/// Mutable counterpart of [`TensorView`].
#[derive(Debug)]
pub enum TensorViewMut<'a> {
    Matrix(&'a mut Matrix),
    Vector(&'a mut Vec<f64>),
}

impl<'a> TensorViewMut<'a> {
    pub fn len(&self) -> usize {
        match self {
            TensorViewMut::Matrix(m) => m.data.len(),
            TensorViewMut::Vector(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat mutable row-major view of the entries.
    pub fn values_mut(&mut self) -> &mut [f64] {
        match self {
            TensorViewMut::Matrix(m) => &mut m.data,
            TensorViewMut::Vector(v) => v.as_mut_slice(),
        }
    }
}

// ---- small vector helpers used by the recurrent kernels ----

/// Elementwise product `a ⊙ b`. Panics if lengths differ.
pub fn hadamard(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "hadamard length mismatch: {} vs {}", a.len(), b.len());
    a.iter().zip(b.iter()).map(|(x, y)| x * y).collect()
}

/// In-place `a += b`. Panics if lengths differ.
pub fn add_assign(a: &mut [f64], b: &[f64]) {
    assert_eq!(a.len(), b.len(), "add_assign length mismatch: {} vs {}", a.len(), b.len());
    for (x, y) in a.iter_mut().zip(b.iter()) {
        *x += y;
    }
}

/// Elementwise sum of two vectors.
pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "add length mismatch: {} vs {}", a.len(), b.len());
    a.iter().zip(b.iter()).map(|(x, y)| x + y).collect()
}
