//! Dense tensors and a reverse-mode differentiation tape.
//!
//! [`Tensor`] is a plain value (shape plus row-major `f64` data) used for
//! parameters and data. Computation happens on a [`Tape`], which hands out
//! [`Var`] handles; each handle records the operation that produced it so
//! [`Tape::backward`] can replay the chain rule in reverse order.

mod gradcheck;
mod ops;
mod tape;

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;

pub use gradcheck::{finite_difference_check, GradCheck};
pub use tape::{Tape, Var, Vjp};

/// Shape plus row-major values. Cloning shares the buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n]).expect("zeros: shape must have positive extents")
    }

    pub fn scalar(x: f64) -> Self {
        Self {
            shape: vec![1],
            data: Arc::new(vec![x]),
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Domain {
                op: "from_rows",
                detail: "ragged rows".into(),
            });
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    /// Uniform initialization in `[-scale, scale]`.
    pub fn uniform(shape: Vec<usize>, scale: f64, rng: &mut Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| (2.0 * rng.uniform() - 1.0) * scale).collect();
        Self::new(shape, data).expect("uniform: shape must have positive extents")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access; copies the buffer first if it is shared.
    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows and columns when viewed as a matrix over the last axis.
    pub fn dims2(&self) -> (usize, usize) {
        dims2(&self.shape)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let (_, c) = self.dims2();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub(crate) fn shared(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }
}

/// Softmax of `xs / temperature` as plain values.
pub fn softmax(xs: &[f64], temperature: f64) -> Vec<f64> {
    ops::softmax_row(xs, temperature)
}

/// `[n]` is a single row; higher ranks fold leading axes into rows.
pub(crate) fn dims2(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (1, *n),
        [.., c] => (shape[..shape.len() - 1].iter().product(), *c),
    }
}
