//! Dense f32 tensors (rank 1..=3) with a define-by-run reverse-mode
//! autodiff tape and an AdamW optimizer.
//!
//! Layout convention is channels-first: rank-3 tensors are
//! `(batch, channels, time)`, rank-2 `(channels, time)` or `(rows, cols)`
//! for matrix ops, rank-1 `(time)`. Data is row-major and immutable after
//! construction; clones share storage.

mod graph;
mod kernels;
mod optim;
mod params;

pub use graph::{Graph, Var};
pub use optim::{AdamW, AdamWConfig};
pub use params::{ParamId, ParamStore, Parameter};

pub(crate) use kernels::reflect_index;

use std::sync::Arc;

use crate::error::{Error, Result};

/// Dense f32 tensor, rank 1 to 3, row-major, shared storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Arc<Vec<f32>>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 3 {
            return Err(Error::Shape(format!(
                "rank must be 1..=3, got {}",
                dims.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero-sized dimension in {dims:?}")));
        }
        let numel: usize = dims.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {dims:?} implies {numel} elements, data has {}",
                data.len()
            )));
        }
        Ok(Self {
            dims,
            data: Arc::new(data),
        })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let numel = dims.iter().product();
        Self::new(dims.to_vec(), vec![0.0; numel]).expect("zeros: valid dims")
    }

    pub fn scalar(value: f32) -> Self {
        Self::new(vec![1], vec![value]).expect("scalar")
    }

    pub fn from_vec(data: Vec<f32>) -> Self {
        assert!(!data.is_empty(), "empty tensor");
        let dims = vec![data.len()];
        Self {
            dims,
            data: Arc::new(data),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Copy-on-write mutable view of the underlying storage.
    pub fn data_mut(&mut self) -> &mut [f32] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    /// Interpret as `(batch, channels, time)`, padding leading dims with 1.
    pub fn as_bct(&self) -> (usize, usize, usize) {
        match self.dims[..] {
            [t] => (1, 1, t),
            [c, t] => (1, c, t),
            [b, c, t] => (b, c, t),
            _ => unreachable!(),
        }
    }

    /// Same storage reinterpreted under new dims (numel must match).
    pub fn reshape(&self, dims: Vec<usize>) -> Result<Self> {
        let numel: usize = dims.iter().product();
        if numel != self.numel() || dims.is_empty() || dims.len() > 3 {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} ({} elems) to {dims:?}",
                self.dims,
                self.numel()
            )));
        }
        Ok(Self {
            dims,
            data: Arc::clone(&self.data),
        })
    }

    pub fn item(&self) -> Result<f32> {
        if self.numel() != 1 {
            return Err(Error::Shape(format!(
                "item() on tensor with {} elements",
                self.numel()
            )));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
