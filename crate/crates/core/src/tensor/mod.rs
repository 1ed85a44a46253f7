//! Dense 2-D tensors, reverse-mode automatic differentiation and Adam.

mod adam;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use tape::{BackwardReport, Tape, Tid};

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use core::fmt;

use crate::rng::Rng;
use crate::{num, Float};

/// Row-major 2-D tensor. Vectors are 1xN or Nx1, scalars 1x1.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Float>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<Float>]) -> Tensor {
        let r = rows.len();
        let c = rows.first().map(|v| v.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Tensor { rows: r, cols: c, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Float>) -> Tensor {
        assert_eq!(rows * cols, data.len(), "shape does not match data length");
        Tensor { rows, cols, data }
    }

    pub fn scalar(x: Float) -> Tensor {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![x],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> Float {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut Float {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[Float] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> Float {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] with fan_in = rows.
    pub fn uniform_init(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
        let bound = 1.0 / num::sqrt(rows.max(1) as Float);
        let data = (0..rows * cols)
            .map(|_| rng.range_float(-bound, bound))
            .collect();
        Tensor { rows, cols, data }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorError {
    ShapeMismatch {
        op: &'static str,
        detail: String,
    },
    NonFinite {
        op: &'static str,
    },
    UnknownParam(String),
    EmptyBatch,
    /// Every slot of a softmax/cross-entropy row was masked out.
    AllMasked {
        row: usize,
    },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { op, detail } => {
                write!(f, "shape mismatch in {op}: {detail}")
            }
            TensorError::NonFinite { op } => write!(f, "non-finite value produced by {op}"),
            TensorError::UnknownParam(n) => write!(f, "unknown parameter '{n}'"),
            TensorError::EmptyBatch => write!(f, "empty batch"),
            TensorError::AllMasked { row } => write!(f, "all slots masked in row {row}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TensorError {}

pub(crate) fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::ShapeMismatch { op, detail }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named parameter store; the single owner of learnable state.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
    pub seed: u64,
}

impl ParamStore {
    pub fn new(seed: u64) -> ParamStore {
        ParamStore {
            entries: BTreeMap::new(),
            seed,
        }
    }

    /// Registers a parameter with uniform init; unique names enforced.
    pub fn insert_init(&mut self, name: &str, rows: usize, cols: usize, rng: &mut Rng) {
        let value = Tensor::uniform_init(rows, cols, rng);
        self.insert_tensor(name, value);
    }

    pub fn insert_tensor(&mut self, name: &str, value: Tensor) {
        let grad = Tensor::zeros(value.rows, value.cols);
        let prev = self
            .entries
            .insert(String::from(name), Param { value, grad });
        assert!(prev.is_none(), "duplicate parameter '{name}'");
    }

    pub fn get(&self, name: &str) -> Result<&Param, TensorError> {
        self.entries
            .get(name)
            .ok_or_else(|| TensorError::UnknownParam(String::from(name)))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param, TensorError> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| TensorError::UnknownParam(String::from(name)))
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.entries.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            for g in p.grad.data.iter_mut() {
                *g = 0.0;
            }
        }
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_rejects_duplicates() {
        let mut s = ParamStore::new(1);
        let mut rng = Rng::new(1);
        s.insert_init("w", 2, 2, &mut rng);
        assert_eq!(s.len(), 1);
        assert!(s.get("w").is_ok());
        assert!(s.get("missing").is_err());
    }

    #[test]
    #[should_panic(expected = "duplicate parameter")]
    fn duplicate_panics() {
        let mut s = ParamStore::new(1);
        let mut rng = Rng::new(1);
        s.insert_init("w", 2, 2, &mut rng);
        s.insert_init("w", 2, 2, &mut rng);
    }

    #[test]
    fn init_bounds() {
        let mut rng = Rng::new(7);
        let t = Tensor::uniform_init(16, 8, &mut rng);
        let bound = 0.25;
        assert!(t.data.iter().all(|&x| x.abs() <= bound));
        assert!(t.data.iter().any(|&x| x != 0.0));
    }
}
