//! Row-major point storage shared by the kernel, embedding and oracle code.

use crate::error::{ReachError, Result};

/// A set of points of equal dimension, stored contiguously row by row.
///
/// Zero-dimensional rows are allowed so that control-free samples
/// (`m = 0`) can be represented with the right row count.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    dim: usize,
    rows: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(ReachError::Input(
                "use Points::zero_dim for zero-dimensional rows".into(),
            ));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(ReachError::Input(format!(
                "buffer of length {} is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        let rows = data.len() / dim;
        Ok(Self { dim, rows, data })
    }

    /// `rows` points of dimension zero.
    pub fn zero_dim(rows: usize) -> Self {
        Self {
            dim: 0,
            rows,
            data: Vec::new(),
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(ReachError::Input("point list is empty".into()));
        };
        let dim = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(ReachError::dim(dim, row.len(), "point rows"));
            }
            data.extend_from_slice(row);
        }
        if dim == 0 {
            return Ok(Self::zero_dim(rows.len()));
        }
        Self::new(dim, data)
    }

    /// Repeats `row` `count` times.
    pub fn repeat(row: &[f64], count: usize) -> Self {
        if row.is_empty() {
            return Self::zero_dim(count);
        }
        let mut data = Vec::with_capacity(row.len() * count);
        for _ in 0..count {
            data.extend_from_slice(row);
        }
        Self {
            dim: row.len(),
            rows: count,
            data,
        }
    }

    /// Tensor grid with `counts[a]` evenly spaced nodes on `[lower[a], upper[a]]`.
    /// The last axis varies fastest.
    pub fn grid(lower: &[f64], upper: &[f64], counts: &[usize]) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() || lower.len() != counts.len() {
            return Err(ReachError::Input("grid bounds and counts must share one nonzero length".into()));
        }
        if counts.contains(&0) {
            return Err(ReachError::Input("grid axes need at least one node".into()));
        }
        let axes: Vec<Vec<f64>> = (0..counts.len())
            .map(|a| linspace(lower[a], upper[a], counts[a]))
            .collect();
        let dim = counts.len();
        let total: usize = counts.iter().product();
        let mut data = Vec::with_capacity(total * dim);
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            data.extend(idx.iter().enumerate().map(|(a, &i)| axes[a][i]));
            for a in (0..dim).rev() {
                idx[a] += 1;
                if idx[a] < counts[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        assert!(i < self.rows, "row {i} out of range for {} rows", self.rows);
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row-wise concatenation `[self_i, other_i]`.
    pub fn hconcat(&self, other: &Points) -> Result<Points> {
        if self.rows != other.rows {
            return Err(ReachError::dim(self.rows, other.rows, "row counts"));
        }
        if other.dim == 0 {
            return Ok(self.clone());
        }
        if self.dim == 0 {
            return Ok(other.clone());
        }
        let dim = self.dim + other.dim;
        let mut data = Vec::with_capacity(self.rows * dim);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Points {
            dim,
            rows: self.rows,
            data,
        })
    }
}

/// `count` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => {
            let h = (hi - lo) / (count - 1) as f64;
            (0..count)
                .map(|i| if i == count - 1 { hi } else { lo + h * i as f64 })
                .collect()
        }
    }
}
