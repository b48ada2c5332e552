//! Immutable store of candidate embedding vectors.

use std::path::PathBuf;

use crate::error::{Error, Result};

/// `n` candidate vectors of dimension `d`, stored row-major.
///
/// A bank is never empty and every entry is finite; both are checked on
/// construction, so downstream code can rely on them.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBank {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
    ids: Vec<String>,
    source_path: Option<PathBuf>,
}

impl EmbeddingBank {
    /// Builds a bank from row-major data. Ids default to `"0".."n-1"`.
    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 {
            return Err(Error::invalid("embedding bank must contain at least one row"));
        }
        if cols == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "bank data has {} values, expected {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite entry at row {}, column {}",
                pos / cols,
                pos % cols
            )));
        }
        let ids = (0..rows).map(|i| i.to_string()).collect();
        Ok(Self {
            data,
            rows,
            cols,
            ids,
            source_path: None,
        })
    }

    /// Builds a bank from a list of equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::invalid(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::from_flat(rows.len(), cols, data)
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.rows {
            return Err(Error::invalid(format!(
                "{} ids for {} rows",
                ids.len(),
                self.rows
            )));
        }
        self.ids = ids;
        Ok(self)
    }

    pub fn with_source_path(mut self, path: impl Into<PathBuf>) -> Self {
        self.source_path = Some(path.into());
        self
    }

    /// Number of candidates `n`.
    pub fn len(&self) -> usize {
        self.rows
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    /// Embedding dimension `d`.
    pub fn dim(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.cols)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn source_path(&self) -> Option<&std::path::Path> {
        self.source_path.as_deref()
    }

    /// Row-major backing storage.
    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// A new bank made of the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        let mut ids = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.rows {
                return Err(Error::invalid(format!("row index {i} out of range")));
            }
            data.extend_from_slice(self.row(i));
            ids.push(self.ids[i].clone());
        }
        Self::from_flat(indices.len(), self.cols, data)?.with_ids(ids)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // four accumulators let the compiler vectorize the reduction
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
