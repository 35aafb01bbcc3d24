use super::Tensor;
use crate::error::{Error, Result};

/// Compressed sparse row matrix, used for the normalized adjacency so
/// propagation costs O(|E|·width) instead of O(n²·width).
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from (row, col, value) triplets. Triplets must be sorted by
    /// row then column and contain no duplicates.
    pub fn from_sorted_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut prev: Option<(usize, usize)> = None;
        for &(r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(Error::Shape(format!(
                    "entry ({r}, {c}) outside {rows}x{cols}"
                )));
            }
            if let Some(p) = prev {
                if (r, c) <= p {
                    return Err(Error::Contract("triplets not strictly sorted".into()));
                }
            }
            prev = Some((r, c));
            indptr[r + 1] += 1;
            indices.push(c);
            values.push(v);
        }
        for i in 0..rows {
            indptr[i + 1] += indptr[i];
        }
        Ok(SparseMatrix {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates the stored entries of row `i` as (column, value).
    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, v) in self.row_entries(i) {
                t.set(i, j, v);
            }
        }
        t
    }

    /// `self · dense`
    pub fn matmul_dense(&self, dense: &Tensor) -> Result<Tensor> {
        if self.cols != dense.rows() {
            return Err(Error::Shape(format!(
                "sparse {}x{} by dense {}x{}",
                self.rows,
                self.cols,
                dense.rows(),
                dense.cols()
            )));
        }
        let w = dense.cols();
        let mut out = Tensor::zeros(self.rows, w);
        for i in 0..self.rows {
            for (j, v) in self.row_entries(i) {
                let src = dense.row(j);
                for (o, s) in out.row_mut(i).iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · dense`
    pub fn transpose_matmul_dense(&self, dense: &Tensor) -> Result<Tensor> {
        if self.rows != dense.rows() {
            return Err(Error::Shape(format!(
                "sparse transpose {}x{} by dense {}x{}",
                self.cols,
                self.rows,
                dense.rows(),
                dense.cols()
            )));
        }
        let w = dense.cols();
        let mut out = Tensor::zeros(self.cols, w);
        for i in 0..self.rows {
            let src = dense.row(i).to_vec();
            for (j, v) in self.row_entries(i) {
                for (o, s) in out.row_mut(j).iter_mut().zip(&src) {
                    *o += v * s;
                }
            }
        }
        Ok(out)
    }
}
