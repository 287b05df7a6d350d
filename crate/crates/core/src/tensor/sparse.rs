use super::{Result, Tensor, TensorError};

/// Constant sparse matrix in compressed-row form.
///
/// Used for graph propagation operators (normalized adjacency, molecular
/// graph operators, node signals) that never receive gradients themselves.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicates are summed and
    /// explicit zeros are dropped; column order within a row is ascending.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(TensorError::InvalidArgument(format!(
                    "entry ({r}, {c}) outside {rows}x{cols}"
                )));
            }
            sorted.push((r, c, v));
        }
        sorted.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            last = Some((r, c));
            col_idx.push(c);
            values.push(v);
            row_ptr[r + 1] += 1;
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        let mut m = Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        };
        m.drop_zeros();
        Ok(m)
    }

    pub fn from_dense(dense: &Tensor) -> Result<Self> {
        if dense.shape().len() != 2 {
            return Err(TensorError::NotMatrix {
                op: "from_dense",
                shape: dense.shape().to_vec(),
            });
        }
        let (rows, cols) = (dense.rows(), dense.cols());
        let mut triplets = Vec::new();
        for r in 0..rows {
            for (c, &v) in dense.row(r).iter().enumerate() {
                if v != 0.0 {
                    triplets.push((r, c, v));
                }
            }
        }
        Self::from_triplets(rows, cols, &triplets)
    }

    fn drop_zeros(&mut self) {
        let mut row_ptr = vec![0usize; self.rows + 1];
        let mut col_idx = Vec::with_capacity(self.col_idx.len());
        let mut values = Vec::with_capacity(self.values.len());
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.values[k] != 0.0 {
                    col_idx.push(self.col_idx[k]);
                    values.push(self.values[k]);
                }
            }
            row_ptr[r + 1] = col_idx.len();
        }
        self.row_ptr = row_ptr;
        self.col_idx = col_idx;
        self.values = values;
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

    /// Nonzero `(col, value)` entries of one row.
    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (self.col_idx[k], self.values[k]))
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(&[self.rows, self.cols]);
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                out.set(r, c, v);
            }
        }
        out
    }

    /// `self · dense`.
    pub fn matmul(&self, dense: &Tensor) -> Result<Tensor> {
        if dense.shape().len() != 2 || dense.rows() != self.cols {
            return Err(TensorError::ShapeMismatch {
                op: "spmm",
                left: vec![self.rows, self.cols],
                right: dense.shape().to_vec(),
            });
        }
        let n = dense.cols();
        let mut out = vec![0.0; self.rows * n];
        for r in 0..self.rows {
            let out_row = &mut out[r * n..(r + 1) * n];
            for (c, w) in self.row_entries(r) {
                for (o, &b) in out_row.iter_mut().zip(dense.row(c)) {
                    *o += w * b;
                }
            }
        }
        Tensor::matrix(self.rows, n, out)
    }

    /// `selfᵀ · dense`.
    pub fn t_matmul(&self, dense: &Tensor) -> Result<Tensor> {
        if dense.shape().len() != 2 || dense.rows() != self.rows {
            return Err(TensorError::ShapeMismatch {
                op: "spmm_t",
                left: vec![self.cols, self.rows],
                right: dense.shape().to_vec(),
            });
        }
        let n = dense.cols();
        let mut out = vec![0.0; self.cols * n];
        for r in 0..self.rows {
            let src = dense.row(r);
            for (c, w) in self.row_entries(r) {
                for (o, &b) in out[c * n..(c + 1) * n].iter_mut().zip(src) {
                    *o += w * b;
                }
            }
        }
        Tensor::matrix(self.cols, n, out)
    }
}
