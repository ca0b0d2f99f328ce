use crate::error::{Error, Result};

/// Design matrix without the intercept column, stored densely and as
/// sparse rows and columns. Grid-cell counts are mostly zero, so the
/// sparse views drive the solvers.
#[derive(Debug, Clone)]
pub struct Design {
    n_rows: usize,
    n_cols: usize,
    dense: Vec<f64>,
    row_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    row_val: Vec<f64>,
    col_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    col_val: Vec<f64>,
}

impl Design {
    /// Builds from row-major dense values.
    pub fn from_dense(n_rows: usize, n_cols: usize, dense: Vec<f64>) -> Result<Self> {
        if dense.len() != n_rows * n_cols {
            return Err(Error::Shape {
                expected: n_rows * n_cols,
                got: dense.len(),
            });
        }
        if dense.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut row_idx = Vec::new();
        let mut row_val = Vec::new();
        let mut col_counts = vec![0usize; n_cols];
        row_ptr.push(0);
        for r in 0..n_rows {
            for c in 0..n_cols {
                let v = dense[r * n_cols + c];
                if v != 0.0 {
                    row_idx.push(c as u32);
                    row_val.push(v);
                    col_counts[c] += 1;
                }
            }
            row_ptr.push(row_idx.len());
        }
        let mut col_ptr = vec![0usize; n_cols + 1];
        for c in 0..n_cols {
            col_ptr[c + 1] = col_ptr[c] + col_counts[c];
        }
        let mut fill = col_ptr.clone();
        let mut col_idx = vec![0u32; row_idx.len()];
        let mut col_val = vec![0.0; row_idx.len()];
        for r in 0..n_rows {
            for k in row_ptr[r]..row_ptr[r + 1] {
                let c = row_idx[k] as usize;
                col_idx[fill[c]] = r as u32;
                col_val[fill[c]] = row_val[k];
                fill[c] += 1;
            }
        }
        Ok(Design {
            n_rows,
            n_cols,
            dense,
            row_ptr,
            row_idx,
            row_val,
            col_ptr,
            col_idx,
            col_val,
        })
    }

    /// Builds from a slice of rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, |r| r.len());
        let mut dense = Vec::with_capacity(rows.len() * n_cols);
        for r in rows {
            if r.len() != n_cols {
                return Err(Error::Shape {
                    expected: n_cols,
                    got: r.len(),
                });
            }
            dense.extend_from_slice(r);
        }
        Self::from_dense(rows.len(), n_cols, dense)
    }

    /// Subset of rows (in the given order) and columns.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Result<Self> {
        let mut dense = Vec::with_capacity(rows.len() * cols.len());
        for &r in rows {
            let row = self.row_dense(r);
            dense.extend(cols.iter().map(|&c| row[c]));
        }
        Self::from_dense(rows.len(), cols.len(), dense)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row_dense(&self, r: usize) -> &[f64] {
        &self.dense[r * self.n_cols..(r + 1) * self.n_cols]
    }

    #[inline]
    pub fn row_sparse(&self, r: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.row_idx[a..b], &self.row_val[a..b])
    }

    #[inline]
    pub fn col_sparse(&self, c: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.col_ptr[c], self.col_ptr[c + 1]);
        (&self.col_idx[a..b], &self.col_val[a..b])
    }

    /// `intercept + x_r · beta`
    #[inline]
    pub fn linear(&self, r: usize, intercept: f64, beta: &[f64]) -> f64 {
        let (idx, val) = self.row_sparse(r);
        intercept
            + idx
                .iter()
                .zip(val)
                .map(|(&c, &v)| v * beta[c as usize])
                .sum::<f64>()
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }
}
