//! Compressed sparse row matrices and the sparse-dense product.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-compressed sparse matrix. Column indices are sorted and unique within
/// each row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Builds a matrix from `(row, col, value)` entries. Duplicate coordinates
    /// are summed. Explicit zeros are kept.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, T)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, T)> = triplets.into_iter().collect();
        for &(r, c, _) in &entries {
            if r >= n_rows || c >= n_cols {
                return Err(Error::DimensionMismatch(format!(
                    "entry ({r}, {c}) outside {n_rows}x{n_cols}"
                )));
            }
        }
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut indptr = vec![0usize; n_rows + 1];
        let mut indices = Vec::with_capacity(entries.len());
        let mut values: Vec<T> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..n_rows {
            indptr[i + 1] += indptr[i];
        }
        Ok(Self {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        })
    }

    /// Assembles a matrix from raw CSR arrays, validating their structure.
    pub fn from_raw(
        n_rows: usize,
        n_cols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<T>,
    ) -> Result<Self> {
        if indptr.len() != n_rows + 1 || indptr[0] != 0 {
            return Err(Error::DimensionMismatch("indptr length".into()));
        }
        if indices.len() != values.len() || *indptr.last().unwrap_or(&0) != indices.len() {
            return Err(Error::DimensionMismatch("indices/values length".into()));
        }
        for r in 0..n_rows {
            if indptr[r] > indptr[r + 1] {
                return Err(Error::DimensionMismatch("indptr not monotone".into()));
            }
            let cols = &indices[indptr[r]..indptr[r + 1]];
            if cols.windows(2).any(|w| w[0] >= w[1]) || cols.iter().any(|&c| c >= n_cols) {
                return Err(Error::DimensionMismatch(format!("row {r} columns invalid")));
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![T::one(); n],
        }
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            indptr: vec![0; n_rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Column indices and values stored in row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let span = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, i: usize, j: usize) -> Option<T> {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).ok().map(|k| vals[k])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.n_rows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.n_rows)
            .map(|i| self.row(i).1.iter().copied().sum())
            .collect()
    }

    /// Returns the first coordinate whose mirror entry is missing or differs
    /// by more than `tol`.
    pub fn asymmetry(&self, tol: T) -> Option<(usize, usize)> {
        if self.n_rows != self.n_cols {
            return Some((0, 0));
        }
        self.iter().find_map(|(i, j, v)| match self.get(j, i) {
            Some(w) if (w - v).abs() <= tol => None,
            _ => Some((i, j)),
        })
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.asymmetry(tol).is_none()
    }

    pub fn to_dense(&self) -> Array2<T> {
        let mut out = Array2::zeros((self.n_rows, self.n_cols));
        for (i, j, v) in self.iter() {
            out[[i, j]] += v;
        }
        out
    }

    /// Exact sparse-dense product `self * x`.
    pub fn spmm(&self, x: &ArrayView2<'_, T>) -> Result<Array2<T>> {
        if x.nrows() != self.n_cols {
            return Err(Error::DimensionMismatch(format!(
                "spmm: sparse is {}x{}, dense has {} rows",
                self.n_rows,
                self.n_cols,
                x.nrows()
            )));
        }
        let mut out = Array2::zeros((self.n_rows, x.ncols()));
        for (i, mut out_row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out_row.scaled_add(v, &x.row(j));
            }
        }
        Ok(out)
    }

    /// Sparse matrix-vector product.
    pub fn spmv(&self, x: &ArrayView1<'_, T>) -> Result<ndarray::Array1<T>> {
        if x.len() != self.n_cols {
            return Err(Error::DimensionMismatch(format!(
                "spmv: sparse is {}x{}, vector has length {}",
                self.n_rows,
                self.n_cols,
                x.len()
            )));
        }
        Ok((0..self.n_rows)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum()
            })
            .collect())
    }

    /// Principal submatrix on `ids` (in the given order).
    pub fn submatrix(&self, ids: &[usize]) -> Self {
        let mut local = vec![usize::MAX; self.n_rows.max(self.n_cols)];
        for (k, &g) in ids.iter().enumerate() {
            local[g] = k;
        }
        let mut indptr = Vec::with_capacity(ids.len() + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for &g in ids {
            let (cols, vals) = self.row(g);
            let mut row: Vec<(usize, T)> = cols
                .iter()
                .zip(vals)
                .filter(|(&c, _)| local[c] != usize::MAX)
                .map(|(&c, &v)| (local[c], v))
                .collect();
            row.sort_by_key(|e| e.0);
            for (c, v) in row {
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self {
            n_rows: ids.len(),
            n_cols: ids.len(),
            indptr,
            indices,
            values,
        }
    }

    /// Applies `f(row, col, value)` to every stored value.
    pub fn map_values(&self, mut f: impl FnMut(usize, usize, T) -> T) -> Self {
        let mut out = self.clone();
        for i in 0..self.n_rows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                out.values[k] = f(i, self.indices[k], self.values[k]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn duplicates_are_summed_and_sorted() {
        let m = CsrMatrix::from_triplets(2, 3, vec![(1, 2, 1.0), (0, 1, 2.0), (1, 2, 0.5), (1, 0, 1.0)])
            .unwrap();
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(1, 2), Some(1.5));
        assert_eq!(m.row(1).0, &[0, 2]);
    }

    #[test]
    fn out_of_range_triplet_rejected() {
        assert!(CsrMatrix::<f64>::from_triplets(2, 2, vec![(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn identity_and_zero_products() {
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        assert_eq!(CsrMatrix::identity(3).spmm(&x.view()).unwrap(), x);
        assert_eq!(
            CsrMatrix::<f64>::zeros(3, 3).spmm(&x.view()).unwrap(),
            Array2::<f64>::zeros((3, 2))
        );
    }

    #[test]
    fn spmm_dimension_mismatch() {
        let x = Array2::<f64>::zeros((4, 2));
        assert!(matches!(
            CsrMatrix::<f64>::identity(3).spmm(&x.view()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn submatrix_keeps_internal_entries() {
        let m = CsrMatrix::from_triplets(
            4,
            4,
            vec![(0, 1, 1.0), (1, 0, 1.0), (1, 3, 2.0), (3, 1, 2.0), (2, 3, 5.0), (3, 2, 5.0)],
        )
        .unwrap();
        let s = m.submatrix(&[3, 1]);
        assert_eq!(s.to_dense(), array![[0.0, 2.0], [2.0, 0.0]]);
    }

    #[test]
    fn raw_constructor_validates_rows() {
        assert!(CsrMatrix::<f64>::from_raw(2, 2, vec![0, 2, 2], vec![1, 0], vec![1.0, 1.0]).is_err());
        assert!(CsrMatrix::<f64>::from_raw(2, 2, vec![0, 1, 2], vec![1, 0], vec![1.0, 1.0]).is_ok());
    }
}
