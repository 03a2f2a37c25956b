//! Compressed sparse row matrices, sized for desk-scale graphs.

/// Square CSR matrix with `f64` values and sorted column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_offsets: Vec<usize>,
    pub col_indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    /// Entries of row `i` as parallel `(column, value)` slices.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                acc += v * x[j];
            }
            *yi = acc;
        }
    }

    /// C = A · B where B is dense row-major with `cols` columns.
    pub fn matmul_dense(&self, b: &[f64], cols: usize, out: &mut [f64]) {
        debug_assert_eq!(b.len(), self.n * cols);
        debug_assert_eq!(out.len(), self.n * cols);
        out.fill(0.0);
        for i in 0..self.n {
            let (cidx, vals) = self.row(i);
            let out_row = &mut out[i * cols..(i + 1) * cols];
            for (&j, &v) in cidx.iter().zip(vals) {
                let b_row = &b[j * cols..(j + 1) * cols];
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o += v * bv;
                }
            }
        }
    }

    /// out += Aᵀ · B, scattering row contributions (used by backward passes).
    pub fn transpose_matmul_dense_acc(&self, b: &[f64], cols: usize, out: &mut [f64]) {
        debug_assert_eq!(b.len(), self.n * cols);
        debug_assert_eq!(out.len(), self.n * cols);
        for i in 0..self.n {
            let (cidx, vals) = self.row(i);
            let b_row = &b[i * cols..(i + 1) * cols];
            for (&j, &v) in cidx.iter().zip(vals) {
                let out_row = &mut out[j * cols..(j + 1) * cols];
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o += v * bv;
                }
            }
        }
    }

    /// Dense row-major copy, for oracle comparisons on small matrices.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                dense[i * self.n + j] = v;
            }
        }
        dense
    }

    /// Builds from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut counts = vec![0usize; n];
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_indices.push(c);
                values.push(v);
                counts[r] += 1;
                last = Some((r, c));
            }
        }
        let mut row_offsets = vec![0usize; n + 1];
        for r in 0..n {
            row_offsets[r + 1] = row_offsets[r] + counts[r];
        }
        CsrMatrix {
            n,
            row_offsets,
            col_indices,
            values,
        }
    }
}
