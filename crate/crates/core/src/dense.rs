//! Plain row-major dense helpers used outside the autodiff tape
//! (fingerprinting, evaluation, oracles).

/// C = A(m×k) · B(k×n), row-major.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
    c
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Eigenvalues of a dense symmetric matrix, sorted ascending.
pub fn symmetric_eigenvalues(mat: &[f64], n: usize) -> Vec<f64> {
    let m = nalgebra::DMatrix::from_row_slice(n, n, mat);
    let mut evs: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
    evs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    evs
}

/// Full eigendecomposition of a dense symmetric matrix.
/// Returns (eigenvalues ascending, eigenvectors as row-major n×n with
/// column j the eigenvector of eigenvalue j).
pub fn symmetric_eigendecomposition(mat: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let m = nalgebra::DMatrix::from_row_slice(n, n, mat);
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for row in 0..n {
            vectors[row * n + new_col] = eig.eigenvectors[(row, old_col)];
        }
    }
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = [1.0, 2.0, 3.0, 4.0]; // 2x2
        let b = [5.0, 6.0, 7.0, 8.0];
        assert_eq!(matmul(&a, &b, 2, 2, 2), vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn eigen_of_k2_laplacian() {
        let l = [1.0, -1.0, -1.0, 1.0];
        let evs = symmetric_eigenvalues(&l, 2);
        assert!((evs[0] - 0.0).abs() < 1e-12);
        assert!((evs[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn eigendecomposition_reconstructs() {
        let m = [2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0];
        let (vals, vecs) = symmetric_eigendecomposition(&m, 3);
        // reconstruct U Λ Uᵀ
        let mut rec = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += vecs[i * 3 + k] * vals[k] * vecs[j * 3 + k];
                }
                rec[i * 3 + j] = acc;
            }
        }
        for (got, want) in rec.iter().zip(&m) {
            assert!((got - want).abs() < 1e-10);
        }
    }
}
