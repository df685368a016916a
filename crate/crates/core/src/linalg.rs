//! Symmetric eigendecomposition helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigenpairs of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEigen {
    pub values: Vec<f64>,
    /// Column `i` is the eigenvector for `values[i]`.
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    /// `Q · diag(f(values)) · Qᵀ · v`
    pub fn apply_fn(&self, v: &DVector<f64>, f: impl Fn(f64) -> f64) -> DVector<f64> {
        let coords = self.vectors.tr_mul(v);
        let scaled = DVector::from_iterator(
            coords.len(),
            coords.iter().zip(&self.values).map(|(c, &l)| c * f(l)),
        );
        &self.vectors * scaled
    }

    /// Coordinates of `v` in the eigenbasis.
    pub fn coords(&self, v: &DVector<f64>) -> DVector<f64> {
        self.vectors.tr_mul(v)
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&DVector::from_row_slice(&self.values));
        &self.vectors * d * self.vectors.transpose()
    }
}

/// Symmetric eigendecomposition; the input is symmetrised first.
pub fn sym_eigen(m: &DMatrix<f64>) -> SymEigen {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    SymEigen { values, vectors }
}

/// Lower Cholesky factor of `m + jitter·I`, growing the jitter until it succeeds.
pub fn cholesky_jittered(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let scale = m.diagonal().amax().max(1e-300);
    let mut jitter = 0.0;
    loop {
        let shifted = m + DMatrix::identity(n, n) * jitter;
        if let Some(ch) = shifted.cholesky() {
            return ch.l();
        }
        jitter = if jitter == 0.0 {
            1e-12 * scale
        } else {
            jitter * 10.0
        };
    }
}
