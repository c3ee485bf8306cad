//! Small dense kernels on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigen-decomposition of a symmetric matrix with eigenvalues ascending and
/// eigenvectors as the matching columns.
pub fn sym_eigen_sorted(a: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]).then(i.cmp(&j)));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Generalized symmetric-definite eigenproblem `A x = λ B x`.
///
/// Reduces with the Cholesky factor `B = L Lᵀ` to `L⁻¹ A L⁻ᵀ`. Eigenvectors
/// are returned `B`-orthonormal, ascending by eigenvalue, and with the sign
/// fixed so that the entry of largest magnitude is positive.
pub fn generalized_eigen(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let chol = b.clone().cholesky().ok_or_else(|| Error::Singular("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    let linv_a = l.solve_lower_triangular(a).ok_or_else(|| Error::Singular("triangular solve".into()))?;
    let c = l.solve_lower_triangular(&linv_a.transpose()).ok_or_else(|| Error::Singular("triangular solve".into()))?;
    let c = (&c + c.transpose()) * 0.5;
    let (vals, y) = sym_eigen_sorted(c);
    let mut x = l.transpose().solve_upper_triangular(&y).ok_or_else(|| Error::Singular("back substitution".into()))?;
    for j in 0..n {
        fix_sign(x.column_mut(j).as_mut_slice());
    }
    Ok((vals, x))
}

/// Flips `v` so that its largest-magnitude entry (first on ties) is positive.
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for &x in v.iter() {
        if x.abs() > best * (1.0 + 1e-12) {
            best = x.abs();
            sign = x.signum();
        }
    }
    if sign < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Cholesky factor of a dense SPD patch matrix.
#[derive(Clone, Debug)]
pub struct DenseCholesky {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl DenseCholesky {
    pub fn new(n: usize, row_major: &[f64]) -> Result<Self> {
        let a = DMatrix::from_row_slice(n, n, row_major);
        let chol = a.cholesky().ok_or_else(|| Error::Singular(format!("local matrix of size {n} is not positive definite")))?;
        Ok(Self { chol })
    }

    pub fn n(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let x = self.chol.solve(&DVector::from_column_slice(b));
        x.as_slice().to_vec()
    }
}

/// `‖C⁻¹‖₁` (maximum absolute column sum) or an error when `C` is
/// numerically singular; the error message carries a condition estimate.
pub fn inverse_one_norm(c: &DMatrix<f64>) -> Result<f64> {
    let svd = c.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-13 * smax.max(f64::MIN_POSITIVE)) {
        return Err(Error::Singular(format!("coefficient matrix has condition estimate {:e}", smax / smin)));
    }
    let inv = c.clone().try_inverse().ok_or_else(|| Error::Singular("coefficient matrix inversion failed".into()))?;
    Ok((0..inv.ncols()).map(|j| inv.column(j).abs().sum()).fold(0.0, f64::max))
}
