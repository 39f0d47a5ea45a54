//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for j in 0..p {
        for i in (j + 1)..p {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn symmetrized(mut m: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&mut m);
    m
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let p = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..p {
        for i in (j + 1)..p {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
        .ok_or_else(|| Error::Factorization(format!("{what} is not positive definite")))
}

/// log-determinant of a symmetric positive definite matrix.
pub fn logdet_spd(m: &DMatrix<f64>, what: &str) -> Result<f64> {
    let chol = cholesky(m, what)?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Inverse of a symmetric positive definite matrix, symmetrized.
pub fn inverse_spd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = cholesky(m, what)?;
    Ok(symmetrized(chol.inverse()))
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Symmetric square root of a positive semidefinite matrix. Eigenvalues in
/// `[-tol, 0)` are treated as zero; anything more negative is an error.
pub fn sqrt_psd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-10 * scale;
    let mut roots = DVector::zeros(eig.eigenvalues.len());
    for (r, &v) in roots.iter_mut().zip(eig.eigenvalues.iter()) {
        if v < -tol {
            return Err(Error::Factorization(format!(
                "{what} has negative eigenvalue {v:e}"
            )));
        }
        *r = v.max(0.0).sqrt();
    }
    let v = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * roots[j]);
    Ok(symmetrized(&scaled * v.transpose()))
}

pub fn l1_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

pub fn linf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Sample mean and covariance of the rows of `x` with divisor `n - ddof`.
pub fn mean_and_covariance(x: &DMatrix<f64>, ddof: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows();
    let p = x.ncols();
    let mean = DVector::from_fn(p, |j, _| x.column(j).sum() / n as f64);
    let mut centered = x.clone();
    for j in 0..p {
        let m = mean[j];
        centered.column_mut(j).iter_mut().for_each(|v| *v -= m);
    }
    let denom = (n - ddof) as f64;
    let cov = centered.transpose() * &centered / denom;
    (mean, symmetrized(cov))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let r = sqrt_psd(&m, "m").unwrap();
        assert!((r[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((r[(1, 1)] - 3.0).abs() < 1e-12);
        assert!(r[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn logdet_matches_product_of_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert!((logdet_spd(&m, "m").unwrap() - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn covariance_divisors() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 2.0]);
        let (m, c) = mean_and_covariance(&x, 0);
        assert_eq!(m[0], 1.0);
        assert_eq!(c[(0, 0)], 1.0);
        let (_, c1) = mean_and_covariance(&x, 1);
        assert_eq!(c1[(0, 0)], 2.0);
    }
}
