//! Dense symmetric helpers on top of nalgebra's eigensolver.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{BilevelError, Result};

fn check_square(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(BilevelError::Input(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(BilevelError::Numeric {
            what: what.to_string(),
            x: Vec::new(),
            y: Vec::new(),
        });
    }
    Ok(())
}

/// Moore–Penrose pseudoinverse of a symmetric matrix; eigenvalues with
/// `|λ| < cutoff` are treated as exact zeros.
pub fn pinv_symmetric(m: &DMatrix<f64>, cutoff: f64) -> Result<DMatrix<f64>> {
    check_square(m, "matrix to pseudo-invert")?;
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let inv = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues
            .iter()
            .map(|&l| if l.abs() < cutoff { 0.0 } else { 1.0 / l }),
    );
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&inv) * v.transpose())
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_square(m, "symmetric matrix")?;
    let sym = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Smallest eigenvalue whose magnitude exceeds `zero_tol`, if any.
pub fn min_nonzero_eigenvalue(m: &DMatrix<f64>, zero_tol: f64) -> Result<Option<f64>> {
    Ok(sym_eigenvalues(m)?
        .into_iter()
        .filter(|l| l.abs() > zero_tol)
        .min_by(f64::total_cmp))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_singular_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let p = pinv_symmetric(&m, 0.5).unwrap();
        assert!((p[(0, 0)] - 0.5).abs() < 1e-15);
        assert!(p[(1, 1)].abs() < 1e-15);
    }

    #[test]
    fn pinv_satisfies_penrose_identities() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        let p = pinv_symmetric(&m, 1e-8).unwrap();
        assert!((&m * &p * &m - &m).norm() < 1e-12);
        assert!((&p * &m * &p - &p).norm() < 1e-12);
    }

    #[test]
    fn nonzero_spectrum() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(min_nonzero_eigenvalue(&m, 1e-8).unwrap(), Some(1.0));
        assert_eq!(min_nonzero_eigenvalue(&DMatrix::zeros(2, 2), 1e-8).unwrap(), None);
        assert!(pinv_symmetric(&DMatrix::zeros(2, 3), 1.0).is_err());
    }
}
