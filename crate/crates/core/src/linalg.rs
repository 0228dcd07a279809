//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Eigenvalues in `[-PSD_CLAMP, 0)` are treated as round-off and clamped.
pub const PSD_CLAMP: f64 = 1e-10;

/// Tolerance on `max |A - A^T|` for matrices that must be symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;

pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

pub fn ensure_square(a: &DMatrix<f64>, dim: usize, what: &str) -> Result<()> {
    if a.nrows() != dim || a.ncols() != dim {
        return Err(Error::DimensionMismatch(format!(
            "{what} is {}x{}, expected {dim}x{dim}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

pub fn ensure_symmetric(a: &DMatrix<f64>) -> Result<()> {
    let asymmetry = max_asymmetry(a);
    if asymmetry > SYMMETRY_TOL {
        return Err(Error::NotSymmetric { asymmetry });
    }
    Ok(())
}

/// Symmetric square root `S` with `S * S = A` for a PSD matrix `A`.
pub fn symmetric_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_symmetric(a)?;
    let sym = 0.5 * (a + a.transpose());
    let eig = SymmetricEigen::new(sym);
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -PSD_CLAMP {
            return Err(Error::NotPositiveSemidefinite { eigenvalue: *v });
        }
        *v = v.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&roots) * q.transpose())
}

/// Ratio of extreme eigenvalues of a symmetric PSD matrix. Infinite when the
/// smallest eigenvalue is not positive.
pub fn spd_condition(gram: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(gram.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    // Tr(AB) = sum_ij A_ij B_ji
    a.iter()
        .zip(b.transpose().iter())
        .map(|(x, y)| x * y)
        .sum()
}

pub fn standard_normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn standard_normal_vector<R: Rng + ?Sized>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
}
