//! Empirical moments, least squares and symmetric eigenvalue utilities.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Allowed asymmetry (relative to `max(1, max|S|)`) before a matrix is rejected.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Result of an ordinary least-squares fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub coefficients: DVector<f64>,
    pub n_samples: usize,
    /// `λ_min((1/n) XᵀX)`, zero when the design is rank deficient.
    pub kappa_min: f64,
    /// `d / (n κ_min)`: bound on the expected squared coefficient error under
    /// unit-variance noise. Infinite when `κ_min = 0`.
    pub error_bound: f64,
}

fn check_samples(samples: &DMatrix<f64>) -> Result<()> {
    if samples.nrows() == 0 {
        return Err(Error::invalid("no samples"));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite sample entry"));
    }
    Ok(())
}

/// Row mean of an `n × m` sample matrix.
pub fn empirical_mean(samples: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_samples(samples)?;
    Ok(samples.row_mean().transpose())
}

/// `(1/n) Σ xᵢxᵢᵀ` over the rows of `samples`.
pub fn empirical_second_moment(samples: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_samples(samples)?;
    let m = samples.transpose() * samples / samples.nrows() as f64;
    Ok((&m + m.transpose()) * 0.5)
}

/// Least squares `argmin ‖Xω − y‖²` through an SVD.
///
/// Singular values below `σ_max · max(n, d) · ε_mach` are treated as zero, which
/// yields the minimum-norm solution for rank-deficient designs.
pub fn ols_fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit> {
    let (n, d) = x.shape();
    if n == 0 || d == 0 {
        return Err(Error::invalid("empty design matrix"));
    }
    if y.len() != n {
        return Err(Error::dims("ols response", n, y.len()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite entry in least-squares input"));
    }

    let svd = x.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let cutoff = sigma_max * n.max(d) as f64 * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    let coefficients = if sigma_max == 0.0 {
        DVector::zeros(d)
    } else {
        svd.solve(y, cutoff)
            .map_err(|e| Error::Numerical(e.to_string()))?
    };

    let kappa_min = if rank < d {
        0.0
    } else {
        svd.singular_values.min().powi(2) / n as f64
    };
    let error_bound = if kappa_min > 0.0 {
        d as f64 / (n as f64 * kappa_min)
    } else {
        f64::INFINITY
    };
    Ok(OlsFit {
        coefficients,
        n_samples: n,
        kappa_min,
        error_bound,
    })
}

/// Eigen-decomposition with eigenvalues in ascending order.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: DVector<f64>,
    /// Column `i` pairs with `values[i]`.
    pub vectors: DMatrix<f64>,
}

/// Symmetrize `s` (after checking it is symmetric within tolerance) and decompose it.
pub fn sorted_eigen(s: &DMatrix<f64>) -> Result<SortedEigen> {
    if !s.is_square() {
        return Err(Error::invalid(format!(
            "expected a square matrix, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    if s.nrows() == 0 {
        return Err(Error::invalid("empty matrix"));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite matrix entry"));
    }
    let asym = (s - s.transpose()).amax();
    if asym > SYMMETRY_TOL * s.amax().max(1.0) {
        return Err(Error::invalid(format!(
            "matrix is not symmetric (max asymmetry {asym:.3e})"
        )));
    }
    let eig = SymmetricEigen::new((s + s.transpose()) * 0.5);
    let mut order: Vec<usize> = (0..s.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    Ok(SortedEigen { values, vectors })
}

/// Smallest eigenvalue of a symmetric matrix and a unit eigenvector for it.
pub fn min_eigenvalue(s: &DMatrix<f64>) -> Result<(f64, DVector<f64>)> {
    let eig = sorted_eigen(s)?;
    let v = eig.vectors.column(0).into_owned();
    Ok((eig.values[0], v))
}

pub fn max_eigenvalue(s: &DMatrix<f64>) -> Result<f64> {
    let eig = sorted_eigen(s)?;
    Ok(eig.values[eig.values.len() - 1])
}

/// Minimum-norm solution of `A w = b` for symmetric PSD `A` (a pseudo-inverse solve).
pub fn solve_psd_min_norm(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if b.len() != a.nrows() {
        return Err(Error::dims("psd solve right-hand side", a.nrows(), b.len()));
    }
    let eig = sorted_eigen(a)?;
    let top = eig.values.amax();
    let cutoff = top * a.nrows() as f64 * 1e-12;
    let mut w = DVector::zeros(b.len());
    for (i, &lam) in eig.values.iter().enumerate() {
        if lam > cutoff {
            let v = eig.vectors.column(i);
            w += v * (v.dot(b) / lam);
        }
    }
    Ok(w)
}
