//! Gaussian priors over model parameters.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// A multivariate normal prior N(μ₀, Σ₀) with Σ₀ positive definite.
///
/// The Cholesky factor is computed once at construction; sampling draws d
/// standard normals in coordinate order and applies x = μ₀ + L z.
#[derive(Clone, Debug)]
pub struct GaussianPrior {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl GaussianPrior {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<GaussianPrior> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidArgument("prior dimension must be positive".into()));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::InvalidArgument(format!(
                "prior covariance is {}x{}, expected {d}x{d}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) || cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("prior mean and covariance must be finite".into()));
        }
        let scale = cov.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..d {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 * scale.max(1e-300) {
                    return Err(Error::InvalidArgument(
                        "prior covariance must be symmetric".into(),
                    ));
                }
            }
        }
        let chol = Cholesky::new(cov.clone()).ok_or_else(|| {
            Error::SingularMatrix("prior covariance is not positive definite".into())
        })?;
        Ok(GaussianPrior { mean, cov, chol })
    }

    /// Convenience constructor from plain slices (row-major covariance).
    pub fn from_parts(mean: &[f64], cov_rows: &[Vec<f64>]) -> Result<GaussianPrior> {
        let d = mean.len();
        if cov_rows.len() != d || cov_rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidArgument(format!(
                "prior covariance must be a {d}x{d} matrix"
            )));
        }
        let flat: Vec<f64> = cov_rows.iter().flatten().copied().collect();
        GaussianPrior::new(DVector::from_column_slice(mean), DMatrix::from_row_slice(d, d, &flat))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Σ₀⁻¹ via the stored Cholesky factor.
    pub fn cov_inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// One draw, consuming exactly `dim` standard normals from the stream.
    pub fn sample(&self, rng: &mut RngStream) -> DVector<f64> {
        let z = DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|_| StandardNormal.sample(rng)),
        );
        &self.mean + self.chol.l() * z
    }
}
