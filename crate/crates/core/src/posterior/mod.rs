//! Posterior approximation: Laplace fits and a Metropolis–Hastings baseline.

pub mod mcmc;
pub mod optimize;

use nalgebra::{DMatrix, DVector};

use crate::covariance::cholesky;
use crate::error::{Error, Result};
use crate::model::{log_posterior_working, Layout, ModelSpec};

pub use mcmc::{mh_sample, McmcChain};
pub use optimize::{find_map, hessian_fd, HessianResult, MapOptions, MapResult};

/// Gaussian approximation `N(mean, covariance)` on the working scale.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub map: MapResult,
    /// Set when the Hessian needed eigenvalue flooring.
    pub hessian_floored: bool,
}

/// Laplace approximation of an arbitrary log density: mode plus inverse
/// Hessian of the negative log density at the mode.
pub fn laplace_fit<F: Fn(&[f64]) -> f64>(log_post: &F, init: &[f64], opts: &MapOptions) -> Result<GaussianPosterior> {
    let map = find_map(log_post, init, opts)?;
    let hess = hessian_fd(log_post, &map.theta)?;
    let chol = cholesky(hess.matrix)?;
    let mut covariance = chol.inverse();
    // inverse of a symmetric matrix, symmetrised against round-off
    covariance = (&covariance + covariance.transpose()) * 0.5;
    if covariance.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Laplace covariance".into()));
    }
    Ok(GaussianPosterior {
        mean: DVector::from_column_slice(&map.theta),
        covariance,
        hessian_floored: hess.floored,
        map,
    })
}

/// Laplace posterior of the free model parameters on the working scale.
///
/// `normals` are the frozen standard-normal draws used by the binomial
/// marginal likelihood and are ignored for the Gaussian family. The search
/// starts at `init`, usually the prior working mean.
pub fn laplace(
    spec: &ModelSpec,
    layout: &Layout,
    y: &DVector<f64>,
    normals: &[DVector<f64>],
    init: &[f64],
) -> Result<GaussianPosterior> {
    if init.len() != spec.dim() {
        return Err(Error::DimensionMismatch(format!("init has {} entries, model has {}", init.len(), spec.dim())));
    }
    let lp = |w: &[f64]| log_posterior_working(spec, layout, y, normals, w);
    laplace_fit(&lp, init, &MapOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conjugate_normal_is_exact() {
        // prior N(1, 4), five observations with unit noise
        let y = [0.3, 1.7, 2.2, 0.9, 1.4];
        let lp = |t: &[f64]| {
            let prior = -0.5 * (t[0] - 1.0).powi(2) / 4.0;
            prior + y.iter().map(|v| -0.5 * (v - t[0]).powi(2)).sum::<f64>()
        };
        let post = laplace_fit(&lp, &[0.0], &MapOptions::default()).unwrap();
        let prec = 0.25 + 5.0;
        let mean = (1.0 * 0.25 + y.iter().sum::<f64>()) / prec;
        assert!((post.mean[0] - mean).abs() < 1e-4);
        assert!((post.covariance[(0, 0)] - 1.0 / prec).abs() < 1e-4);
        assert!(!post.hessian_floored);
    }

    #[test]
    fn correlated_quadratic() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let mu = DVector::from_vec(vec![0.5, -1.0]);
        let lp = |t: &[f64]| {
            let d = DVector::from_column_slice(t) - &mu;
            -0.5 * (d.transpose() * &a * &d)[(0, 0)]
        };
        let post = laplace_fit(&lp, &[0.0, 0.0], &MapOptions::default()).unwrap();
        let cov = a.try_inverse().unwrap();
        assert!((&post.mean - &mu).amax() < 1e-5);
        assert!((&post.covariance - cov).amax() < 1e-3);
    }
}
