//! Random-walk Metropolis–Hastings sampler used to validate the Laplace
//! approximation.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Target acceptance rate during burn-in adaptation.
pub const TARGET_ACCEPTANCE: f64 = 0.3;
/// Fraction of iterations spent adapting the proposal scale.
pub const BURN_IN_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct McmcChain {
    /// Post-burn-in draws, one row per iteration.
    pub draws: Vec<Vec<f64>>,
    /// Acceptance rate over the post-burn-in iterations.
    pub acceptance_rate: f64,
    pub burn_in: usize,
    /// Multiplier applied to the supplied per-coordinate scales after adaptation.
    pub scale_multiplier: f64,
}

impl McmcChain {
    pub fn mean(&self) -> Vec<f64> {
        let d = self.draws.first().map_or(0, Vec::len);
        let n = self.draws.len() as f64;
        (0..d).map(|j| self.draws.iter().map(|r| r[j]).sum::<f64>() / n).collect()
    }

    /// Sample covariance with `n - 1` denominator.
    pub fn covariance(&self) -> nalgebra::DMatrix<f64> {
        let d = self.draws.first().map_or(0, Vec::len);
        let m = self.mean();
        let n = self.draws.len();
        let mut c = nalgebra::DMatrix::zeros(d, d);
        for r in &self.draws {
            for i in 0..d {
                for j in 0..=i {
                    c[(i, j)] += (r[i] - m[i]) * (r[j] - m[j]);
                }
            }
        }
        for i in 0..d {
            for j in 0..=i {
                c[(i, j)] /= (n.max(2) - 1) as f64;
                c[(j, i)] = c[(i, j)];
            }
        }
        c
    }
}

/// Gaussian random-walk Metropolis–Hastings.
///
/// The common scale multiplier adapts towards [`TARGET_ACCEPTANCE`] during
/// the first [`BURN_IN_FRACTION`] of iterations, staying within one decade of
/// the supplied `proposal_scale`, and is frozen afterwards.
pub fn mh_sample<F, R>(log_post: &F, init: &[f64], n_iter: usize, proposal_scale: &[f64], rng: &mut R) -> Result<McmcChain>
where
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    if n_iter < 1 {
        return Err(Error::InvalidParameter("n_iter must be at least 1".into()));
    }
    if proposal_scale.len() != init.len() {
        return Err(Error::DimensionMismatch("proposal scale length".into()));
    }
    let mut x = init.to_vec();
    let mut fx = log_post(&x);
    if !fx.is_finite() {
        return Err(Error::NonFinite(format!("log posterior {fx} at the initial point")));
    }
    let burn_in = ((n_iter as f64) * BURN_IN_FRACTION).floor() as usize;
    let mut log_mult = 0.0f64;
    let bound = 10f64.ln();
    let mut draws = Vec::with_capacity(n_iter - burn_in);
    let mut accepted = 0usize;
    let mut prop = vec![0.0; x.len()];
    for it in 0..n_iter {
        let mult = log_mult.exp();
        for j in 0..x.len() {
            let e: f64 = rng.sample(StandardNormal);
            prop[j] = x[j] + mult * proposal_scale[j] * e;
        }
        let fp = log_post(&prop);
        let u: f64 = rng.random();
        let accept = fp.is_finite() && u.ln() < fp - fx;
        if accept {
            x.copy_from_slice(&prop);
            fx = fp;
        }
        if it < burn_in {
            let a = if accept { 1.0 } else { 0.0 };
            log_mult = (log_mult + (a - TARGET_ACCEPTANCE) / ((it + 1) as f64).sqrt()).clamp(-bound, bound);
        } else {
            accepted += accept as usize;
            draws.push(x.clone());
        }
    }
    Ok(McmcChain {
        acceptance_rate: accepted as f64 / draws.len() as f64,
        draws,
        burn_in,
        scale_multiplier: log_mult.exp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn standard_normal_moments() {
        let chain = mh_sample(&|t: &[f64]| -0.5 * t[0] * t[0], &[0.0], 100_000, &[1.0], &mut stream(1, &[])).unwrap();
        let m = chain.mean()[0];
        let v = chain.covariance()[(0, 0)];
        assert!(m.abs() < 0.05, "{m}");
        assert!((v - 1.0).abs() < 0.1, "{v}");
        assert!(chain.acceptance_rate > 0.0 && chain.acceptance_rate < 1.0);
        assert_eq!(chain.burn_in, 20_000);
        assert_eq!(chain.draws.len(), 80_000);
    }

    #[test]
    fn tiny_steps_almost_always_accepted() {
        let chain = mh_sample(&|t: &[f64]| -0.5 * t[0] * t[0], &[0.0], 10_000, &[1e-6], &mut stream(2, &[])).unwrap();
        assert!(chain.acceptance_rate > 0.99);
    }

    #[test]
    fn bimodal_target_visits_both_modes() {
        let lp = |t: &[f64]| {
            let a = -0.5 * (t[0] - 3.0).powi(2);
            let b = -0.5 * (t[0] + 3.0).powi(2);
            a.max(b) + (1.0 + (a.min(b) - a.max(b)).exp()).ln()
        };
        // trapezoid quadrature of the basin masses
        let grid: Vec<f64> = (0..=24_000).map(|i| -12.0 + i as f64 * 1e-3).collect();
        let dens: Vec<f64> = grid.iter().map(|&x| lp(&[x]).exp()).collect();
        let trap = |lo: usize, hi: usize| (lo..hi).map(|i| 0.5 * (dens[i] + dens[i + 1]) * 1e-3).sum::<f64>();
        let expected_right = trap(12_000, 24_000) / trap(0, 24_000);
        assert!((expected_right - 0.5).abs() < 1e-9);

        let chain = mh_sample(&lp, &[3.0], 200_000, &[3.0], &mut stream(3, &[])).unwrap();
        let right = chain.draws.iter().filter(|r| r[0] > 0.0).count() as f64 / chain.draws.len() as f64;
        assert!(right >= 0.2 && 1.0 - right >= 0.2, "{right} vs {expected_right}");
    }

    #[test]
    fn invalid_start() {
        assert!(mh_sample(&|_: &[f64]| f64::NEG_INFINITY, &[0.0], 10, &[1.0], &mut stream(1, &[])).is_err());
        assert!(mh_sample(&|_: &[f64]| 0.0, &[0.0], 0, &[1.0], &mut stream(1, &[])).is_err());
    }
}
