//! KL-divergence utility of one simulated experiment and Monte-Carlo
//! summaries over many of them.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::cholesky;
use crate::error::{Error, Result};
use crate::model::{log_posterior_working, marginal_normals, simulate_data, Family, Layout, ModelSpec, PriorMoments};
use crate::posterior::{laplace, mh_sample};
use crate::rng::{self, label};

/// Largest tolerated share of failed draws in one estimate.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Summary {
    Mean,
    #[default]
    Median,
}

/// How the posterior of each simulated data set is approximated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum PosteriorMethod {
    #[default]
    Laplace,
    /// Random-walk MH started at the Laplace mode; the chain's mean and
    /// covariance replace the Laplace moments.
    Mh { iterations: usize },
}

/// KL divergence of `N(mu1, sigma1)` from `N(mu0, sigma0)`.
pub fn kl_gaussian(mu0: &DVector<f64>, sigma0: &DMatrix<f64>, mu1: &DVector<f64>, sigma1: &DMatrix<f64>) -> Result<f64> {
    let k = mu0.len();
    if mu1.len() != k || sigma0.shape() != (k, k) || sigma1.shape() != (k, k) {
        return Err(Error::DimensionMismatch("KL inputs must share one dimension".into()));
    }
    if k == 0 {
        return Ok(0.0);
    }
    let c0 = cholesky(sigma0.clone())?;
    let c1 = cholesky(sigma1.clone())?;
    let d = mu0 - mu1;
    let quad = d.dot(&c0.solve(&d));
    let trace = c0.solve(sigma1).trace();
    let logdet = |c: &nalgebra::Cholesky<f64, nalgebra::Dyn>| 2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let kl = 0.5 * (quad + trace - (logdet(&c1) - logdet(&c0)) - k as f64);
    // round-off can leave tiny negatives when the inputs coincide
    Ok(kl.max(0.0))
}

/// One utility draw: theta from the prior, data from the likelihood, a
/// posterior fit, and its divergence from the Gaussian working prior.
pub fn utility_draw<R: rand::Rng + ?Sized>(
    spec: &ModelSpec,
    layout: &Layout,
    prior: &PriorMoments,
    method: PosteriorMethod,
    rng: &mut R,
) -> Result<f64> {
    let theta = spec.draw_prior(rng);
    let y = simulate_data(spec, layout, &theta, rng)?;
    let normals = match spec.family {
        Family::Binomial => marginal_normals(layout, spec.marginal_draws, rng),
        Family::Gaussian => Vec::new(),
    };
    let init: Vec<f64> = prior.mean.iter().copied().collect();
    let post = laplace(spec, layout, &y, &normals, &init)?;
    let (mean, cov) = match method {
        PosteriorMethod::Laplace => (post.mean, post.covariance),
        PosteriorMethod::Mh { iterations } => {
            let lp = |w: &[f64]| log_posterior_working(spec, layout, &y, &normals, w);
            // 2.4/sqrt(d) is the usual random-walk scaling for Gaussian targets
            let d = post.mean.len().max(1) as f64;
            let scale: Vec<f64> = post.covariance.diagonal().iter().map(|v| 2.4 * v.sqrt() / d.sqrt()).collect();
            let chain = mh_sample(&lp, post.mean.as_slice(), iterations, &scale, rng)?;
            let m = DVector::from_vec(chain.mean());
            (m, chain.covariance())
        }
    };
    let u = kl_gaussian(&prior.mean, &prior.cov, &mean, &cov)?;
    if u.is_finite() {
        Ok(u)
    } else {
        Err(Error::NonFinite("utility".into()))
    }
}

/// Monte-Carlo utility draws for one design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilitySample {
    pub draws: Vec<f64>,
    /// Draws that failed and were excluded.
    pub failures: usize,
    pub mode: Summary,
}

impl UtilitySample {
    pub fn summary(&self) -> f64 {
        summarize(&self.draws, self.mode)
    }

    /// Monte-Carlo standard error of the mean of the draws.
    pub fn std_error(&self) -> f64 {
        let n = self.draws.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.draws.iter().sum::<f64>() / n as f64;
        let v = self.draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        (v / n as f64).sqrt()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let mut body = String::from("draw_index,utility\n");
        for (i, u) in self.draws.iter().enumerate() {
            body.push_str(&format!("{i},{u}\n"));
        }
        f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Mean, or median with the central pair averaged for even counts.
pub fn summarize(draws: &[f64], mode: Summary) -> f64 {
    if draws.is_empty() {
        return f64::NAN;
    }
    match mode {
        Summary::Mean => draws.iter().sum::<f64>() / draws.len() as f64,
        Summary::Median => {
            let mut s = draws.to_vec();
            s.sort_by(f64::total_cmp);
            let n = s.len();
            if n % 2 == 1 {
                s[n / 2]
            } else {
                0.5 * (s[n / 2 - 1] + s[n / 2])
            }
        }
    }
}

/// Collects per-draw results, dropping failures up to the tolerated share.
pub fn collect_draws(results: Vec<Result<f64>>, mode: Summary) -> Result<UtilitySample> {
    let total = results.len();
    if total == 0 {
        return Err(Error::EmptyInput("utility draws".into()));
    }
    let mut draws = Vec::with_capacity(total);
    let mut failures = 0;
    for r in results {
        match r {
            Ok(u) => draws.push(u),
            Err(e) => {
                log::debug!("utility draw failed: {e}");
                failures += 1;
            }
        }
    }
    if draws.is_empty() || failures as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(Error::ExcessFailures { failed: failures, total });
    }
    Ok(UtilitySample { draws, failures, mode })
}

/// `m` utility draws, draw `i` using stream `(seed, [UTILITY, i])`.
pub fn estimate_utility(
    spec: &ModelSpec,
    layout: &Layout,
    prior: &PriorMoments,
    method: PosteriorMethod,
    m: usize,
    mode: Summary,
    seed: u64,
) -> Result<(f64, UtilitySample)> {
    if m < 1 {
        return Err(Error::InvalidParameter("at least one utility draw is needed".into()));
    }
    let results: Vec<Result<f64>> = (0..m)
        .into_par_iter()
        .map(|i| utility_draw(spec, layout, prior, method, &mut rng::stream(seed, &[label::UTILITY, i as u64])))
        .collect();
    let sample = collect_draws(results, mode)?;
    Ok((sample.summary(), sample))
}
