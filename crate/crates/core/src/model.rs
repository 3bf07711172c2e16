//! Model specification, prior sampling, data simulation and likelihoods for
//! the Gaussian (identity link) and binomial (logit link) spatial models.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::covariance::{cholesky, Component, CovParams, CovSpec, Geometry, Kernel};
use crate::error::{Error, Result};
use crate::network::{SiteId, StreamNetwork};
use crate::rng;

/// Linear predictor cap applied before the inverse logit.
pub const ETA_CAP: f64 = 30.0;
/// Success probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]`.
pub const PROB_FLOOR: f64 = 1e-12;
/// Name of the constant column in the design matrix.
pub const INTERCEPT: &str = "intercept";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[serde(alias = "gaussian_identity")]
    Gaussian,
    #[serde(alias = "binomial_logit")]
    Binomial,
}

/// Independent prior on one parameter. A zero spread (or `lo == hi`) is a
/// point mass and removes the parameter from inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum Prior {
    Normal { mean: f64, sd: f64 },
    #[serde(alias = "log_normal")]
    Lognormal { meanlog: f64, sdlog: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Prior {
    pub fn is_point_mass(&self) -> bool {
        match *self {
            Prior::Normal { sd, .. } => sd == 0.0,
            Prior::Lognormal { sdlog, .. } => sdlog == 0.0,
            Prior::Uniform { lo, hi } => lo == hi,
        }
    }

    pub fn point_value(&self) -> f64 {
        match *self {
            Prior::Normal { mean, .. } => mean,
            Prior::Lognormal { meanlog, .. } => meanlog.exp(),
            Prior::Uniform { lo, .. } => lo,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Prior::Normal { mean, sd } => {
                let e: f64 = rng.sample(StandardNormal);
                mean + sd * e
            }
            Prior::Lognormal { meanlog, sdlog } => {
                let e: f64 = rng.sample(StandardNormal);
                (meanlog + sdlog * e).exp()
            }
            Prior::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }

    /// Log density of the working-scale value (`log` of the parameter when
    /// `positive`), including the Jacobian of the transform.
    pub fn log_density_working(&self, w: f64, positive: bool) -> f64 {
        const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
        match (*self, positive) {
            (Prior::Normal { mean, sd }, false) => {
                let u = (w - mean) / sd;
                -0.5 * u * u - sd.ln() - LN_SQRT_2PI
            }
            (Prior::Lognormal { meanlog, sdlog }, true) => {
                let u = (w - meanlog) / sdlog;
                -0.5 * u * u - sdlog.ln() - LN_SQRT_2PI
            }
            (Prior::Uniform { lo, hi }, false) => {
                if w >= lo && w <= hi {
                    -(hi - lo).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            (Prior::Uniform { lo, hi }, true) => {
                let v = w.exp();
                if v >= lo && v <= hi {
                    w - (hi - lo).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            // rejected by ModelSpec validation
            (Prior::Normal { .. }, true) | (Prior::Lognormal { .. }, false) => f64::NAN,
        }
    }

    /// Mean and variance on the working scale when that distribution is Gaussian.
    fn working_gaussian(&self) -> Option<(f64, f64)> {
        match *self {
            Prior::Normal { mean, sd } => Some((mean, sd * sd)),
            Prior::Lognormal { meanlog, sdlog } => Some((meanlog, sdlog * sdlog)),
            Prior::Uniform { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Beta(usize),
    Sill(Component),
    Range(Component),
    Nugget,
}

impl ParamKind {
    pub fn is_positive(self) -> bool {
        !matches!(self, ParamKind::Beta(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub kind: ParamKind,
    pub prior: Prior,
}

/// A realisation of all model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamDraw {
    pub beta: Vec<f64>,
    pub cov: CovSpec,
    /// Spatial random effect on the latent units (binomial family only).
    pub z: Option<DVector<f64>>,
}

/// Complete statistical model: family, fixed effects, covariance structure
/// and priors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub family: Family,
    pub fixed_effects: Vec<String>,
    pub components: Vec<Component>,
    pub kernel: Kernel,
    /// Trials per observation for the binomial family.
    pub trials: u64,
    /// Monte-Carlo draws used to integrate out the random effect.
    pub marginal_draws: usize,
    params: Vec<ParamInfo>,
    free: Vec<usize>,
}

pub const DEFAULT_BETA_PRIOR: Prior = Prior::Normal { mean: 0.0, sd: 2.0 };
pub const DEFAULT_SCALE_PRIOR: Prior = Prior::Lognormal { meanlog: 0.0, sdlog: 1.0 };
pub const DEFAULT_NUGGET_PRIOR: Prior = Prior::Lognormal { meanlog: -1.0, sdlog: 1.0 };

impl ModelSpec {
    /// Model with default priors: `normal(0, 2^2)` on coefficients,
    /// `lognormal(0, 1)` on sills and ranges and `lognormal(-1, 1)` on the nugget.
    pub fn new(family: Family, fixed_effects: Vec<String>, components: Vec<Component>) -> Result<Self> {
        if fixed_effects.is_empty() {
            return Err(Error::Config("model needs at least one fixed effect".into()));
        }
        let mut comps = Vec::new();
        for c in Component::ALL {
            if components.contains(&c) {
                comps.push(c);
            }
        }
        let mut params: Vec<ParamInfo> = fixed_effects
            .iter()
            .enumerate()
            .map(|(i, n)| ParamInfo { name: format!("beta.{n}"), kind: ParamKind::Beta(i), prior: DEFAULT_BETA_PRIOR })
            .collect();
        for &c in &comps {
            params.push(ParamInfo { name: format!("{}.sill", c.tag()), kind: ParamKind::Sill(c), prior: DEFAULT_SCALE_PRIOR });
            params.push(ParamInfo { name: format!("{}.range", c.tag()), kind: ParamKind::Range(c), prior: DEFAULT_SCALE_PRIOR });
        }
        params.push(ParamInfo { name: "nugget".into(), kind: ParamKind::Nugget, prior: DEFAULT_NUGGET_PRIOR });
        let mut spec = Self {
            family,
            fixed_effects,
            components: comps,
            kernel: Kernel::Exponential,
            trials: 20,
            marginal_draws: 50,
            params,
            free: Vec::new(),
        };
        spec.refresh_free();
        Ok(spec)
    }

    pub fn with_prior(mut self, name: &str, prior: Prior) -> Result<Self> {
        self.set_prior(name, prior)?;
        Ok(self)
    }

    pub fn set_prior(&mut self, name: &str, prior: Prior) -> Result<()> {
        let p = self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        validate_prior(name, &prior, p.kind.is_positive())?;
        p.prior = prior;
        self.refresh_free();
        Ok(())
    }

    pub fn set_priors(&mut self, priors: &BTreeMap<String, Prior>) -> Result<()> {
        for (k, v) in priors {
            self.set_prior(k, *v)?;
        }
        Ok(())
    }

    fn refresh_free(&mut self) {
        self.free = (0..self.params.len()).filter(|&i| !self.params[i].prior.is_point_mass()).collect();
    }

    pub fn params(&self) -> &[ParamInfo] {
        &self.params
    }

    pub fn free_params(&self) -> impl Iterator<Item = &ParamInfo> {
        self.free.iter().map(|&i| &self.params[i])
    }

    /// Dimension of the working parameter vector.
    pub fn dim(&self) -> usize {
        self.free.len()
    }

    /// Independent draw from every declared prior.
    pub fn draw_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamDraw {
        let values: Vec<f64> = self.params.iter().map(|p| p.prior.sample(rng)).collect();
        self.draw_from_values(&values)
    }

    fn draw_from_values(&self, values: &[f64]) -> ParamDraw {
        let mut beta = vec![0.0; self.fixed_effects.len()];
        let mut cov = CovSpec { kernel: self.kernel, ..Default::default() };
        for &c in &self.components {
            *cov.component_mut(c) = Some(CovParams::new(0.0, 1.0));
        }
        for (p, &v) in self.params.iter().zip(values) {
            match p.kind {
                ParamKind::Beta(i) => beta[i] = v,
                ParamKind::Sill(c) => cov.component_mut(c).as_mut().expect("component").partial_sill = v,
                ParamKind::Range(c) => cov.component_mut(c).as_mut().expect("component").range = v,
                ParamKind::Nugget => cov.nugget = v,
            }
        }
        ParamDraw { beta, cov, z: None }
    }

    /// Natural-scale values of every parameter, in declaration order.
    pub fn values(&self, draw: &ParamDraw) -> Vec<f64> {
        self.params
            .iter()
            .map(|p| match p.kind {
                ParamKind::Beta(i) => draw.beta[i],
                ParamKind::Sill(c) => draw.cov.component(c).map_or(0.0, |q| q.partial_sill),
                ParamKind::Range(c) => draw.cov.component(c).map_or(1.0, |q| q.range),
                ParamKind::Nugget => draw.cov.nugget,
            })
            .collect()
    }

    /// Free parameters on the working scale (log for positive parameters).
    pub fn to_working(&self, draw: &ParamDraw) -> Vec<f64> {
        let v = self.values(draw);
        self.free
            .iter()
            .map(|&i| if self.params[i].kind.is_positive() { v[i].ln() } else { v[i] })
            .collect()
    }

    /// Inverse of [`Self::to_working`]; point-mass parameters take their fixed value.
    pub fn from_working(&self, w: &[f64]) -> ParamDraw {
        let mut values: Vec<f64> = self.params.iter().map(|p| p.prior.point_value()).collect();
        for (&i, &x) in self.free.iter().zip(w) {
            values[i] = if self.params[i].kind.is_positive() { x.exp() } else { x };
        }
        self.draw_from_values(&values)
    }

    pub fn log_prior_working(&self, w: &[f64]) -> f64 {
        self.free
            .iter()
            .zip(w)
            .map(|(&i, &x)| {
                let p = &self.params[i];
                p.prior.log_density_working(x, p.kind.is_positive())
            })
            .sum()
    }

    /// Gaussian summary of the prior on the working scale. Parameters whose
    /// working-scale prior is Gaussian use exact moments; the others are
    /// moment-matched from `10^4` transformed draws.
    pub fn prior_moments(&self, seed: u64) -> PriorMoments {
        let d = self.dim();
        let mut mean = DVector::zeros(d);
        let mut cov = DMatrix::zeros(d, d);
        for (k, &i) in self.free.iter().enumerate() {
            let p = &self.params[i];
            let (m, v) = p.prior.working_gaussian().unwrap_or_else(|| {
                let mut rng = rng::stream(seed, &[rng::label::PRIOR_MOMENTS, i as u64]);
                let xs: Vec<f64> = (0..10_000)
                    .map(|_| {
                        let v = p.prior.sample(&mut rng);
                        if p.kind.is_positive() {
                            v.ln()
                        } else {
                            v
                        }
                    })
                    .collect();
                let m = xs.iter().sum::<f64>() / xs.len() as f64;
                let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
                (m, var)
            });
            mean[k] = m;
            cov[(k, k)] = v;
        }
        PriorMoments { mean, cov }
    }

    /// Checks that every fixed effect can be read from the network sites.
    pub fn check_covariates(&self, net: &StreamNetwork, sites: &[SiteId]) -> Result<()> {
        for name in self.fixed_effects.iter().filter(|n| n.as_str() != INTERCEPT) {
            for &s in sites {
                net.covariate(s, name)?;
            }
        }
        Ok(())
    }
}

fn validate_prior(name: &str, prior: &Prior, positive: bool) -> Result<()> {
    let ok = match *prior {
        Prior::Normal { mean, sd } => !positive && mean.is_finite() && sd >= 0.0 && sd.is_finite(),
        Prior::Lognormal { meanlog, sdlog } => positive && meanlog.is_finite() && sdlog >= 0.0 && sdlog.is_finite(),
        Prior::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi && (!positive || lo > 0.0),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("prior {prior:?} is invalid for parameter `{name}`")))
    }
}

/// Gaussian approximation of the prior on the working scale.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Per-covariate centring and scaling applied when building design matrices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CovariateScaler {
    pub shift: BTreeMap<String, f64>,
    pub scale: BTreeMap<String, f64>,
}

impl CovariateScaler {
    pub fn fit(names: &[String], values: impl Fn(&str) -> Vec<f64>) -> Self {
        let mut out = Self::default();
        for n in names.iter().filter(|n| n.as_str() != INTERCEPT) {
            let v: Vec<f64> = values(n).into_iter().filter(|x| !x.is_nan()).collect();
            if v.is_empty() {
                continue;
            }
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let sd = if v.len() > 1 {
                (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
            } else {
                0.0
            };
            out.shift.insert(n.clone(), m);
            out.scale.insert(n.clone(), if sd > 0.0 { sd } else { 1.0 });
        }
        out
    }

    pub fn for_network(names: &[String], net: &StreamNetwork) -> Self {
        Self::fit(names, |n| match net.covariate_index(n) {
            Ok(i) => net.sites().iter().map(|s| s.covariates[i]).collect(),
            Err(_) => Vec::new(),
        })
    }

    pub fn apply(&self, name: &str, v: f64) -> f64 {
        let m = self.shift.get(name).copied().unwrap_or(0.0);
        let s = self.scale.get(name).copied().unwrap_or(1.0);
        (v - m) / s
    }
}

/// Design matrix with one column per fixed effect.
pub fn design_matrix(
    fixed_effects: &[String],
    n: usize,
    mut lookup: impl FnMut(usize, &str) -> Result<f64>,
) -> Result<DMatrix<f64>> {
    let mut x = DMatrix::zeros(n, fixed_effects.len());
    for (j, name) in fixed_effects.iter().enumerate() {
        for i in 0..n {
            x[(i, j)] = if name == INTERCEPT { 1.0 } else { lookup(i, name)? };
        }
    }
    Ok(x)
}

/// Everything the likelihood needs to know about one set of observation
/// locations: covariates and latent-unit geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub x: DMatrix<f64>,
    /// Geometry of the latent spatial units.
    pub geometry: Geometry,
    /// Latent unit of each observation; `None` means one unit per observation.
    pub latent_of: Option<Vec<usize>>,
}

impl Layout {
    pub fn new(x: DMatrix<f64>, geometry: Geometry, latent_of: Option<Vec<usize>>) -> Result<Self> {
        let n = x.nrows();
        match &latent_of {
            None if geometry.len() != n => {
                return Err(Error::DimensionMismatch(format!("{} observations vs {} locations", n, geometry.len())))
            }
            Some(idx) if idx.len() != n || idx.iter().any(|&i| i >= geometry.len()) => {
                return Err(Error::DimensionMismatch("latent index out of range".into()))
            }
            _ => {}
        }
        Ok(Self { x, geometry, latent_of })
    }

    /// Layout for network sites, reading covariates from the site table.
    pub fn from_network(spec: &ModelSpec, net: &StreamNetwork, sites: &[SiteId], scaler: &CovariateScaler) -> Result<Self> {
        Self::from_network_with(spec, net, sites, scaler, |_, _| None)
    }

    /// As [`Self::from_network`], letting `override_cov(site, name)` replace
    /// individual covariate values.
    pub fn from_network_with(
        spec: &ModelSpec,
        net: &StreamNetwork,
        sites: &[SiteId],
        scaler: &CovariateScaler,
        override_cov: impl Fn(SiteId, &str) -> Option<Result<f64>>,
    ) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::EmptyInput("design sites".into()));
        }
        let x = design_matrix(&spec.fixed_effects, sites.len(), |i, name| {
            let raw = match override_cov(sites[i], name) {
                Some(v) => v?,
                None => net.covariate(sites[i], name)?,
            };
            Ok(scaler.apply(name, raw))
        })?;
        Self::new(x, Geometry::from_network(net, sites)?, None)
    }

    pub fn n_obs(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_latent(&self) -> usize {
        self.geometry.len()
    }

    /// Covariance of a Gaussian response.
    pub fn response_sigma(&self, cov: &CovSpec) -> Result<DMatrix<f64>> {
        match &self.latent_of {
            None => self.geometry.sigma(cov),
            Some(idx) => {
                let sz = self.geometry.sigma_z(cov)?;
                let n = idx.len();
                let mut s = DMatrix::from_fn(n, n, |i, j| sz[(idx[i], idx[j])]);
                for i in 0..n {
                    s[(i, i)] += cov.nugget;
                }
                Ok(s)
            }
        }
    }

    /// Covariance of the latent random effect, `Sigma_z + nugget * I`.
    pub fn latent_sigma(&self, cov: &CovSpec) -> Result<DMatrix<f64>> {
        self.geometry.sigma(cov)
    }

    fn eta(&self, beta: &[f64]) -> Result<DVector<f64>> {
        if beta.len() != self.x.ncols() {
            return Err(Error::DimensionMismatch(format!("{} coefficients for {} columns", beta.len(), self.x.ncols())));
        }
        Ok(&self.x * DVector::from_column_slice(beta))
    }

    fn latent_at(&self, z: &DVector<f64>, i: usize) -> f64 {
        match &self.latent_of {
            None => z[i],
            Some(idx) => z[idx[i]],
        }
    }
}

/// Inverse logit with the linear predictor capped at `ETA_CAP` and the
/// probability clamped away from 0 and 1.
pub fn inv_logit(eta: f64) -> f64 {
    let e = eta.clamp(-ETA_CAP, ETA_CAP);
    (1.0 / (1.0 + (-e).exp())).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

fn standard_normals<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Draws a response vector from the model at parameters `theta`.
///
/// Gaussian: `y ~ N(X beta, Sigma)`. Binomial: `z ~ N(0, Sigma_z + nugget I)`,
/// `y_k ~ Binomial(n_k, logit^-1(eta_k + z_k))`. A `z` already present in
/// `theta` is used instead of drawing one.
pub fn simulate_data<R: Rng + ?Sized>(spec: &ModelSpec, layout: &Layout, theta: &ParamDraw, rng: &mut R) -> Result<DVector<f64>> {
    let eta = layout.eta(&theta.beta)?;
    match spec.family {
        Family::Gaussian => {
            let chol = cholesky(layout.response_sigma(&theta.cov)?)?;
            let e = standard_normals(rng, layout.n_obs());
            Ok(eta + chol.l() * e)
        }
        Family::Binomial => {
            let z = match &theta.z {
                Some(z) => z.clone(),
                None => {
                    let chol = cholesky(layout.latent_sigma(&theta.cov)?)?;
                    chol.l() * standard_normals(rng, layout.n_latent())
                }
            };
            let mut y = DVector::zeros(layout.n_obs());
            for i in 0..layout.n_obs() {
                let q = inv_logit(eta[i] + layout.latent_at(&z, i));
                let b = Binomial::new(spec.trials, q).map_err(|e| Error::InvalidParameter(e.to_string()))?;
                y[i] = b.sample(rng) as f64;
            }
            Ok(y)
        }
    }
}

/// Exact log density of `y`. The binomial family needs `theta.z`.
pub fn loglik(spec: &ModelSpec, layout: &Layout, theta: &ParamDraw, y: &DVector<f64>) -> Result<f64> {
    if y.len() != layout.n_obs() {
        return Err(Error::DimensionMismatch(format!("{} responses for {} observations", y.len(), layout.n_obs())));
    }
    let eta = layout.eta(&theta.beta)?;
    match spec.family {
        Family::Gaussian => {
            let sigma = layout.response_sigma(&theta.cov)?;
            gaussian_logpdf(&(y - eta), sigma)
        }
        Family::Binomial => {
            let z = theta
                .z
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("binomial likelihood needs the random effect z".into()))?;
            if z.len() != layout.n_latent() {
                return Err(Error::DimensionMismatch(format!("z has {} entries for {} units", z.len(), layout.n_latent())));
            }
            binomial_loglik(spec.trials, layout, &eta, z, y)
        }
    }
}

/// `log N(r; 0, sigma)` via a Cholesky factorisation.
pub fn gaussian_logpdf(r: &DVector<f64>, sigma: DMatrix<f64>) -> Result<f64> {
    const LN_2PI: f64 = 1.837_877_066_409_345_3;
    let chol = cholesky(sigma)?;
    let l = chol.l_dirty();
    let half_logdet: f64 = (0..r.len()).map(|i| l[(i, i)].ln()).sum();
    let mut w = r.clone();
    chol.l_dirty().solve_lower_triangular_mut(&mut w);
    Ok(-0.5 * w.norm_squared() - half_logdet - 0.5 * LN_2PI * r.len() as f64)
}

/// Sum of `ln C(n, y_i)`, after checking every count is in `0..=n`.
fn binomial_constant(trials: u64, y: &DVector<f64>) -> Result<f64> {
    let mut total = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        if yi < 0.0 || yi > trials as f64 || yi.fract() != 0.0 {
            return Err(Error::OutOfSupport(format!("y[{i}] = {yi} with {trials} trials")));
        }
        total += ln_binomial(trials, yi as u64);
    }
    Ok(total)
}

/// `y ln q + (n - y) ln(1 - q)` for `q = inv_logit(eta)`, with the same
/// cap and clamp, computed without forming `1 - q`.
fn binomial_kernel(trials: f64, yi: f64, eta: f64) -> f64 {
    let e = eta.clamp(-ETA_CAP, ETA_CAP);
    // -ln q
    let soft = (-e).exp().ln_1p();
    let (lo, hi) = (PROB_FLOOR.ln(), (-PROB_FLOOR).ln_1p());
    yi * (-soft).clamp(lo, hi) + (trials - yi) * (-e - soft).clamp(lo, hi)
}

fn binomial_loglik(trials: u64, layout: &Layout, eta: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    Ok(binomial_constant(trials, y)? + binomial_kernel_sum(trials, layout, eta, z, y))
}

fn binomial_kernel_sum(trials: u64, layout: &Layout, eta: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let n = trials as f64;
    (0..y.len()).map(|i| binomial_kernel(n, y[i], eta[i] + layout.latent_at(z, i))).sum()
}

/// Monte-Carlo estimate of the binomial marginal log likelihood with the
/// random effect integrated out, using `mz` draws from `rng`.
pub fn marginal_loglik_mc<R: Rng + ?Sized>(
    spec: &ModelSpec,
    layout: &Layout,
    theta: &ParamDraw,
    y: &DVector<f64>,
    mz: usize,
    rng: &mut R,
) -> Result<f64> {
    if mz < 1 {
        return Err(Error::InvalidParameter("marginal likelihood needs at least one draw".into()));
    }
    let normals = marginal_normals(layout, mz, rng);
    marginal_loglik_with(spec, layout, theta, y, &normals)
}

/// Standard-normal vectors used as common random numbers by
/// [`marginal_loglik_with`].
pub fn marginal_normals<R: Rng + ?Sized>(layout: &Layout, mz: usize, rng: &mut R) -> Vec<DVector<f64>> {
    (0..mz).map(|_| standard_normals(rng, layout.n_latent())).collect()
}

/// Marginal log likelihood with `z_i = L eps_i` for the supplied standard
/// normals, averaged in log-sum-exp form.
pub fn marginal_loglik_with(
    spec: &ModelSpec,
    layout: &Layout,
    theta: &ParamDraw,
    y: &DVector<f64>,
    normals: &[DVector<f64>],
) -> Result<f64> {
    if spec.family != Family::Binomial {
        return Err(Error::InvalidParameter("Monte-Carlo marginal likelihood applies to the binomial family".into()));
    }
    if normals.is_empty() {
        return Err(Error::InvalidParameter("marginal likelihood needs at least one draw".into()));
    }
    let eta = layout.eta(&theta.beta)?;
    let chol = cholesky(layout.latent_sigma(&theta.cov)?)?;
    let l = chol.l();
    let constant = binomial_constant(spec.trials, y)?;
    let terms: Vec<f64> = normals.iter().map(|e| binomial_kernel_sum(spec.trials, layout, &eta, &(&l * e), y)).collect();
    Ok(constant + log_mean_exp(&terms))
}

pub fn log_mean_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + (terms.iter().map(|t| (t - m).exp()).sum::<f64>() / terms.len() as f64).ln()
}

/// Log joint density on the working scale: data log likelihood plus log
/// prior. The binomial family uses the supplied common random numbers.
pub fn log_posterior_working(
    spec: &ModelSpec,
    layout: &Layout,
    y: &DVector<f64>,
    normals: &[DVector<f64>],
    w: &[f64],
) -> f64 {
    let lp = spec.log_prior_working(w);
    if !lp.is_finite() {
        return lp;
    }
    let theta = spec.from_working(w);
    let ll = match spec.family {
        Family::Gaussian => loglik(spec, layout, &theta, y),
        Family::Binomial => marginal_loglik_with(spec, layout, &theta, y, normals),
    };
    match ll {
        Ok(v) => v + lp,
        Err(_) => f64::NEG_INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn planar(n: usize) -> Geometry {
        Geometry::from_points(&(0..n).map(|i| (i as f64, 0.0)).collect::<Vec<_>>())
    }

    fn intercept_layout(n: usize) -> Layout {
        Layout::new(DMatrix::from_element(n, 1, 1.0), planar(n), None).unwrap()
    }

    fn gaussian_spec() -> ModelSpec {
        ModelSpec::new(Family::Gaussian, vec![INTERCEPT.into()], vec![Component::Euclidean]).unwrap()
    }

    #[test]
    fn point_mass_priors_return_point_values() {
        let spec = gaussian_spec()
            .with_prior("beta.intercept", Prior::Normal { mean: 1.5, sd: 0.0 })
            .unwrap()
            .with_prior("euc.sill", Prior::Lognormal { meanlog: 0.0, sdlog: 0.0 })
            .unwrap()
            .with_prior("euc.range", Prior::Uniform { lo: 3.0, hi: 3.0 })
            .unwrap()
            .with_prior("nugget", Prior::Lognormal { meanlog: 2.0f64.ln(), sdlog: 0.0 })
            .unwrap();
        let d = spec.draw_prior(&mut stream(1, &[]));
        assert_eq!(d.beta, vec![1.5]);
        assert_eq!(d.cov.euclidean, Some(CovParams::new(1.0, 3.0)));
        assert!((d.cov.nugget - 2.0).abs() < 1e-15);
        assert_eq!(spec.dim(), 0);
    }

    #[test]
    fn binomial_kernel_matches_clamped_form() {
        // ln(1 - q) loses digits as q nears 1, so the direct form is only
        // a good reference for moderate eta
        for k in -100..=100 {
            let eta = k as f64 * 0.1;
            let q = inv_logit(eta);
            let direct = 3.0 * q.ln() + 7.0 * (1.0 - q).ln();
            let fast = binomial_kernel(10.0, 3.0, eta);
            assert!((fast - direct).abs() <= 1e-9 * direct.abs().max(1.0), "eta {eta}: {fast} vs {direct}");
        }
        // beyond the cap the clamp decides
        assert!((binomial_kernel(10.0, 3.0, 40.0) - 7.0 * PROB_FLOOR.ln()).abs() < 1e-9);
        assert!((binomial_kernel(10.0, 3.0, -40.0) - 3.0 * PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn prior_draws_reproducible() {
        let spec = gaussian_spec();
        let a = spec.draw_prior(&mut stream(9, &[3]));
        let b = spec.draw_prior(&mut stream(9, &[3]));
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_prior_mean() {
        let p = Prior::Uniform { lo: 0.0, hi: 1.0 };
        let mut rng = stream(4, &[]);
        let m = (0..10_000).map(|_| p.sample(&mut rng)).sum::<f64>() / 1e4;
        assert!((m - 0.5).abs() < 0.02, "{m}");
    }

    #[test]
    fn rejects_prior_outside_support() {
        let spec = gaussian_spec();
        assert!(spec.clone().with_prior("nugget", Prior::Normal { mean: 0.0, sd: 1.0 }).is_err());
        assert!(spec.clone().with_prior("euc.range", Prior::Uniform { lo: -1.0, hi: 1.0 }).is_err());
        assert!(spec.with_prior("nope", DEFAULT_BETA_PRIOR).is_err());
    }

    #[test]
    fn working_round_trip() {
        let spec = gaussian_spec();
        let d = spec.draw_prior(&mut stream(2, &[]));
        let w = spec.to_working(&d);
        let back = spec.from_working(&w);
        for (a, b) in spec.values(&d).iter().zip(spec.values(&back)) {
            assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn standard_normal_loglik() {
        let spec = gaussian_spec();
        let layout = intercept_layout(1);
        let theta = ParamDraw {
            beta: vec![0.0],
            cov: CovSpec { euclidean: Some(CovParams::new(0.5, 1.0)), nugget: 0.5, ..Default::default() },
            z: None,
        };
        let ll = loglik(&spec, &layout, &theta, &DVector::from_element(1, 0.0)).unwrap();
        assert!((ll + 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn gaussian_loglik_matches_dense_inverse() {
        let spec = gaussian_spec();
        let layout = intercept_layout(3);
        let theta = ParamDraw {
            beta: vec![0.7],
            cov: CovSpec { euclidean: Some(CovParams::new(1.3, 2.0)), nugget: 0.2, ..Default::default() },
            z: None,
        };
        let y = DVector::from_vec(vec![0.1, 1.9, -0.4]);
        let ll = loglik(&spec, &layout, &theta, &y).unwrap();
        let s = layout.response_sigma(&theta.cov).unwrap();
        let r = &y - DVector::from_element(3, 0.7);
        let naive = -0.5 * (r.transpose() * s.clone().try_inverse().unwrap() * &r)[(0, 0)]
            - 0.5 * s.determinant().ln()
            - 1.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((ll - naive).abs() < 1e-8);
    }

    #[test]
    fn binomial_half_probability() {
        let mut spec = ModelSpec::new(Family::Binomial, vec![INTERCEPT.into()], vec![Component::Euclidean]).unwrap();
        spec.trials = 1;
        let layout = intercept_layout(1);
        let theta = ParamDraw {
            beta: vec![0.0],
            cov: CovSpec { euclidean: Some(CovParams::new(1.0, 1.0)), ..Default::default() },
            z: Some(DVector::zeros(1)),
        };
        let ll = loglik(&spec, &layout, &theta, &DVector::from_element(1, 1.0)).unwrap();
        assert!((ll - 0.5f64.ln()).abs() < 1e-12);
        assert!(matches!(
            loglik(&spec, &layout, &theta, &DVector::from_element(1, 2.0)),
            Err(Error::OutOfSupport(_))
        ));
        let no_z = ParamDraw { z: None, ..theta };
        assert!(loglik(&spec, &layout, &no_z, &DVector::from_element(1, 1.0)).is_err());
    }

    #[test]
    fn near_zero_noise_simulation_is_mean() {
        let spec = gaussian_spec();
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, 1.0, -1.0, 1.0, 2.0]);
        let layout = Layout::new(x.clone(), planar(3), None).unwrap();
        let spec = ModelSpec { fixed_effects: vec![INTERCEPT.into(), "a".into()], ..spec };
        let theta = ParamDraw {
            beta: vec![1.0, -2.0],
            cov: CovSpec { euclidean: Some(CovParams::new(0.0, 1.0)), nugget: 1e-12, ..Default::default() },
            z: None,
        };
        let y = simulate_data(&spec, &layout, &theta, &mut stream(3, &[])).unwrap();
        let mu = x * DVector::from_vec(vec![1.0, -2.0]);
        assert!((y - mu).amax() < 1e-4);
    }

    #[test]
    fn saturated_binomial_hits_trials() {
        let spec = ModelSpec::new(Family::Binomial, vec![INTERCEPT.into()], vec![Component::Euclidean]).unwrap();
        let layout = intercept_layout(5);
        let theta = ParamDraw {
            beta: vec![1e6],
            cov: CovSpec { euclidean: Some(CovParams::new(1.0, 1.0)), ..Default::default() },
            z: Some(DVector::zeros(5)),
        };
        let y = simulate_data(&spec, &layout, &theta, &mut stream(5, &[])).unwrap();
        assert!(y.iter().all(|&v| v == 20.0));
    }

    #[test]
    fn binomial_mean_at_zero_predictor() {
        let spec = ModelSpec::new(Family::Binomial, vec![INTERCEPT.into()], vec![Component::Euclidean]).unwrap();
        let layout = intercept_layout(10_000);
        let theta = ParamDraw {
            beta: vec![0.0],
            cov: CovSpec { euclidean: Some(CovParams::new(1.0, 1.0)), ..Default::default() },
            z: Some(DVector::zeros(10_000)),
        };
        let y = simulate_data(&spec, &layout, &theta, &mut stream(6, &[])).unwrap();
        assert!((y.mean() - 10.0).abs() < 0.15);
    }

    #[test]
    fn degenerate_marginal_equals_conditional() {
        let spec = ModelSpec::new(Family::Binomial, vec![INTERCEPT.into()], vec![Component::Euclidean]).unwrap();
        let layout = intercept_layout(3);
        let y = DVector::from_vec(vec![3.0, 12.0, 19.0]);
        let theta = ParamDraw {
            beta: vec![0.4],
            cov: CovSpec { euclidean: Some(CovParams::new(1e-14, 1.0)), nugget: 1e-14, ..Default::default() },
            z: None,
        };
        let m = marginal_loglik_mc(&spec, &layout, &theta, &y, 50, &mut stream(1, &[])).unwrap();
        let c = loglik(&spec, &layout, &ParamDraw { z: Some(DVector::zeros(3)), ..theta.clone() }, &y).unwrap();
        assert!((m - c).abs() < 1e-6);

        let pinned = marginal_loglik_with(&spec, &layout, &theta, &y, &[DVector::zeros(3)]).unwrap();
        assert!((pinned - c).abs() < 1e-12);
        assert!(marginal_loglik_mc(&spec, &layout, &theta, &y, 0, &mut stream(1, &[])).is_err());
    }

    #[test]
    fn log_mean_exp_stable() {
        assert!((log_mean_exp(&[-1000.0, -1000.0]) + 1000.0).abs() < 1e-12);
        assert!((log_mean_exp(&[0.0, 2f64.ln()]) - 1.5f64.ln()).abs() < 1e-12);
    }
}
