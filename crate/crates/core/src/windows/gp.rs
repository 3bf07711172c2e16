//! Zero-mean GP emulator with an additive exponential kernel, tuned by the
//! leave-one-out shortcut.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::cholesky;
use crate::error::{Error, Result};

/// `sum_j exp(-zeta_j |x_j - y_j|)`.
pub fn kernel(x: &[f64], y: &[f64], inv_scales: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() != inv_scales.len() {
        return Err(Error::DimensionMismatch(format!("kernel inputs of length {}, {} and {}", x.len(), y.len(), inv_scales.len())));
    }
    Ok(kernel_unchecked(x, y, inv_scales))
}

fn kernel_unchecked(x: &[f64], y: &[f64], inv_scales: &[f64]) -> f64 {
    x.iter().zip(y).zip(inv_scales).map(|((a, b), z)| (-z * (a - b).abs()).exp()).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub nugget: f64,
    /// Per-dimension inverse length-scales.
    pub inv_scales: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpEmulator {
    pub inputs: Vec<Vec<f64>>,
    pub responses: Vec<f64>,
    pub hyper: GpHyper,
    pub weights: Vec<f64>,
    /// Leave-one-out score at `hyper`; infinite when the nugget is zero.
    pub cv_score: f64,
}

fn gram(inputs: &[Vec<f64>], inv_scales: &[f64]) -> DMatrix<f64> {
    let n = inputs.len();
    DMatrix::from_fn(n, n, |i, j| kernel_unchecked(&inputs[i], &inputs[j], inv_scales))
}

fn check_inputs(inputs: &[Vec<f64>], responses: &[f64]) -> Result<usize> {
    if inputs.len() < 2 {
        return Err(Error::InvalidParameter("at least two training points are needed".into()));
    }
    if inputs.len() != responses.len() {
        return Err(Error::DimensionMismatch(format!("{} inputs vs {} responses", inputs.len(), responses.len())));
    }
    let q = inputs[0].len();
    if q == 0 || inputs.iter().any(|x| x.len() != q) {
        return Err(Error::DimensionMismatch("training inputs must share one positive dimension".into()));
    }
    if responses.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training responses".into()));
    }
    Ok(q)
}

impl GpEmulator {
    /// Emulator with fixed hyperparameters. A zero nugget gives an
    /// interpolator and needs a non-singular kernel matrix.
    pub fn new(inputs: Vec<Vec<f64>>, responses: Vec<f64>, hyper: GpHyper) -> Result<Self> {
        let q = check_inputs(&inputs, &responses)?;
        if hyper.inv_scales.len() != q {
            return Err(Error::DimensionMismatch(format!("{} inverse scales for {q} dimensions", hyper.inv_scales.len())));
        }
        if !(hyper.nugget >= 0.0) || hyper.inv_scales.iter().any(|z| !(*z > 0.0) || !z.is_finite()) {
            return Err(Error::InvalidParameter(format!("invalid GP hyperparameters {hyper:?}")));
        }
        let mut a = gram(&inputs, &hyper.inv_scales);
        for i in 0..a.nrows() {
            a[(i, i)] += hyper.nugget;
        }
        let chol = cholesky(a)?;
        let u = DVector::from_column_slice(&responses);
        let alpha = chol.solve(&u);
        let cv_score = if hyper.nugget > 0.0 { loo_score(&chol.inverse(), &alpha) } else { f64::INFINITY };
        Ok(Self { inputs, responses, hyper, weights: alpha.iter().copied().collect(), cv_score })
    }

    pub fn dim(&self) -> usize {
        self.hyper.inv_scales.len()
    }

    /// Posterior predictive mean at each point.
    pub fn predict(&self, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        points
            .iter()
            .map(|p| {
                if p.len() != self.dim() {
                    return Err(Error::DimensionMismatch(format!("point of length {} for a {}-D emulator", p.len(), self.dim())));
                }
                Ok(self.inputs.iter().zip(&self.weights).map(|(x, a)| a * kernel_unchecked(p, x, &self.hyper.inv_scales)).sum())
            })
            .collect()
    }

    /// Smoother diagonal `S_ii` of `K (K + nugget I)^-1`.
    pub fn smoother_diagonal(&self) -> Result<Vec<f64>> {
        let k = gram(&self.inputs, &self.hyper.inv_scales);
        let mut a = k.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += self.hyper.nugget;
        }
        let s = &k * cholesky(a)?.inverse();
        Ok(s.diagonal().iter().copied().collect())
    }
}

pub fn gp_predict(em: &GpEmulator, points: &[Vec<f64>]) -> Result<Vec<f64>> {
    em.predict(points)
}

/// Mean squared leave-one-out residual, `alpha_i / [A^-1]_ii`.
fn loo_score(a_inv: &DMatrix<f64>, alpha: &DVector<f64>) -> f64 {
    let n = alpha.len();
    (0..n).map(|i| (alpha[i] / a_inv[(i, i)]).powi(2)).sum::<f64>() / n as f64
}

/// Candidate hyperparameters: absolute nuggets and per-dimension inverse
/// length-scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaGrid {
    pub nuggets: Vec<f64>,
    pub inv_scales: Vec<Vec<f64>>,
}

/// Largest product grid searched exhaustively; bigger grids are searched
/// one coordinate at a time.
const FULL_GRID_LIMIT: usize = 20_000;

impl ZetaGrid {
    /// Nuggets `{0, 1e-4, ..., 1} * var(responses)` and length-scales from
    /// 0.1 to 10 times the median pairwise distance in each dimension, on
    /// `levels` log-spaced values.
    pub fn default_for(inputs: &[Vec<f64>], responses: &[f64], levels: usize) -> Result<Self> {
        let q = check_inputs(inputs, responses)?;
        let n = responses.len() as f64;
        let mean = responses.iter().sum::<f64>() / n;
        let mut var = responses.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        if !(var > 0.0) {
            var = (mean * mean).max(1.0);
        }
        let mut nuggets = vec![0.0];
        nuggets.extend((-4..=0).map(|e| 10f64.powi(e) * var));
        let levels = levels.max(2);
        let mut inv_scales = Vec::with_capacity(q);
        for j in 0..q {
            let mut d: Vec<f64> = Vec::new();
            for a in 0..inputs.len() {
                for b in a + 1..inputs.len() {
                    let v = (inputs[a][j] - inputs[b][j]).abs();
                    if v > 0.0 {
                        d.push(v);
                    }
                }
            }
            d.sort_by(f64::total_cmp);
            let med = if d.is_empty() { 1.0 } else { d[d.len() / 2] };
            let (lo, hi) = ((0.1 * med).ln(), (10.0 * med).ln());
            inv_scales.push((0..levels).map(|i| 1.0 / (lo + (hi - lo) * i as f64 / (levels - 1) as f64).exp()).collect());
        }
        Ok(Self { nuggets, inv_scales })
    }
}

fn score(inputs: &[Vec<f64>], responses: &[f64], nugget: f64, inv_scales: &[f64]) -> f64 {
    // a zero nugget makes S = I, so the shortcut is undefined
    if !(nugget > 0.0) {
        return f64::INFINITY;
    }
    let mut a = gram(inputs, inv_scales);
    for i in 0..a.nrows() {
        a[(i, i)] += nugget;
    }
    let Some(chol) = nalgebra::Cholesky::new(a) else {
        return f64::INFINITY;
    };
    let alpha = chol.solve(&DVector::from_column_slice(responses));
    let s = loo_score(&chol.inverse(), &alpha);
    if s.is_finite() {
        s
    } else {
        f64::INFINITY
    }
}

/// CV-tuned emulator: best grid point, then one coordinate-descent pass of
/// geometric steps inside the grid bounds.
pub fn fit_gp(inputs: Vec<Vec<f64>>, responses: Vec<f64>, grid: &ZetaGrid) -> Result<GpEmulator> {
    let q = check_inputs(&inputs, &responses)?;
    if grid.nuggets.is_empty() || grid.inv_scales.len() != q || grid.inv_scales.iter().any(Vec::is_empty) {
        return Err(Error::InvalidParameter("hyperparameter grid is empty or has the wrong dimension".into()));
    }
    let eval = |h: &[f64]| score(&inputs, &responses, h[0], &h[1..]);

    // axes[0] is the nugget, axes[j] the j-th inverse scale
    let mut axes: Vec<Vec<f64>> = vec![grid.nuggets.clone()];
    axes.extend(grid.inv_scales.iter().cloned());
    let total: usize = axes.iter().map(Vec::len).product();

    let mut best: Vec<f64> = axes.iter().map(|a| a[a.len() / 2]).collect();
    let mut best_score = f64::INFINITY;
    if total <= FULL_GRID_LIMIT {
        for h in axes.iter().map(|a| a.iter().copied()).multi_cartesian_product() {
            let s = eval(&h);
            if s < best_score {
                best_score = s;
                best = h;
            }
        }
    } else {
        best_score = eval(&best);
        for _ in 0..3 {
            for d in 0..axes.len() {
                for &v in &axes[d] {
                    let mut h = best.clone();
                    h[d] = v;
                    let s = eval(&h);
                    if s < best_score {
                        best_score = s;
                        best = h;
                    }
                }
            }
        }
    }
    if !best_score.is_finite() {
        return Err(Error::FitFailed("no hyperparameter candidate gave a usable leave-one-out score".into()));
    }

    // local refinement with half-grid geometric steps
    for d in 0..axes.len() {
        let positive: Vec<f64> = axes[d].iter().copied().filter(|v| *v > 0.0).collect();
        let (Some(&lo), Some(&hi)) = (positive.iter().min_by(|a, b| a.total_cmp(b)), positive.iter().max_by(|a, b| a.total_cmp(b))) else {
            continue;
        };
        let ratio = if positive.len() > 1 { (hi / lo).powf(1.0 / (positive.len() - 1) as f64).sqrt() } else { 2f64.sqrt() };
        for f in [ratio, 1.0 / ratio] {
            let mut h = best.clone();
            h[d] = (h[d] * f).clamp(lo, hi);
            let s = eval(&h);
            if s < best_score {
                best_score = s;
                best = h;
            }
        }
    }
    GpEmulator::new(inputs, responses, GpHyper { nugget: best[0], inv_scales: best[1..].to_vec() })
}
