//! Sampling windows: utility grid over window positions, GP emulation,
//! normalised efficiency and conditional slices.

pub mod gp;

use std::io::Write;
use std::path::Path;

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, label};

pub use gp::{fit_gp, gp_predict, kernel, GpEmulator, GpHyper, ZetaGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    /// Arc length along a network neighbourhood, in metres.
    Arc,
    /// Plain real interval, e.g. a transect radius.
    Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub name: String,
    pub kind: WindowKind,
    pub lo: f64,
    pub hi: f64,
}

impl Window {
    /// `n` equally spaced levels over the domain, endpoints included.
    pub fn levels(&self, n: usize) -> Vec<f64> {
        if n <= 1 {
            return vec![0.5 * (self.lo + self.hi)];
        }
        (0..n).map(|i| self.lo + (self.hi - self.lo) * i as f64 / (n - 1) as f64).collect()
    }

    pub fn contains(&self, v: f64) -> bool {
        let tol = 1e-9 * (1.0 + self.hi.abs().max(self.lo.abs()));
        v >= self.lo - tol && v <= self.hi + tol
    }
}

/// Product grids over `q` window domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSpace {
    pub windows: Vec<Window>,
    /// Training levels per window.
    pub train_levels: Vec<usize>,
    /// Prediction levels per window.
    pub predict_levels: Vec<usize>,
}

/// Row-major product of per-window levels (last window varies fastest).
pub fn product_grid(levels: &[Vec<f64>]) -> Vec<Vec<f64>> {
    levels.iter().map(|l| l.iter().copied()).multi_cartesian_product().collect()
}

impl WindowSpace {
    pub fn new(windows: Vec<Window>, train_levels: Vec<usize>, predict_levels: Vec<usize>) -> Result<Self> {
        let q = windows.len();
        if q == 0 || train_levels.len() != q || predict_levels.len() != q {
            return Err(Error::DimensionMismatch("one level count per window is needed".into()));
        }
        if windows.iter().any(|w| !(w.lo <= w.hi) || !w.lo.is_finite() || !w.hi.is_finite()) {
            return Err(Error::InvalidParameter("window domains need finite lo <= hi".into()));
        }
        if predict_levels.iter().any(|&n| n < 1) || train_levels.iter().product::<usize>() < 2 {
            return Err(Error::InvalidParameter("the training grid needs at least two points".into()));
        }
        if windows.iter().map(|w| &w.name).unique().count() != q {
            return Err(Error::InvalidParameter("window names must be distinct".into()));
        }
        Ok(Self { windows, train_levels, predict_levels })
    }

    pub fn q(&self) -> usize {
        self.windows.len()
    }

    pub fn training_points(&self) -> Vec<Vec<f64>> {
        product_grid(&self.windows.iter().zip(&self.train_levels).map(|(w, &n)| w.levels(n)).collect::<Vec<_>>())
    }

    pub fn prediction_levels(&self) -> Vec<Vec<f64>> {
        self.windows.iter().zip(&self.predict_levels).map(|(w, &n)| w.levels(n)).collect()
    }
}

/// Summary utility of the design that places one sample at each window
/// position in `point` (together with any existing design).
pub trait WindowUtility: Sync {
    fn summary(&self, point: &[f64], m: usize, seed: u64) -> Result<f64>;
}

impl<F> WindowUtility for F
where
    F: Fn(&[f64], usize, u64) -> Result<f64> + Sync,
{
    fn summary(&self, point: &[f64], m: usize, seed: u64) -> Result<f64> {
        self(point, m, seed)
    }
}

/// Seed shared by every grid evaluation so the responses use common
/// random numbers.
pub fn grid_seed(seed: u64) -> u64 {
    rng::derive(seed, &[label::WINDOW])
}

/// Summary utility at every training point.
pub fn build_utility_grid<U: WindowUtility + ?Sized>(utility: &U, space: &WindowSpace, m: usize, seed: u64) -> Result<Vec<f64>> {
    let s = grid_seed(seed);
    space.training_points().par_iter().map(|p| utility.summary(p, m, s)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "baseline")]
pub enum Normalisation {
    /// Divide by the largest predicted mean.
    Argmax,
    /// Divide by a supplied utility, e.g. that of the current design.
    Baseline(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub t: f64,
    pub points: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencySurface {
    pub windows: Vec<Window>,
    /// Prediction levels per window; points enumerate their product.
    pub levels: Vec<Vec<f64>>,
    pub points: Vec<Vec<f64>>,
    pub f_hat: Vec<f64>,
    pub eff: Vec<f64>,
    pub normalisation: Normalisation,
    pub normaliser: f64,
    pub argmax: usize,
    pub thresholds: Vec<ThresholdSet>,
}

/// Indices with `eff >= t`.
pub fn threshold_set(eff: &[f64], t: f64) -> Vec<usize> {
    eff.iter().enumerate().filter(|(_, &e)| e >= t).map(|(i, _)| i).collect()
}

fn argmax(v: &[f64]) -> usize {
    // first index wins ties
    v.iter().enumerate().fold(0, |b, (i, &x)| if x > v[b] { i } else { b })
}

/// Predicted means and efficiencies over the prediction grid.
pub fn efficiency_surface(
    em: &GpEmulator,
    space: &WindowSpace,
    normalisation: Normalisation,
    thresholds: &[f64],
) -> Result<EfficiencySurface> {
    if em.dim() != space.q() {
        return Err(Error::DimensionMismatch(format!("{}-D emulator for {} windows", em.dim(), space.q())));
    }
    let levels = space.prediction_levels();
    let points = product_grid(&levels);
    let f_hat = em.predict(&points)?;
    let best = argmax(&f_hat);
    let normaliser = match normalisation {
        Normalisation::Argmax => f_hat[best],
        Normalisation::Baseline(b) => b,
    };
    if !(normaliser > 0.0) || !normaliser.is_finite() {
        return Err(Error::InvalidParameter(format!("efficiency normaliser {normaliser} is not positive")));
    }
    let eff: Vec<f64> = f_hat.iter().map(|f| f / normaliser).collect();
    let thresholds = thresholds.iter().map(|&t| ThresholdSet { t, points: threshold_set(&eff, t) }).collect();
    Ok(EfficiencySurface {
        windows: space.windows.clone(),
        levels,
        points,
        f_hat,
        eff,
        normalisation,
        normaliser,
        argmax: best,
        thresholds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlicePoint {
    pub index: usize,
    /// Values of the free windows, in window order.
    pub coords: Vec<f64>,
    pub f_hat: f64,
    pub eff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    /// Pinned windows with their snapped grid values.
    pub fixed: Vec<(String, f64)>,
    pub free: Vec<String>,
    pub points: Vec<SlicePoint>,
    /// Best point of the slice.
    pub argmax: SlicePoint,
    /// Best predicted utility in the slice over the global best.
    pub retained: f64,
}

impl EfficiencySurface {
    pub fn q(&self) -> usize {
        self.windows.len()
    }

    pub fn window_index(&self, name: &str) -> Result<usize> {
        self.windows.iter().position(|w| w.name == name).ok_or_else(|| Error::UnknownWindow(name.to_string()))
    }

    /// Grid index of a point given one level index per window.
    fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.levels).fold(0, |acc, (&i, l)| acc * l.len() + i)
    }

    /// Efficiencies over the unpinned windows with `fixed` windows pinned
    /// to their nearest grid level.
    pub fn conditional_slice(&self, fixed: &[(String, f64)]) -> Result<Slice> {
        let mut pinned: Vec<Option<usize>> = vec![None; self.q()];
        let mut snapped = Vec::with_capacity(fixed.len());
        for (name, v) in fixed {
            let w = self.window_index(name)?;
            let win = &self.windows[w];
            if !v.is_finite() || !win.contains(*v) {
                return Err(Error::OutOfDomain { window: name.clone(), value: *v, lo: win.lo, hi: win.hi });
            }
            if pinned[w].is_some() {
                return Err(Error::InvalidParameter(format!("window `{name}` pinned twice")));
            }
            let l = &self.levels[w];
            let i = (0..l.len()).min_by(|&a, &b| (l[a] - v).abs().total_cmp(&(l[b] - v).abs())).expect("levels");
            pinned[w] = Some(i);
            snapped.push((name.clone(), l[i]));
        }
        let free: Vec<usize> = (0..self.q()).filter(|&w| pinned[w].is_none()).collect();
        if free.is_empty() {
            return Err(Error::InvalidParameter("at least one window must stay free".into()));
        }
        let free_ranges: Vec<Vec<usize>> = free.iter().map(|&w| (0..self.levels[w].len()).collect()).collect();
        let points: Vec<SlicePoint> = free_ranges
            .iter()
            .map(|r| r.iter().copied())
            .multi_cartesian_product()
            .map(|sub| {
                let mut idx: Vec<usize> = pinned.iter().map(|p| p.unwrap_or(0)).collect();
                for (&w, &i) in free.iter().zip(&sub) {
                    idx[w] = i;
                }
                let index = self.flat_index(&idx);
                SlicePoint {
                    index,
                    coords: free.iter().zip(&sub).map(|(&w, &i)| self.levels[w][i]).collect(),
                    f_hat: self.f_hat[index],
                    eff: self.eff[index],
                }
            })
            .collect();
        let best = argmax(&points.iter().map(|p| p.f_hat).collect::<Vec<_>>());
        let argmax = points[best].clone();
        let retained = argmax.f_hat / self.f_hat[self.argmax];
        Ok(Slice { fixed: snapped, free: free.iter().map(|&w| self.windows[w].name.clone()).collect(), points, argmax, retained })
    }

    /// CSV `coord_1..coord_q,f_hat,eff`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut body = (1..=self.q()).map(|j| format!("coord_{j}")).join(",");
        body.push_str(",f_hat,eff\n");
        for ((p, f), e) in self.points.iter().zip(&self.f_hat).zip(&self.eff) {
            body.push_str(&format!("{},{f},{e}\n", p.iter().join(",")));
        }
        write_file(path, body.as_bytes())
    }

    /// CSV `t,point_indices` with indices separated by semicolons.
    pub fn write_contours(&self, path: &Path) -> Result<()> {
        let mut body = String::from("t,point_indices\n");
        for s in &self.thresholds {
            body.push_str(&format!("{},{}\n", s.t, s.points.iter().join(";")));
        }
        write_file(path, body.as_bytes())
    }
}

pub fn conditional_slice(surface: &EfficiencySurface, fixed: &[(String, f64)]) -> Result<Slice> {
    surface.conditional_slice(fixed)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}
