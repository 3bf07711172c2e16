//! River and reef design problems: turning designs and window positions
//! into model layouts and utility draws.

use std::collections::BTreeMap;
use std::path::Path;

use itertools::Itertools;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::covariance::Geometry;
use crate::error::{Error, Result};
use crate::model::{CovariateScaler, Layout, ModelSpec, PriorMoments, INTERCEPT};
use crate::network::{SegmentId, Site, SiteId, StreamNetwork};
use crate::rng::{self, label};
use crate::search::DesignUtility;
use crate::transect::{coarsen_to_grid, jitter_points, transect_points, Bounds, ReefSurface, Transect};
use crate::utility::{estimate_utility, PosteriorMethod, Summary, UtilitySample};
use crate::windows::WindowUtility;

/// Neighbours used when interpolating covariates at new locations.
pub const INTERPOLATION_K: usize = 3;

/// Model, prior summary and posterior method shared by every evaluation.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub spec: ModelSpec,
    pub prior: PriorMoments,
    pub method: PosteriorMethod,
    pub summary: Summary,
}

impl Evaluator {
    pub fn new(spec: ModelSpec, method: PosteriorMethod, summary: Summary, seed: u64) -> Self {
        let prior = spec.prior_moments(rng::derive(seed, &[label::PRIOR_MOMENTS]));
        Self { spec, prior, method, summary }
    }

    pub fn sample(&self, layout: &Layout, m: usize, seed: u64) -> Result<UtilitySample> {
        Ok(estimate_utility(&self.spec, layout, &self.prior, self.method, m, self.summary, seed)?.1)
    }
}

pub struct RiverProblem {
    pub net: StreamNetwork,
    pub scaler: CovariateScaler,
    pub eval: Evaluator,
}

impl RiverProblem {
    pub fn new(net: StreamNetwork, eval: Evaluator) -> Result<Self> {
        for name in eval.spec.fixed_effects.iter().filter(|n| n.as_str() != INTERCEPT) {
            net.covariate_index(name)?;
        }
        let scaler = CovariateScaler::for_network(&eval.spec.fixed_effects, &net);
        Ok(Self { net, scaler, eval })
    }

    pub fn layout(&self, sites: &[SiteId]) -> Result<Layout> {
        self.eval.spec.check_covariates(&self.net, sites)?;
        Layout::from_network(&self.eval.spec, &self.net, sites, &self.scaler)
    }

    pub fn sample(&self, sites: &[SiteId], m: usize, seed: u64) -> Result<UtilitySample> {
        self.eval.sample(&self.layout(sites)?, m, seed)
    }
}

/// Discrete search over sites: candidate index `i` is `sites[i]`.
pub struct RiverSearch<'a> {
    pub problem: &'a RiverProblem,
    pub sites: Vec<SiteId>,
}

impl DesignUtility for RiverSearch<'_> {
    fn draws(&self, design: &[usize], count: usize, seed: u64) -> Result<Vec<f64>> {
        let mut ids: Vec<SiteId> = design.iter().map(|&i| self.sites[i]).collect();
        ids.sort_unstable();
        Ok(self.problem.sample(&ids, count, seed)?.draws)
    }
}

/// Point on a neighbourhood polyline, listed from upstream to downstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub segment: SegmentId,
    pub offset: f64,
    pub easting: f64,
    pub northing: f64,
}

/// A stretch of one flow path; positions are metres downstream of the
/// first anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbourhood {
    pub name: String,
    pub anchors: Vec<Anchor>,
}

#[derive(Debug, Deserialize, Serialize)]
struct AnchorRow {
    window: String,
    segment_id: SegmentId,
    offset_m: f64,
    easting: f64,
    northing: f64,
}

impl Neighbourhood {
    /// `(segment, offset)` reached `s` metres downstream of `(segment, offset)`.
    fn walk(net: &StreamNetwork, mut segment: SegmentId, mut offset: f64, mut s: f64) -> Result<(SegmentId, f64)> {
        loop {
            if s <= offset {
                return Ok((segment, offset - s));
            }
            s -= offset;
            match net.segment(segment)?.downstream {
                Some(d) => {
                    segment = d;
                    offset = net.segment(d)?.length;
                }
                None => return Err(Error::InvalidNetwork(format!("walked {s} m past the outlet of segment {segment}"))),
            }
        }
    }

    /// Arc positions of the anchors; errors when they are not on one flow path.
    pub fn anchor_positions(&self, net: &StreamNetwork) -> Result<Vec<f64>> {
        let first = self.anchors.first().ok_or_else(|| Error::EmptyInput(format!("neighbourhood {}", self.name)))?;
        let mut out = vec![0.0];
        let mut prev = 0.0;
        for a in &self.anchors[1..] {
            let pos = Self::downstream_distance(net, first, a).ok_or_else(|| {
                Error::InvalidNetwork(format!("neighbourhood {} anchors are not on one downstream path", self.name))
            })?;
            if pos < prev {
                return Err(Error::InvalidNetwork(format!("neighbourhood {} anchors are not ordered downstream", self.name)));
            }
            prev = pos;
            out.push(pos);
        }
        Ok(out)
    }

    fn downstream_distance(net: &StreamNetwork, from: &Anchor, to: &Anchor) -> Option<f64> {
        let mut seg = from.segment;
        let mut acc = 0.0;
        let mut off = from.offset;
        loop {
            if seg == to.segment && to.offset <= off + 1e-9 {
                return Some(acc + off - to.offset);
            }
            acc += off;
            let d = net.segment(seg).ok()?.downstream?;
            seg = d;
            off = net.segment(d).ok()?.length;
        }
    }

    pub fn length(&self, net: &StreamNetwork) -> Result<f64> {
        Ok(*self.anchor_positions(net)?.last().expect("anchors"))
    }

    /// Network position and interpolated coordinates `s` metres along.
    pub fn locate(&self, net: &StreamNetwork, s: f64) -> Result<(SegmentId, f64, (f64, f64))> {
        let pos = self.anchor_positions(net)?;
        let total = *pos.last().expect("anchors");
        if !(s >= -1e-9 && s <= total + 1e-9) {
            return Err(Error::OutOfDomain { window: self.name.clone(), value: s, lo: 0.0, hi: total });
        }
        let s = s.clamp(0.0, total);
        let a0 = &self.anchors[0];
        let (seg, off) = Self::walk(net, a0.segment, a0.offset, s)?;
        let i = pos.iter().rposition(|&p| p <= s).unwrap_or(0).min(pos.len().saturating_sub(2));
        let (a, b) = (&self.anchors[i], &self.anchors[(i + 1).min(self.anchors.len() - 1)]);
        let span = pos.get(i + 1).copied().unwrap_or(pos[i]) - pos[i];
        let f = if span > 0.0 { (s - pos[i]) / span } else { 0.0 };
        Ok((seg, off, (a.easting + f * (b.easting - a.easting), a.northing + f * (b.northing - a.northing))))
    }

    pub fn read_csv(path: &Path) -> Result<Vec<Neighbourhood>> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f);
        let mut map: BTreeMap<String, Vec<Anchor>> = BTreeMap::new();
        let mut order = Vec::new();
        for row in rdr.deserialize::<AnchorRow>() {
            let r = row?;
            if !map.contains_key(&r.window) {
                order.push(r.window.clone());
            }
            map.entry(r.window).or_default().push(Anchor { segment: r.segment_id, offset: r.offset_m, easting: r.easting, northing: r.northing });
        }
        Ok(order.into_iter().map(|n| Neighbourhood { anchors: map.remove(&n).expect("window"), name: n }).collect())
    }

    pub fn write_csv(all: &[Neighbourhood], path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(f);
        for n in all {
            for a in &n.anchors {
                w.serialize(AnchorRow { window: n.name.clone(), segment_id: a.segment, offset_m: a.offset, easting: a.easting, northing: a.northing })?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// One new site per neighbourhood, added to an existing river design.
pub struct RiverWindows<'a> {
    pub problem: &'a RiverProblem,
    pub neighbourhoods: Vec<Neighbourhood>,
    pub current: Vec<SiteId>,
}

impl RiverWindows<'_> {
    /// Site ids used for window positions; chosen above every real id.
    fn virtual_id(&self, j: usize) -> SiteId {
        SiteId::MAX - j as u64
    }

    /// Network with one site per window at `point`, covariates interpolated
    /// from the real sites.
    pub fn augmented(&self, point: &[f64]) -> Result<(StreamNetwork, Vec<SiteId>)> {
        if point.len() != self.neighbourhoods.len() {
            return Err(Error::DimensionMismatch(format!("{} positions for {} windows", point.len(), self.neighbourhoods.len())));
        }
        let net = &self.problem.net;
        let mut extra = Vec::with_capacity(point.len());
        for (j, (nb, &s)) in self.neighbourhoods.iter().zip(point).enumerate() {
            let (segment, offset, (e, n)) = nb.locate(net, s)?;
            let covariates = net
                .covariate_names()
                .iter()
                .map(|c| net.interpolate_covariate((e, n), c, INTERPOLATION_K))
                .collect::<Result<Vec<f64>>>()?;
            extra.push(Site { id: self.virtual_id(j), segment, offset, easting: e, northing: n, covariates });
        }
        let mut ids = self.current.clone();
        ids.extend(extra.iter().map(|s| s.id));
        Ok((net.with_sites(extra)?, ids))
    }

    pub fn layout(&self, point: &[f64]) -> Result<Layout> {
        let (aug, ids) = self.augmented(point)?;
        Layout::from_network(&self.problem.eval.spec, &aug, &ids, &self.problem.scaler)
    }
}

impl WindowUtility for RiverWindows<'_> {
    fn summary(&self, point: &[f64], m: usize, seed: u64) -> Result<f64> {
        Ok(self.problem.eval.sample(&self.layout(point)?, m, seed)?.summary())
    }
}

/// Binomial reef model over transect images, with the random effect on a
/// coarse grid of cells.
pub struct ReefProblem {
    pub surface: ReefSurface,
    pub bounds: Bounds,
    pub grid: (usize, usize),
    pub scaler: CovariateScaler,
    pub eval: Evaluator,
}

pub const DEPTH: &str = "depth";

impl ReefProblem {
    pub fn new(surface: ReefSurface, grid: (usize, usize), eval: Evaluator) -> Result<Self> {
        if let Some(bad) = eval.spec.fixed_effects.iter().find(|n| n.as_str() != INTERCEPT && n.as_str() != DEPTH) {
            return Err(Error::UnknownCovariate(bad.clone()));
        }
        let depths: Vec<f64> = surface.points.iter().map(|p| p.2).collect();
        let scaler = CovariateScaler::fit(&eval.spec.fixed_effects, |_| depths.clone());
        let bounds = surface.bounds();
        Ok(Self { surface, bounds, grid, scaler, eval })
    }

    /// Layout of the images of `transects`. Transects with a positive
    /// radius are jittered from stream `jitter_seed`; images leaving the reef
    /// are clamped to its bounds. Returns the number of clamped images.
    pub fn layout(&self, transects: &[Transect], jitter_seed: u64) -> Result<(Layout, usize)> {
        let mut points = Vec::new();
        for (i, t) in transects.iter().enumerate() {
            let base = transect_points(t)?;
            let moved = jitter_points(&base, t.radius, &mut rng::stream(jitter_seed, &[label::JITTER, i as u64]))?;
            points.extend(moved);
        }
        let (points, clamped) = self.bounds.clamp(&points);
        if clamped > 0 {
            log::debug!("{clamped} images clamped to the reef bounds");
        }
        let grid = coarsen_to_grid(&points, &self.bounds, self.grid.0, self.grid.1)?;
        let occupied: Vec<usize> = grid.cells.iter().copied().sorted_unstable().dedup().collect();
        let slot: BTreeMap<usize, usize> = occupied.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let centres: Vec<(f64, f64)> = occupied.iter().map(|&c| grid.centres[c]).collect();
        let depth: Vec<f64> = points.iter().map(|&p| self.surface.depth_at(p)).collect::<Result<_>>()?;
        let spec = &self.eval.spec;
        let mut x = DMatrix::zeros(points.len(), spec.fixed_effects.len());
        for (j, name) in spec.fixed_effects.iter().enumerate() {
            for i in 0..points.len() {
                x[(i, j)] = if name == INTERCEPT { 1.0 } else { self.scaler.apply(DEPTH, depth[i]) };
            }
        }
        let latent_of = grid.cells.iter().map(|c| slot[c]).collect();
        Ok((Layout::new(x, Geometry::from_points(&centres), Some(latent_of))?, clamped))
    }
}

/// Discrete search over candidate transects.
pub struct ReefSearch<'a> {
    pub problem: &'a ReefProblem,
    pub candidates: Vec<Transect>,
}

impl DesignUtility for ReefSearch<'_> {
    fn draws(&self, design: &[usize], count: usize, seed: u64) -> Result<Vec<f64>> {
        let mut idx = design.to_vec();
        idx.sort_unstable();
        let ts: Vec<Transect> = idx.iter().map(|&i| self.candidates[i]).collect();
        let (layout, _) = self.problem.layout(&ts, seed)?;
        Ok(self.problem.eval.sample(&layout, count, seed)?.draws)
    }
}

/// Radius windows around a fixed set of transects; the summary is averaged
/// over `replicates` jittered placements.
pub struct ReefWindows<'a> {
    pub problem: &'a ReefProblem,
    pub transects: Vec<Transect>,
    pub replicates: usize,
}

impl WindowUtility for ReefWindows<'_> {
    fn summary(&self, point: &[f64], m: usize, seed: u64) -> Result<f64> {
        if point.len() != self.transects.len() {
            return Err(Error::DimensionMismatch(format!("{} radii for {} transects", point.len(), self.transects.len())));
        }
        let ts: Vec<Transect> = self.transects.iter().zip(point).map(|(t, &r)| Transect { radius: r, ..*t }).collect();
        let reps = self.replicates.max(1);
        let mut total = 0.0;
        for r in 0..reps {
            let (layout, _) = self.problem.layout(&ts, rng::derive(seed, &[label::JITTER, r as u64]))?;
            total += self.problem.eval.sample(&layout, m, seed)?.summary();
        }
        Ok(total / reps as f64)
    }
}
