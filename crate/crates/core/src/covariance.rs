//! Exponential covariance kernels and assembly of the response covariance
//! from Euclidean, tail-up, tail-down and nugget components.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{SiteId, StreamNetwork};

/// Covariance function of distance. Only the exponential family is valid
/// under total hydrologic distance, so it is the only variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    #[default]
    Exponential,
}

impl Kernel {
    #[inline]
    pub fn eval(self, h: f64, sill: f64, range: f64) -> f64 {
        match self {
            Kernel::Exponential => sill * (-3.0 * h / range).exp(),
        }
    }
}

/// `sill * exp(-3 h / range)`.
pub fn exp_cov(h: f64, sill: f64, range: f64) -> Result<f64> {
    if h < 0.0 {
        return Err(Error::NegativeDistance(h));
    }
    if !(range > 0.0) {
        return Err(Error::InvalidParameter(format!("range must be positive, got {range}")));
    }
    Ok(Kernel::Exponential.eval(h, sill, range))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovParams {
    pub partial_sill: f64,
    pub range: f64,
}

impl CovParams {
    pub fn new(partial_sill: f64, range: f64) -> Self {
        Self { partial_sill, range }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    #[serde(alias = "euc")]
    Euclidean,
    #[serde(alias = "tu")]
    TailUp,
    #[serde(alias = "td")]
    TailDown,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Euclidean, Component::TailUp, Component::TailDown];

    pub fn tag(self) -> &'static str {
        match self {
            Component::Euclidean => "euc",
            Component::TailUp => "tu",
            Component::TailDown => "td",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CovSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub euclidean: Option<CovParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_up: Option<CovParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_down: Option<CovParams>,
    #[serde(default)]
    pub nugget: f64,
    #[serde(default)]
    pub kernel: Kernel,
}

impl CovSpec {
    pub fn component(&self, c: Component) -> Option<&CovParams> {
        match c {
            Component::Euclidean => self.euclidean.as_ref(),
            Component::TailUp => self.tail_up.as_ref(),
            Component::TailDown => self.tail_down.as_ref(),
        }
    }

    pub fn component_mut(&mut self, c: Component) -> &mut Option<CovParams> {
        match c {
            Component::Euclidean => &mut self.euclidean,
            Component::TailUp => &mut self.tail_up,
            Component::TailDown => &mut self.tail_down,
        }
    }

    /// Present components in canonical order.
    pub fn components(&self) -> impl Iterator<Item = (Component, &CovParams)> {
        Component::ALL.into_iter().filter_map(|c| self.component(c).map(|p| (c, p)))
    }

    /// Copy of `self` keeping only component `c` and no nugget.
    pub fn only(&self, c: Component) -> CovSpec {
        let mut out = CovSpec { kernel: self.kernel, ..Default::default() };
        *out.component_mut(c) = self.component(c).copied();
        out
    }

    pub fn validate(&self) -> Result<()> {
        for (c, p) in self.components() {
            if !(p.partial_sill >= 0.0) || !p.partial_sill.is_finite() {
                return Err(Error::InvalidParameter(format!("{} partial sill {}", c.tag(), p.partial_sill)));
            }
            if !(p.range > 0.0) || !p.range.is_finite() {
                return Err(Error::InvalidParameter(format!("{} range {}", c.tag(), p.range)));
            }
        }
        if !(self.nugget >= 0.0) || !self.nugget.is_finite() {
            return Err(Error::InvalidParameter(format!("nugget {}", self.nugget)));
        }
        if self.nugget == 0.0 && self.components().all(|(_, p)| p.partial_sill == 0.0) {
            return Err(Error::InvalidParameter("covariance has no positive variance".into()));
        }
        Ok(())
    }
}

/// Distance structures for one set of locations, computed once and reused
/// for every covariance parameter value.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub euclidean: DMatrix<f64>,
    /// Hydrologic distances; absent for planar (non-network) layouts.
    pub hydrologic: Option<DMatrix<f64>>,
    /// Tail-up weights, zero for flow-unconnected pairs.
    pub tailup_weight: Option<DMatrix<f64>>,
}

impl Geometry {
    pub fn from_network(net: &StreamNetwork, sites: &[SiteId]) -> Result<Self> {
        let n = sites.len();
        let mut euc = DMatrix::zeros(n, n);
        let mut hyd = DMatrix::zeros(n, n);
        let mut w = DMatrix::zeros(n, n);
        for i in 0..n {
            net.site(sites[i])?;
            w[(i, i)] = 1.0;
            for j in (i + 1)..n {
                let g = net.pair(sites[i], sites[j])?;
                euc[(i, j)] = g.euclidean;
                euc[(j, i)] = g.euclidean;
                hyd[(i, j)] = g.hydrologic;
                hyd[(j, i)] = g.hydrologic;
                w[(i, j)] = g.weight;
                w[(j, i)] = g.weight;
            }
        }
        Ok(Self { euclidean: euc, hydrologic: Some(hyd), tailup_weight: Some(w) })
    }

    pub fn from_points(points: &[(f64, f64)]) -> Self {
        let n = points.len();
        let euc = DMatrix::from_fn(n, n, |i, j| {
            (points[i].0 - points[j].0).hypot(points[i].1 - points[j].1)
        });
        Self { euclidean: euc, hydrologic: None, tailup_weight: None }
    }

    pub fn len(&self) -> usize {
        self.euclidean.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Spatial random-effect covariance (all components, no nugget).
    pub fn sigma_z(&self, spec: &CovSpec) -> Result<DMatrix<f64>> {
        let n = self.len();
        let mut out = DMatrix::zeros(n, n);
        for (c, p) in spec.components() {
            let (dist, weight) = match c {
                Component::Euclidean => (&self.euclidean, None),
                Component::TailDown => (self.hydro(c)?, None),
                Component::TailUp => (self.hydro(c)?, self.tailup_weight.as_ref()),
            };
            for j in 0..n {
                for i in 0..n {
                    let w = weight.map_or(1.0, |w| w[(i, j)]);
                    if w != 0.0 {
                        out[(i, j)] += w * spec.kernel.eval(dist[(i, j)], p.partial_sill, p.range);
                    }
                }
            }
        }
        Ok(out)
    }

    /// `sigma_z + nugget * I`, without a definiteness check.
    pub fn sigma(&self, spec: &CovSpec) -> Result<DMatrix<f64>> {
        let mut s = self.sigma_z(spec)?;
        for i in 0..s.nrows() {
            s[(i, i)] += spec.nugget;
        }
        Ok(s)
    }

    fn hydro(&self, c: Component) -> Result<&DMatrix<f64>> {
        self.hydrologic.as_ref().ok_or_else(|| {
            Error::InvalidParameter(format!("{} component needs a stream-network layout", c.tag()))
        })
    }
}

/// Cholesky factor of a covariance matrix, reporting failure instead of
/// regularising.
pub fn cholesky(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = m.nrows();
    Cholesky::new(m).ok_or_else(|| Error::NotPositiveDefinite(format!("{n}x{n} covariance")))
}

/// Full response covariance for the given network sites.
pub fn assemble_sigma(net: &StreamNetwork, sites: &[SiteId], spec: &CovSpec) -> Result<DMatrix<f64>> {
    if sites.is_empty() {
        return Err(Error::EmptyInput("design sites".into()));
    }
    spec.validate()?;
    let sigma = Geometry::from_network(net, sites)?.sigma(spec)?;
    cholesky(sigma.clone())?;
    Ok(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Segment, Site};

    fn toy() -> StreamNetwork {
        let segments = vec![
            Segment { id: 1, downstream: Some(3), length: 10.0, shreve_order: 1 },
            Segment { id: 2, downstream: Some(3), length: 10.0, shreve_order: 1 },
            Segment { id: 3, downstream: None, length: 20.0, shreve_order: 2 },
        ];
        let s = |id, segment, offset: f64, e: f64| Site {
            id,
            segment,
            offset,
            easting: e,
            northing: 0.0,
            covariates: vec![],
        };
        let sites = vec![s(1, 1, 2.0, 0.0), s(2, 2, 3.0, 4.0), s(3, 3, 15.0, 1.0), s(4, 3, 15.0, 1.0)];
        StreamNetwork::new(segments, sites, vec![]).unwrap()
    }

    #[test]
    fn exp_cov_values() {
        assert_eq!(exp_cov(0.0, 2.5, 7.0).unwrap(), 2.5);
        assert!((exp_cov(4.0, 1.0, 4.0).unwrap() - 0.049787068367863944).abs() < 1e-15);
        assert_eq!(exp_cov(3.0, 0.0, 1.0).unwrap(), 0.0);
        assert!(matches!(exp_cov(-1.0, 1.0, 1.0), Err(Error::NegativeDistance(_))));
    }

    #[test]
    fn nugget_only_is_scaled_identity() {
        let spec = CovSpec {
            tail_down: Some(CovParams::new(0.0, 5.0)),
            nugget: 0.3,
            ..Default::default()
        };
        let s = assemble_sigma(&toy(), &[1, 2, 3], &spec).unwrap();
        assert_eq!(s, DMatrix::identity(3, 3) * 0.3);
    }

    #[test]
    fn tail_up_zero_on_unconnected() {
        let spec = CovSpec { tail_up: Some(CovParams::new(1.0, 50.0)), ..Default::default() };
        let s = assemble_sigma(&toy(), &[1, 2], &spec).unwrap();
        assert_eq!(s[(0, 1)], 0.0);
        assert_eq!(s[(1, 0)], 0.0);
        assert_eq!(s[(0, 0)], 1.0);
    }

    #[test]
    fn tail_down_matches_scalar_kernel() {
        let net = toy();
        let sites = [1, 2, 3];
        let h12 = net.hydrologic_distance(1, 2).unwrap();
        let spec = CovSpec { tail_down: Some(CovParams::new(1.0, 3.0 * h12)), ..Default::default() };
        let s = assemble_sigma(&net, &sites, &spec).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let h = net.hydrologic_distance(sites[i], sites[j]).unwrap();
                assert_eq!(s[(i, j)], exp_cov(h, 1.0, 3.0 * h12).unwrap());
            }
        }
        assert!((s[(0, 1)] - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn duplicated_sites_without_nugget_not_pd() {
        let spec = CovSpec { tail_down: Some(CovParams::new(1.0, 10.0)), ..Default::default() };
        assert!(matches!(assemble_sigma(&toy(), &[3, 4], &spec), Err(Error::NotPositiveDefinite(_))));
        let with_nugget = CovSpec { nugget: 0.1, ..spec };
        assert!(assemble_sigma(&toy(), &[3, 4], &with_nugget).is_ok());
    }

    #[test]
    fn planar_layout_rejects_network_components() {
        let g = Geometry::from_points(&[(0.0, 0.0), (1.0, 0.0)]);
        let spec = CovSpec { tail_down: Some(CovParams::new(1.0, 1.0)), ..Default::default() };
        assert!(g.sigma(&spec).is_err());
    }

    #[test]
    fn invalid_spec_rejected() {
        let zero = CovSpec::default();
        assert!(zero.validate().is_err());
        let bad = CovSpec { euclidean: Some(CovParams::new(1.0, 0.0)), ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
