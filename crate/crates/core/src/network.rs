//! Branching stream networks: hydrologic distance, flow connectivity,
//! tail-up junction weights and nearest-neighbour covariate interpolation.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type SegmentId = u64;
pub type SiteId = u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: SegmentId,
    /// `None` marks an outlet.
    pub downstream: Option<SegmentId>,
    /// Metres.
    pub length: f64,
    pub shreve_order: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub id: SiteId,
    pub segment: SegmentId,
    /// Metres upstream of the segment's downstream end.
    pub offset: f64,
    pub easting: f64,
    pub northing: f64,
    /// Aligned with [`StreamNetwork::covariate_names`]; `NaN` marks a missing value.
    pub covariates: Vec<f64>,
}

/// Pairwise network geometry between two sites.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairGeometry {
    pub hydrologic: f64,
    pub euclidean: f64,
    pub flow_connected: bool,
    /// Tail-up weight; zero for flow-unconnected pairs.
    pub weight: f64,
}

/// Downstream path of one segment: segment indices from the segment itself to
/// its outlet, with the cumulative length of every segment after the first.
#[derive(Debug, Clone)]
struct OutletPath {
    segments: Vec<usize>,
    cumulative: Vec<f64>,
    position: HashMap<usize, usize>,
}

/// An immutable dendritic network of stream segments with observation sites.
#[derive(Debug, Clone)]
pub struct StreamNetwork {
    segments: Vec<Segment>,
    sites: Vec<Site>,
    covariate_names: Vec<String>,
    segment_index: HashMap<SegmentId, usize>,
    site_index: HashMap<SiteId, usize>,
    paths: Vec<OutletPath>,
}

impl StreamNetwork {
    /// Builds and validates a network.
    ///
    /// Rejects duplicate ids, dangling downstream references, cycles, site
    /// offsets outside their segment and Shreve orders that do not equal the
    /// sum of their immediate upstream orders.
    pub fn new(segments: Vec<Segment>, sites: Vec<Site>, covariate_names: Vec<String>) -> Result<Self> {
        let mut segment_index = HashMap::with_capacity(segments.len());
        for (i, s) in segments.iter().enumerate() {
            if segment_index.insert(s.id, i).is_some() {
                return Err(Error::InvalidNetwork(format!("duplicate segment id {}", s.id)));
            }
            if !(s.length.is_finite() && s.length > 0.0) {
                return Err(Error::InvalidNetwork(format!("segment {} has non-positive length", s.id)));
            }
            if s.shreve_order == 0 {
                return Err(Error::InvalidNetwork(format!("segment {} has Shreve order 0", s.id)));
            }
        }
        let mut downstream = Vec::with_capacity(segments.len());
        for s in &segments {
            downstream.push(match s.downstream {
                None => None,
                Some(d) => Some(*segment_index.get(&d).ok_or(Error::UnknownSegment(d))?),
            });
        }

        let mut paths = Vec::with_capacity(segments.len());
        for start in 0..segments.len() {
            let mut seq = vec![start];
            let mut cumulative = vec![0.0];
            let mut position = HashMap::new();
            position.insert(start, 0);
            let mut cur = start;
            while let Some(next) = downstream[cur] {
                if position.contains_key(&next) {
                    return Err(Error::InvalidNetwork(format!(
                        "cycle through segment {}",
                        segments[next].id
                    )));
                }
                let total = cumulative.last().copied().unwrap_or(0.0) + segments[next].length;
                position.insert(next, seq.len());
                seq.push(next);
                cumulative.push(total);
                cur = next;
            }
            paths.push(OutletPath { segments: seq, cumulative, position });
        }

        let recomputed = shreve_orders(&downstream);
        for (s, order) in segments.iter().zip(&recomputed) {
            if s.shreve_order != *order {
                return Err(Error::InvalidNetwork(format!(
                    "segment {} has Shreve order {} but its upstream orders sum to {}",
                    s.id, s.shreve_order, order
                )));
            }
        }

        let mut site_index = HashMap::with_capacity(sites.len());
        for (i, site) in sites.iter().enumerate() {
            check_site(site, &segments, &segment_index, covariate_names.len())?;
            if site_index.insert(site.id, i).is_some() {
                return Err(Error::InvalidNetwork(format!("duplicate site id {}", site.id)));
            }
        }

        Ok(Self { segments, sites, covariate_names, segment_index, site_index, paths })
    }

    /// Copy of the network with `extra` sites appended.
    pub fn with_sites(&self, extra: Vec<Site>) -> Result<Self> {
        let mut out = self.clone();
        for site in extra {
            check_site(&site, &out.segments, &out.segment_index, out.covariate_names.len())?;
            if out.site_index.insert(site.id, out.sites.len()).is_some() {
                return Err(Error::InvalidNetwork(format!("duplicate site id {}", site.id)));
            }
            out.sites.push(site);
        }
        Ok(out)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn site(&self, id: SiteId) -> Result<&Site> {
        self.site_index.get(&id).map(|&i| &self.sites[i]).ok_or(Error::UnknownSite(id))
    }

    pub fn segment(&self, id: SegmentId) -> Result<&Segment> {
        self.segment_index.get(&id).map(|&i| &self.segments[i]).ok_or(Error::UnknownSegment(id))
    }

    pub fn covariate_index(&self, name: &str) -> Result<usize> {
        self.covariate_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownCovariate(name.to_string()))
    }

    pub fn covariate(&self, site: SiteId, name: &str) -> Result<f64> {
        let idx = self.covariate_index(name)?;
        let v = self.site(site)?.covariates[idx];
        if v.is_nan() {
            return Err(Error::UnknownCovariate(format!("{name} (missing at site {site})")));
        }
        Ok(v)
    }

    /// Shreve orders recomputed from the leaves, aligned with [`Self::segments`].
    pub fn recompute_shreve(&self) -> Vec<u32> {
        let downstream: Vec<Option<usize>> = self
            .segments
            .iter()
            .map(|s| s.downstream.map(|d| self.segment_index[&d]))
            .collect();
        shreve_orders(&downstream)
    }

    fn site_parts(&self, id: SiteId) -> Result<(&Site, usize)> {
        let site = self.site(id)?;
        Ok((site, self.segment_index[&site.segment]))
    }

    /// Full pairwise geometry between two sites on one network component.
    pub fn pair(&self, a: SiteId, b: SiteId) -> Result<PairGeometry> {
        let (sa, ia) = self.site_parts(a)?;
        let (sb, ib) = self.site_parts(b)?;
        let euclidean = (sa.easting - sb.easting).hypot(sa.northing - sb.northing);
        if ia == ib {
            return Ok(PairGeometry {
                hydrologic: (sa.offset - sb.offset).abs(),
                euclidean,
                flow_connected: true,
                weight: 1.0,
            });
        }
        let pa = &self.paths[ia];
        let pb = &self.paths[ib];
        // first segment of a's outlet path that b also drains through
        let (pos_a, pos_b) = pa
            .segments
            .iter()
            .enumerate()
            .find_map(|(i, s)| pb.position.get(s).map(|&j| (i, j)))
            .ok_or(Error::Disconnected(a, b))?;
        let to_end_a = sa.offset + pa.cumulative[pos_a];
        let to_end_b = sb.offset + pb.cumulative[pos_b];
        let junction = &self.segments[pa.segments[pos_a]];

        if pos_b == 0 {
            // b lies on a's downstream path
            Ok(PairGeometry {
                hydrologic: to_end_a - to_end_b,
                euclidean,
                flow_connected: true,
                weight: self.path_weight(ia, ib),
            })
        } else if pos_a == 0 {
            Ok(PairGeometry {
                hydrologic: to_end_b - to_end_a,
                euclidean,
                flow_connected: true,
                weight: self.path_weight(ib, ia),
            })
        } else {
            Ok(PairGeometry {
                hydrologic: to_end_a + to_end_b - 2.0 * junction.length,
                euclidean,
                flow_connected: false,
                weight: 0.0,
            })
        }
    }

    /// Product of `sqrt(order_in / order_out)` over every junction between an
    /// upstream segment and a segment on its outlet path.
    fn path_weight(&self, upstream: usize, downstream: usize) -> f64 {
        let path = &self.paths[upstream].segments;
        let mut w = 1.0;
        for pair in path.windows(2) {
            if pair[0] == downstream {
                break;
            }
            let inc = self.segments[pair[0]].shreve_order as f64;
            let out = self.segments[pair[1]].shreve_order as f64;
            w *= (inc / out).sqrt();
            if pair[1] == downstream {
                break;
            }
        }
        w
    }

    pub fn hydrologic_distance(&self, a: SiteId, b: SiteId) -> Result<f64> {
        Ok(self.pair(a, b)?.hydrologic)
    }

    pub fn flow_connected(&self, a: SiteId, b: SiteId) -> Result<bool> {
        let (_, ia) = self.site_parts(a)?;
        let (_, ib) = self.site_parts(b)?;
        Ok(ia == ib || self.paths[ia].position.contains_key(&ib) || self.paths[ib].position.contains_key(&ia))
    }

    /// Tail-up spatial weight; zero for flow-unconnected pairs.
    pub fn tailup_weight(&self, a: SiteId, b: SiteId) -> Result<f64> {
        let (_, ia) = self.site_parts(a)?;
        let (_, ib) = self.site_parts(b)?;
        if ia == ib {
            Ok(1.0)
        } else if self.paths[ia].position.contains_key(&ib) {
            Ok(self.path_weight(ia, ib))
        } else if self.paths[ib].position.contains_key(&ia) {
            Ok(self.path_weight(ib, ia))
        } else {
            Ok(0.0)
        }
    }

    /// Unweighted mean of covariate `name` at the `k` Euclidean-nearest sites
    /// carrying it. Distance ties resolve by site order.
    pub fn interpolate_covariate(&self, target: (f64, f64), name: &str, k: usize) -> Result<f64> {
        self.interpolate_covariate_excluding(target, name, k, &[])
    }

    /// As [`Self::interpolate_covariate`], ignoring the listed sites.
    pub fn interpolate_covariate_excluding(
        &self,
        target: (f64, f64),
        name: &str,
        k: usize,
        exclude: &[SiteId],
    ) -> Result<f64> {
        let idx = self.covariate_index(name)?;
        let pts: Vec<(f64, f64, f64)> = self
            .sites
            .iter()
            .filter(|s| !exclude.contains(&s.id))
            .filter(|s| !s.covariates[idx].is_nan())
            .map(|s| (s.easting, s.northing, s.covariates[idx]))
            .collect();
        knn_mean(&pts, target, k)
    }

    pub fn from_csv_paths(edges: &Path, sites: &Path) -> Result<Self> {
        let e = std::fs::File::open(edges).map_err(|err| Error::io(edges, err))?;
        let s = std::fs::File::open(sites).map_err(|err| Error::io(sites, err))?;
        Self::from_csv_readers(e, s)
    }

    /// Reads `segment_id,downstream_id,length_m,shreve_order` and
    /// `site_id,segment_id,offset_m,easting,northing,<covariates...>` tables.
    pub fn from_csv_readers(edges: impl Read, sites: impl Read) -> Result<Self> {
        let mut segments = Vec::new();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(edges);
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() < 4 {
                return Err(Error::InvalidNetwork(format!("edge row has {} fields", rec.len())));
            }
            let downstream = match rec[1].trim() {
                "" => None,
                d => Some(parse_field::<u64>(d, "downstream_id")?),
            };
            segments.push(Segment {
                id: parse_field(&rec[0], "segment_id")?,
                downstream,
                length: parse_field(&rec[2], "length_m")?,
                shreve_order: parse_field(&rec[3], "shreve_order")?,
            });
        }

        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(sites);
        let header = rdr.headers()?.clone();
        if header.len() < 5 {
            return Err(Error::InvalidNetwork("site header needs at least 5 columns".into()));
        }
        let covariate_names: Vec<String> = header.iter().skip(5).map(str::to_string).collect();
        let mut out = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let covariates = (5..header.len())
                .map(|i| match rec.get(i).map(str::trim) {
                    None | Some("") => Ok(f64::NAN),
                    Some(v) => parse_field(v, &header[i]),
                })
                .collect::<Result<Vec<f64>>>()?;
            out.push(Site {
                id: parse_field(&rec[0], "site_id")?,
                segment: parse_field(&rec[1], "segment_id")?,
                offset: parse_field(&rec[2], "offset_m")?,
                easting: parse_field(&rec[3], "easting")?,
                northing: parse_field(&rec[4], "northing")?,
                covariates,
            });
        }
        Self::new(segments, out, covariate_names)
    }

    pub fn write_edges_csv(&self, w: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["segment_id", "downstream_id", "length_m", "shreve_order"])?;
        for s in &self.segments {
            wtr.write_record([
                s.id.to_string(),
                s.downstream.map(|d| d.to_string()).unwrap_or_default(),
                s.length.to_string(),
                s.shreve_order.to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<edges>", e))?;
        Ok(())
    }

    pub fn write_sites_csv(&self, w: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["site_id", "segment_id", "offset_m", "easting", "northing"];
        header.extend(self.covariate_names.iter().map(String::as_str));
        wtr.write_record(&header)?;
        for s in &self.sites {
            let mut row = vec![
                s.id.to_string(),
                s.segment.to_string(),
                s.offset.to_string(),
                s.easting.to_string(),
                s.northing.to_string(),
            ];
            row.extend(s.covariates.iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }));
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| Error::io("<sites>", e))?;
        Ok(())
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, name: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::InvalidNetwork(format!("cannot parse {name} from `{s}`")))
}

/// Shreve orders from a downstream-index forest: leaves get 1, every other
/// segment the sum of its immediate upstream orders.
fn shreve_orders(downstream: &[Option<usize>]) -> Vec<u32> {
    let n = downstream.len();
    let mut upstream_count = vec![0usize; n];
    for d in downstream.iter().flatten() {
        upstream_count[*d] += 1;
    }
    let mut order = vec![0u32; n];
    let mut pending = upstream_count.clone();
    let mut stack: Vec<usize> = (0..n).filter(|&i| upstream_count[i] == 0).collect();
    for &i in &stack {
        order[i] = 1;
    }
    while let Some(i) = stack.pop() {
        if let Some(d) = downstream[i] {
            order[d] += order[i];
            pending[d] -= 1;
            if pending[d] == 0 {
                stack.push(d);
            }
        }
    }
    order
}

/// Mean value of the `k` nearest `(x, y, value)` points to `target`.
fn check_site(site: &Site, segments: &[Segment], segment_index: &HashMap<SegmentId, usize>, n_cov: usize) -> Result<()> {
    let seg = segment_index.get(&site.segment).ok_or(Error::UnknownSegment(site.segment))?;
    let len = segments[*seg].length;
    if !(site.offset >= 0.0 && site.offset <= len) {
        return Err(Error::InvalidNetwork(format!("site {} offset {} outside [0, {}]", site.id, site.offset, len)));
    }
    if site.covariates.len() != n_cov {
        return Err(Error::InvalidNetwork(format!("site {} has {} covariates, expected {}", site.id, site.covariates.len(), n_cov)));
    }
    Ok(())
}

pub fn knn_mean(points: &[(f64, f64, f64)], target: (f64, f64), k: usize) -> Result<f64> {
    if k == 0 || points.len() < k {
        return Err(Error::TooFewNeighbours { needed: k.max(1), found: points.len() });
    }
    let mut d: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| ((p.0 - target.0).powi(2) + (p.1 - target.1).powi(2), i))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(d[..k].iter().map(|&(_, i)| points[i].2).sum::<f64>() / k as f64)
}
