//! Synthetic river networks and reef depth fields.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Segment, SegmentId, Site, StreamNetwork};
use crate::problem::{Anchor, Neighbourhood};
use crate::rng::{self, label};
use crate::transect::ReefSurface;

pub const RIVER_COVARIATES: [&str; 4] = ["slope", "elevation", "watershed_area", "air_temp"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiverParams {
    pub n_sites: usize,
    pub n_leaves: usize,
    pub n_windows: usize,
    /// Arc length of each window neighbourhood, metres.
    pub window_length: f64,
    pub min_segment_length: f64,
    pub max_segment_length: f64,
}

impl Default for RiverParams {
    fn default() -> Self {
        Self { n_sites: 15, n_leaves: 6, n_windows: 2, window_length: 2000.0, min_segment_length: 1500.0, max_segment_length: 4000.0 }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticRiver {
    pub network: StreamNetwork,
    pub neighbourhoods: Vec<Neighbourhood>,
}

struct Geo {
    /// Downstream end of each segment.
    down: (f64, f64),
    /// Upstream direction, radians.
    angle: f64,
}

fn point_on(g: &Geo, offset: f64) -> (f64, f64) {
    (g.down.0 + offset * g.angle.cos(), g.down.1 + offset * g.angle.sin())
}

/// Random binary tree grown by splitting leaves, with sites scattered in
/// proportion to segment length and smooth covariates.
pub fn synth_river(p: &RiverParams, seed: u64) -> Result<SyntheticRiver> {
    if p.n_leaves < 1 || p.n_sites < 1 || !(p.min_segment_length > 0.0) || p.max_segment_length < p.min_segment_length {
        return Err(Error::InvalidParameter(format!("invalid river parameters {p:?}")));
    }
    if p.n_windows > p.n_leaves {
        return Err(Error::InvalidParameter(format!("{} windows need at least as many leaves, got {}", p.n_windows, p.n_leaves)));
    }
    let mut rng = rng::stream(seed, &[label::SYNTH, 0]);
    let len = |rng: &mut rng::Stream| rng.random_range(p.min_segment_length..=p.max_segment_length);

    let mut downstream: Vec<Option<usize>> = vec![None];
    let mut lengths = vec![len(&mut rng)];
    let mut geo = vec![Geo { down: (0.0, 0.0), angle: std::f64::consts::FRAC_PI_2 }];
    let mut leaves = vec![0usize];
    while leaves.len() < p.n_leaves {
        let parent = leaves.remove(rng.random_range(0..leaves.len()));
        let up = point_on(&geo[parent], lengths[parent]);
        for side in [-1.0, 1.0] {
            let turn = rng.random_range(20f64..45.0).to_radians();
            downstream.push(Some(parent));
            lengths.push(len(&mut rng));
            geo.push(Geo { down: up, angle: geo[parent].angle + side * turn });
            leaves.push(downstream.len() - 1);
        }
    }
    let n = downstream.len();
    // children always have larger indices than their parent
    let mut shreve = vec![0u32; n];
    for i in (0..n).rev() {
        let kids: u32 = (0..n).filter(|&k| downstream[k] == Some(i)).map(|k| shreve[k]).sum();
        shreve[i] = kids.max(1);
    }
    let segments: Vec<Segment> = (0..n)
        .map(|i| Segment { id: (i + 1) as SegmentId, downstream: downstream[i].map(|d| (d + 1) as SegmentId), length: lengths[i], shreve_order: shreve[i] })
        .collect();

    // distance from each segment's downstream end to the outlet, and total
    // channel length upstream of its upstream end
    let mut to_outlet = vec![0.0; n];
    for i in 0..n {
        if let Some(d) = downstream[i] {
            to_outlet[i] = to_outlet[d] + lengths[d];
        }
    }
    let mut upstream_len = vec![0.0; n];
    for i in (0..n).rev() {
        upstream_len[i] = (0..n).filter(|&k| downstream[k] == Some(i)).map(|k| upstream_len[k] + lengths[k]).sum();
    }

    let total: f64 = lengths.iter().sum();
    let mut raw: Vec<(usize, f64)> = (0..p.n_sites)
        .map(|_| {
            let mut x = rng.random_range(0.0..total);
            let mut seg = 0;
            while x > lengths[seg] && seg + 1 < n {
                x -= lengths[seg];
                seg += 1;
            }
            (seg, lengths[seg] * rng.random_range(0.05..0.95))
        })
        .collect();
    raw.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let sites: Vec<Site> = raw
        .iter()
        .enumerate()
        .map(|(k, &(seg, off))| {
            let (e, no) = point_on(&geo[seg], off);
            let d = to_outlet[seg] + off;
            let elevation = 200.0 + 0.02 * d + 5.0 * noise.sample(&mut rng);
            let slope = (0.5 + 2.0 / shreve[seg] as f64 + 0.1 * noise.sample(&mut rng)).abs();
            let area = 0.5 * (upstream_len[seg] + lengths[seg] - off) / 1000.0 + 0.05 * noise.sample(&mut rng).abs();
            let air = 25.0 - 0.0065 * elevation + 0.0002 * e + 0.3 * noise.sample(&mut rng);
            Site { id: (k + 1) as u64, segment: (seg + 1) as SegmentId, offset: off, easting: e, northing: no, covariates: vec![slope, elevation, area, air] }
        })
        .collect();
    let network = StreamNetwork::new(segments, sites, RIVER_COVARIATES.iter().map(|s| s.to_string()).collect())?;

    let mut leaf_ids = leaves.clone();
    leaf_ids.sort_unstable();
    let mut neighbourhoods = Vec::with_capacity(p.n_windows);
    for w in 0..p.n_windows {
        let pick = leaf_ids.remove(rng.random_range(0..leaf_ids.len()));
        let mut seg = pick;
        let mut off = 0.9 * lengths[pick];
        let mut left = p.window_length;
        let mut anchors = vec![anchor(&geo, seg, off)];
        loop {
            if left <= off {
                anchors.push(anchor(&geo, seg, off - left));
                break;
            }
            left -= off;
            match downstream[seg] {
                Some(d) => {
                    seg = d;
                    off = lengths[d];
                    anchors.push(anchor(&geo, seg, off));
                }
                None => {
                    anchors.push(anchor(&geo, seg, 0.0));
                    break;
                }
            }
        }
        anchors.dedup_by(|a, b| a.segment == b.segment && a.offset == b.offset);
        neighbourhoods.push(Neighbourhood { name: format!("N{}", w + 1), anchors });
    }
    Ok(SyntheticRiver { network, neighbourhoods })
}

fn anchor(geo: &[Geo], seg: usize, offset: f64) -> Anchor {
    let (e, n) = point_on(&geo[seg], offset);
    Anchor { segment: (seg + 1) as SegmentId, offset, easting: e, northing: n }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReefParams {
    pub width: f64,
    pub height: f64,
    /// Spacing of the point cloud, metres.
    pub resolution: f64,
    pub depth_min: f64,
    pub depth_max: f64,
    pub bumps: usize,
}

impl Default for ReefParams {
    fn default() -> Self {
        Self { width: 2000.0, height: 1500.0, resolution: 50.0, depth_min: 12.0, depth_max: 50.0, bumps: 6 }
    }
}

/// Sum of random Gaussian bumps and a linear trend, rescaled to the depth
/// interval.
pub fn synth_reef(p: &ReefParams, seed: u64) -> Result<ReefSurface> {
    if !(p.width > 0.0 && p.height > 0.0 && p.resolution > 0.0) || !(p.depth_min < p.depth_max) {
        return Err(Error::InvalidParameter(format!("invalid reef parameters {p:?}")));
    }
    let mut rng = rng::stream(seed, &[label::SYNTH, 1]);
    let bumps: Vec<(f64, f64, f64, f64)> = (0..p.bumps)
        .map(|_| {
            (
                rng.random_range(0.0..p.width),
                rng.random_range(0.0..p.height),
                rng.random_range(0.1..0.3) * p.width.max(p.height),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    let (ta, tb) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let nx = (p.width / p.resolution).floor() as usize + 1;
    let ny = (p.height / p.resolution).floor() as usize + 1;
    let mut pts = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (e, n) = (i as f64 * p.resolution, j as f64 * p.resolution);
            let v = ta * e / p.width
                + tb * n / p.height
                + bumps.iter().map(|&(be, bn, s, a)| a * (-((e - be).powi(2) + (n - bn).powi(2)) / (2.0 * s * s)).exp()).sum::<f64>();
            pts.push((e, n, v));
        }
    }
    let lo = pts.iter().map(|p| p.2).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    for q in &mut pts {
        q.2 = p.depth_min + (q.2 - lo) / span * (p.depth_max - p.depth_min);
    }
    Ok(ReefSurface { points: pts })
}
