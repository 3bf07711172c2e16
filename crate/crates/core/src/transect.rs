//! Reef transect geometry: image positions, radius jitter and the coarse
//! grid used for the spatial random effect.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::knn_mean;

pub const DEFAULT_SPACING: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transect {
    pub midpoint: (f64, f64),
    /// Degrees counterclockwise from the easting axis.
    pub angle: f64,
    pub length: f64,
    pub radius: f64,
    pub spacing: f64,
}

impl Transect {
    pub fn new(midpoint: (f64, f64), angle: f64, length: f64, radius: f64) -> Self {
        Self { midpoint, angle, length, radius, spacing: DEFAULT_SPACING }
    }

    /// Number of images, `length / spacing`.
    pub fn image_count(&self) -> Result<usize> {
        if !(self.length > 0.0) || !(self.spacing > 0.0) || !self.length.is_finite() {
            return Err(Error::InvalidParameter(format!("transect length {} and spacing {} must be positive", self.length, self.spacing)));
        }
        let n = (self.length / self.spacing).round();
        if n < 1.0 || (n * self.spacing - self.length).abs() > 1e-9 * self.length {
            return Err(Error::InvalidParameter(format!("length {} is not a multiple of spacing {}", self.length, self.spacing)));
        }
        Ok(n as usize)
    }
}

/// Image positions at offsets `-l/2 + spacing (k - 1/2)`, `k = 1..N`, along
/// the transect direction.
pub fn transect_points(t: &Transect) -> Result<Vec<(f64, f64)>> {
    let n = t.image_count()?;
    let (s, c) = t.angle.to_radians().sin_cos();
    Ok((1..=n)
        .map(|k| {
            let off = -t.length / 2.0 + t.spacing * (k as f64 - 0.5);
            (t.midpoint.0 + off * c, t.midpoint.1 + off * s)
        })
        .collect())
}

/// Independent `Unif(-r, r)` displacement of each coordinate.
pub fn jitter_points<R: Rng + ?Sized>(points: &[(f64, f64)], r: f64, rng: &mut R) -> Result<Vec<(f64, f64)>> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::InvalidParameter(format!("jitter radius {r} must be non-negative")));
    }
    if r == 0.0 {
        return Ok(points.to_vec());
    }
    Ok(points.iter().map(|&(e, n)| (e + rng.random_range(-r..=r), n + rng.random_range(-r..=r))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min_e: f64,
    pub max_e: f64,
    pub min_n: f64,
    pub max_n: f64,
}

impl Bounds {
    pub fn contains(&self, p: (f64, f64)) -> bool {
        p.0 >= self.min_e && p.0 <= self.max_e && p.1 >= self.min_n && p.1 <= self.max_n
    }

    /// Points moved inside the bounds, and how many needed it.
    pub fn clamp(&self, points: &[(f64, f64)]) -> (Vec<(f64, f64)>, usize) {
        let mut moved = 0;
        let out = points
            .iter()
            .map(|&p| {
                let q = (p.0.clamp(self.min_e, self.max_e), p.1.clamp(self.min_n, self.max_n));
                moved += (q != p) as usize;
                q
            })
            .collect();
        (out, moved)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseGrid {
    /// Cell of each point, `iy * nx + ix`.
    pub cells: Vec<usize>,
    pub centres: Vec<(f64, f64)>,
    /// Euclidean distances between cell centres.
    pub distances: DMatrix<f64>,
}

fn cell_index(v: f64, lo: f64, width: f64, n: usize) -> usize {
    let x = (v - lo) / width;
    let k = x.round();
    // values on a cell boundary belong to the cell above it
    let i = if (x - k).abs() < 1e-9 { k } else { x.floor() };
    (i.max(0.0) as usize).min(n - 1)
}

/// Assigns points to an `nx` by `ny` grid over `bounds`.
pub fn coarsen_to_grid(points: &[(f64, f64)], bounds: &Bounds, nx: usize, ny: usize) -> Result<CoarseGrid> {
    if nx == 0 || ny == 0 || !(bounds.max_e > bounds.min_e) || !(bounds.max_n > bounds.min_n) {
        return Err(Error::InvalidParameter("grid needs positive cell counts and non-empty bounds".into()));
    }
    let we = (bounds.max_e - bounds.min_e) / nx as f64;
    let wn = (bounds.max_n - bounds.min_n) / ny as f64;
    let cells = points
        .iter()
        .map(|&p| {
            if !bounds.contains(p) {
                return Err(Error::InvalidParameter(format!("point ({}, {}) outside the grid bounds", p.0, p.1)));
            }
            Ok(cell_index(p.1, bounds.min_n, wn, ny) * nx + cell_index(p.0, bounds.min_e, we, nx))
        })
        .collect::<Result<Vec<_>>>()?;
    let centres: Vec<(f64, f64)> = (0..nx * ny)
        .map(|c| (bounds.min_e + we * ((c % nx) as f64 + 0.5), bounds.min_n + wn * ((c / nx) as f64 + 0.5)))
        .collect();
    let m = centres.len();
    let distances = DMatrix::from_fn(m, m, |i, j| ((centres[i].0 - centres[j].0).powi(2) + (centres[i].1 - centres[j].1).powi(2)).sqrt());
    Ok(CoarseGrid { cells, centres, distances })
}

/// Depth point cloud of a reef.
#[derive(Debug, Clone, PartialEq)]
pub struct ReefSurface {
    pub points: Vec<(f64, f64, f64)>,
}

impl ReefSurface {
    pub fn read_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f);
        let mut points = Vec::new();
        for rec in rdr.deserialize::<(f64, f64, f64)>() {
            points.push(rec?);
        }
        if points.is_empty() {
            return Err(Error::EmptyInput(format!("reef surface {}", path.display())));
        }
        Ok(Self { points })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(f);
        w.write_record(["easting", "northing", "depth"])?;
        for p in &self.points {
            w.serialize(p)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn bounds(&self) -> Bounds {
        let mut b = Bounds { min_e: f64::INFINITY, max_e: f64::NEG_INFINITY, min_n: f64::INFINITY, max_n: f64::NEG_INFINITY };
        for &(e, n, _) in &self.points {
            b.min_e = b.min_e.min(e);
            b.max_e = b.max_e.max(e);
            b.min_n = b.min_n.min(n);
            b.max_n = b.max_n.max(n);
        }
        b
    }

    /// Mean depth of the three nearest surface points.
    pub fn depth_at(&self, p: (f64, f64)) -> Result<f64> {
        knn_mean(&self.points, p, 3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn image_counts() {
        assert_eq!(transect_points(&Transect::new((0.0, 0.0), 30.0, 500.0, 0.0)).unwrap().len(), 100);
        assert!(transect_points(&Transect::new((0.0, 0.0), 0.0, 12.0, 0.0)).is_err());
        assert!(transect_points(&Transect::new((0.0, 0.0), 0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn two_point_layout() {
        let p = transect_points(&Transect::new((0.0, 0.0), 0.0, 10.0, 0.0)).unwrap();
        assert_eq!(p, vec![(-2.5, 0.0), (2.5, 0.0)]);
    }

    #[test]
    fn rotation_by_ninety() {
        let a = transect_points(&Transect::new((0.0, 0.0), 0.0, 50.0, 0.0)).unwrap();
        let b = transect_points(&Transect::new((0.0, 0.0), 90.0, 50.0, 0.0)).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((q.0 + p.1).abs() < 1e-12 && (q.1 - p.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_jitter_is_identity() {
        let p = transect_points(&Transect::new((3.0, 4.0), 17.0, 100.0, 0.0)).unwrap();
        assert_eq!(jitter_points(&p, 0.0, &mut stream(1, &[])).unwrap(), p);
        assert!(jitter_points(&p, -1.0, &mut stream(1, &[])).is_err());
    }

    #[test]
    fn jitter_bounded() {
        let p = vec![(0.0, 0.0); 10_000];
        let j = jitter_points(&p, 2.0, &mut stream(2, &[])).unwrap();
        assert!(j.iter().all(|q| q.0.abs() <= 2.0 && q.1.abs() <= 2.0));
    }

    #[test]
    fn grid_cells() {
        let b = Bounds { min_e: 0.0, max_e: 1.0, min_n: 0.0, max_n: 1.0 };
        let one = coarsen_to_grid(&[(0.2, 0.3), (0.9, 0.9)], &b, 1, 1).unwrap();
        assert_eq!(one.cells, vec![0, 0]);
        assert_eq!(one.distances[(0, 0)], 0.0);

        let g = coarsen_to_grid(&[(0.5, 0.2), (0.2, 0.5), (1.0, 1.0), (0.0, 0.0)], &b, 2, 2).unwrap();
        assert_eq!(g.cells, vec![1, 2, 3, 0]);
        assert!((g.distances[(0, 1)] - 0.5).abs() < 1e-15);
        assert!((g.distances[(0, 2)] - 0.5).abs() < 1e-15);
        assert!((g.distances[(0, 3)] - 0.5f64.sqrt()).abs() < 1e-15);

        // 0.3 / 0.1 is not exactly 3 in floating point
        let b10 = Bounds { min_e: 0.0, max_e: 1.0, min_n: 0.0, max_n: 1.0 };
        assert_eq!(coarsen_to_grid(&[(0.3, 0.0)], &b10, 10, 10).unwrap().cells, vec![3]);
        assert!(coarsen_to_grid(&[(1.5, 0.0)], &b, 2, 2).is_err());
    }

    #[test]
    fn clamping_reports_moves() {
        let b = Bounds { min_e: 0.0, max_e: 1.0, min_n: 0.0, max_n: 1.0 };
        let (p, moved) = b.clamp(&[(0.5, 0.5), (1.2, -0.1)]);
        assert_eq!(p, vec![(0.5, 0.5), (1.0, 0.0)]);
        assert_eq!(moved, 1);
    }

    #[test]
    fn reef_round_trip() {
        let r = ReefSurface { points: vec![(0.0, 0.0, 12.0), (1.0, 0.0, 14.0), (0.0, 1.0, 16.0), (5.0, 5.0, 50.0)] };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("reef.csv");
        r.write_csv(&p).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("easting,northing,depth\n"));
        let back = ReefSurface::read_csv(&p).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.depth_at((0.1, 0.1)).unwrap(), 14.0);
    }
}
