//! Raster views of an efficiency surface: heatmaps with threshold contours
//! for each window pair, and profiles for single windows.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::windows::{EfficiencySurface, Slice};

const STOPS: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

fn colour(u: f64) -> Rgb<u8> {
    let u = if u.is_finite() { u.clamp(0.0, 1.0) } else { 0.0 };
    let x = u * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let c = |k: usize| (STOPS[i][k] + f * (STOPS[i + 1][k] - STOPS[i][k])).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

fn file_safe(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Slice through the global argmax with only `keep` windows free.
fn slice_keeping(surface: &EfficiencySurface, keep: &[usize]) -> Result<Slice> {
    let best = &surface.points[surface.argmax];
    let fixed: Vec<(String, f64)> = (0..surface.q()).filter(|w| !keep.contains(w)).map(|w| (surface.windows[w].name.clone(), best[w])).collect();
    surface.conditional_slice(&fixed)
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: std::io::Error::other(e) })
}

/// Heatmap of windows `a` (horizontal) and `b` (vertical) with the others
/// held at the global argmax. Black lines trace each threshold set's edge.
pub fn heatmap(surface: &EfficiencySurface, a: usize, b: usize, thresholds: &[f64], path: &Path) -> Result<()> {
    if a == b || a >= surface.q() || b >= surface.q() {
        return Err(Error::InvalidParameter(format!("window pair ({a}, {b}) for {} windows", surface.q())));
    }
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let slice = slice_keeping(surface, &[lo, hi])?;
    let (na, nb) = (surface.levels[a].len(), surface.levels[b].len());
    // slice points are ordered with the lower window index varying slowest
    let eff_at = |i: usize, j: usize| {
        let k = if a < b { i * nb + j } else { j * na + i };
        slice.points[k].eff
    };
    let cell = (480 / na.max(nb)).max(4) as u32;
    let (w, h) = (na as u32 * cell, nb as u32 * cell);
    let emin = slice.points.iter().map(|p| p.eff).fold(f64::INFINITY, f64::min);
    let emax = slice.points.iter().map(|p| p.eff).fold(f64::NEG_INFINITY, f64::max);
    let span = if emax > emin { emax - emin } else { 1.0 };
    let mut img = RgbImage::new(w, h);
    for i in 0..na {
        for j in 0..nb {
            let c = colour((eff_at(i, j) - emin) / span);
            // first level of `b` at the bottom
            let y0 = (nb - 1 - j) as u32 * cell;
            for dx in 0..cell {
                for dy in 0..cell {
                    img.put_pixel(i as u32 * cell + dx, y0 + dy, c);
                }
            }
        }
    }
    let black = Rgb([0, 0, 0]);
    for &t in thresholds {
        let inside = |i: usize, j: usize| eff_at(i, j) >= t;
        for i in 0..na {
            for j in 0..nb {
                let y0 = (nb - 1 - j) as u32 * cell;
                if i + 1 < na && inside(i, j) != inside(i + 1, j) {
                    let x = (i as u32 + 1) * cell - 1;
                    (0..cell).for_each(|d| img.put_pixel(x, y0 + d, black));
                }
                if j + 1 < nb && inside(i, j) != inside(i, j + 1) {
                    (0..cell).for_each(|d| img.put_pixel(i as u32 * cell + d, y0, black));
                }
            }
        }
    }
    let best = &slice.argmax.coords;
    let (bi, bj) = (level_index(&surface.levels[a], best[if a < b { 0 } else { 1 }]), level_index(&surface.levels[b], best[if a < b { 1 } else { 0 }]));
    let (cx, cy) = (bi as u32 * cell + cell / 2, (nb - 1 - bj) as u32 * cell + cell / 2);
    for d in 0..cell / 2 {
        img.put_pixel(cx.saturating_sub(d), cy, Rgb([255, 255, 255]));
        img.put_pixel((cx + d).min(w - 1), cy, Rgb([255, 255, 255]));
        img.put_pixel(cx, cy.saturating_sub(d), Rgb([255, 255, 255]));
        img.put_pixel(cx, (cy + d).min(h - 1), Rgb([255, 255, 255]));
    }
    save(&img, path)
}

fn level_index(levels: &[f64], v: f64) -> usize {
    levels.iter().enumerate().min_by(|x, y| (x.1 - v).abs().total_cmp(&(y.1 - v).abs())).map(|(i, _)| i).unwrap_or(0)
}

/// Bar profile of one window with the others at the global argmax; grey
/// rules mark the thresholds.
pub fn profile(surface: &EfficiencySurface, a: usize, thresholds: &[f64], path: &Path) -> Result<()> {
    if a >= surface.q() {
        return Err(Error::InvalidParameter(format!("window {a} of {}", surface.q())));
    }
    let slice = slice_keeping(surface, &[a])?;
    let n = slice.points.len();
    let bar = (480 / n).max(4) as u32;
    let (w, h) = (n as u32 * bar, 240u32);
    let top = slice.points.iter().map(|p| p.eff).fold(f64::NEG_INFINITY, f64::max).max(1.0);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let y_of = |v: f64| h - 1 - ((v / top).clamp(0.0, 1.0) * (h - 1) as f64).round() as u32;
    for (i, p) in slice.points.iter().enumerate() {
        let c = colour(p.eff / top);
        for y in y_of(p.eff)..h {
            for dx in 0..bar {
                img.put_pixel(i as u32 * bar + dx, y, c);
            }
        }
    }
    for &t in thresholds {
        let y = y_of(t);
        (0..w).for_each(|x| img.put_pixel(x, y, Rgb([128, 128, 128])));
    }
    save(&img, path)
}

/// Writes every pair heatmap (or one profile per window when `q = 1`)
/// into `dir`, returning the paths.
pub fn render_all(surface: &EfficiencySurface, thresholds: &[f64], dir: &Path) -> Result<Vec<PathBuf>> {
    let q = surface.q();
    let mut out = Vec::new();
    if q == 1 {
        let p = dir.join(format!("profile_{}.png", file_safe(&surface.windows[0].name)));
        profile(surface, 0, thresholds, &p)?;
        out.push(p);
    }
    for a in 0..q {
        for b in a + 1..q {
            let p = dir.join(format!("heatmap_{}_{}.png", file_safe(&surface.windows[a].name), file_safe(&surface.windows[b].name)));
            heatmap(surface, a, b, thresholds, &p)?;
            out.push(p);
        }
    }
    Ok(out)
}
