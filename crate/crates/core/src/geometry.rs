//! Viewport geometry on the equirectangular panorama.
//!
//! Orientation convention used throughout the crate:
//!
//! - azimuth `φ ∈ [0, 360)` degrees, equal to the head yaw wrapped into range;
//! - polar angle `θ ∈ [0, 180]` degrees measured from the north pole, so
//!   `θ = 90 − pitch`. Pitch `+90` looks straight up, `−90` straight down.
//!
//! The panorama is split into `cols × rows` tiles. Column `c` covers
//! azimuths `[c·360/N, (c+1)·360/N)` and row `r` covers polar angles
//! `[r·180/M, (r+1)·180/M)`, with the last bin of each axis closed.
//! Tiles are numbered in raster order, `k = row·N + col`.
//!
//! A viewport footprint is estimated by casting an `S×S` grid of rays
//! through a pinhole image plane spanning `±tan(hfov/2)` by `±tan(vfov/2)`,
//! oriented by yaw then pitch with zero roll, and binning each ray into the
//! tile it hits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle into `[0, 360)`.
pub fn wrap_degrees(angle: f64) -> f64 {
    let wrapped = angle.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs.
    if wrapped >= 360.0 {
        0.0
    } else {
        wrapped
    }
}

/// Signed shortest difference `to − from`, in `(−180, 180]`.
pub fn wrapped_delta(from: f64, to: f64) -> f64 {
    let d = wrap_degrees(to - from);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// A direction on the view sphere in spherical coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereDirection {
    azimuth_deg: f64,
    polar_deg: f64,
}

impl SphereDirection {
    /// Builds a direction, wrapping the azimuth and clamping the polar angle.
    pub fn new(azimuth_deg: f64, polar_deg: f64) -> Self {
        SphereDirection {
            azimuth_deg: wrap_degrees(azimuth_deg),
            polar_deg: polar_deg.clamp(0.0, 180.0),
        }
    }

    pub fn azimuth_deg(&self) -> f64 {
        self.azimuth_deg
    }

    pub fn polar_deg(&self) -> f64 {
        self.polar_deg
    }

    /// Pitch in degrees, `90 − θ`.
    pub fn pitch_deg(&self) -> f64 {
        90.0 - self.polar_deg
    }
}

/// Converts a head orientation to sphere coordinates.
pub fn yaw_pitch_to_sphere(yaw_deg: f64, pitch_deg: f64) -> SphereDirection {
    SphereDirection::new(yaw_deg, 90.0 - pitch_deg)
}

/// Field of view and footprint sampling resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewportSpec {
    hfov_deg: f64,
    vfov_deg: f64,
    sample_grid: usize,
}

impl ViewportSpec {
    pub const DEFAULT_HFOV_DEG: f64 = 110.0;
    pub const DEFAULT_VFOV_DEG: f64 = 90.0;
    pub const DEFAULT_SAMPLE_GRID: usize = 64;

    pub fn new(hfov_deg: f64, vfov_deg: f64, sample_grid: usize) -> Result<Self> {
        for (name, fov) in [("hfov", hfov_deg), ("vfov", vfov_deg)] {
            if !(fov > 0.0 && fov < 180.0) {
                return Err(Error::validation(format!(
                    "{name} must lie in (0, 180) degrees, got {fov}"
                )));
            }
        }
        if sample_grid < 8 {
            return Err(Error::validation(format!(
                "sample grid must be at least 8, got {sample_grid}"
            )));
        }
        Ok(ViewportSpec {
            hfov_deg,
            vfov_deg,
            sample_grid,
        })
    }

    pub fn hfov_deg(&self) -> f64 {
        self.hfov_deg
    }

    pub fn vfov_deg(&self) -> f64 {
        self.vfov_deg
    }

    pub fn sample_grid(&self) -> usize {
        self.sample_grid
    }

    pub fn with_sample_grid(self, sample_grid: usize) -> Result<Self> {
        ViewportSpec::new(self.hfov_deg, self.vfov_deg, sample_grid)
    }
}

impl Default for ViewportSpec {
    fn default() -> Self {
        ViewportSpec {
            hfov_deg: Self::DEFAULT_HFOV_DEG,
            vfov_deg: Self::DEFAULT_VFOV_DEG,
            sample_grid: Self::DEFAULT_SAMPLE_GRID,
        }
    }
}

/// The `cols × rows` partition of the equirectangular panorama.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileGrid {
    cols: usize,
    rows: usize,
}

impl TileGrid {
    pub fn new(cols: usize, rows: usize) -> Result<Self> {
        if cols == 0 || rows == 0 {
            return Err(Error::validation(format!(
                "tile grid must be at least 1x1, got {cols}x{rows}"
            )));
        }
        Ok(TileGrid { cols, rows })
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn tile_count(&self) -> usize {
        self.cols * self.rows
    }

    /// `(row, col)` of a raster tile index.
    pub fn position(&self, tile: usize) -> (usize, usize) {
        (tile / self.cols, tile % self.cols)
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    /// Center direction of a tile.
    pub fn tile_center(&self, tile: usize) -> SphereDirection {
        let (row, col) = self.position(tile);
        SphereDirection::new(
            (col as f64 + 0.5) * 360.0 / self.cols as f64,
            (row as f64 + 0.5) * 180.0 / self.rows as f64,
        )
    }
}

impl Default for TileGrid {
    fn default() -> Self {
        TileGrid { cols: 6, rows: 4 }
    }
}

/// Normalized fraction of a viewport falling in each tile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootprintWeights {
    pub weights: Vec<f64>,
}

impl FootprintWeights {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Tiles with nonzero weight.
    pub fn covered_tiles(&self) -> impl Iterator<Item = usize> + '_ {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(k, _)| k)
    }
}

fn bin(value: f64, span: f64, bins: usize) -> usize {
    let idx = (value / span * bins as f64).floor();
    if idx <= 0.0 {
        0
    } else {
        (idx as usize).min(bins - 1)
    }
}

/// Raster tile index containing a direction.
pub fn direction_to_tile(dir: SphereDirection, grid: TileGrid) -> usize {
    let col = bin(dir.azimuth_deg, 360.0, grid.cols);
    let row = bin(dir.polar_deg, 180.0, grid.rows);
    grid.index(row, col)
}

/// Estimates the per-tile share of the viewport centred on `orientation`.
pub fn viewport_footprint(orientation: SphereDirection, spec: ViewportSpec, grid: TileGrid) -> FootprintWeights {
    let s = spec.sample_grid;
    let half_w = (spec.hfov_deg.to_radians() / 2.0).tan();
    let half_h = (spec.vfov_deg.to_radians() / 2.0).tan();
    let (sin_t, cos_t) = orientation.polar_deg.to_radians().sin_cos();

    // Camera basis in a frame rotated so the viewport centre sits at azimuth
    // zero; the centre azimuth is added back after the ray is resolved.
    let forward = [sin_t, 0.0, cos_t];
    let up = [-cos_t, 0.0, sin_t];

    let mut hits = vec![0u32; grid.tile_count()];
    for iy in 0..s {
        let y = half_h * (2.0 * (iy as f64 + 0.5) / s as f64 - 1.0);
        for ix in 0..s {
            let x = half_w * (2.0 * (ix as f64 + 0.5) / s as f64 - 1.0);
            let ray = [forward[0] + y * up[0], x, forward[2] + y * up[2]];
            let norm = (ray[0] * ray[0] + ray[1] * ray[1] + ray[2] * ray[2]).sqrt();
            let polar = (ray[2] / norm).clamp(-1.0, 1.0).acos().to_degrees();
            let azimuth = orientation.azimuth_deg + ray[1].atan2(ray[0]).to_degrees();
            let dir = SphereDirection::new(azimuth, polar);
            hits[direction_to_tile(dir, grid)] += 1;
        }
    }

    let total = (s * s) as f64;
    FootprintWeights {
        weights: hits.into_iter().map(|h| h as f64 / total).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> TileGrid {
        TileGrid::new(6, 4).unwrap()
    }

    #[test]
    fn yaw_pitch_conversion() {
        let d = yaw_pitch_to_sphere(0.0, 0.0);
        assert_eq!((d.azimuth_deg(), d.polar_deg()), (0.0, 90.0));
        let d = yaw_pitch_to_sphere(120.0, -60.0);
        assert_eq!((d.azimuth_deg(), d.polar_deg()), (120.0, 150.0));
        let d = yaw_pitch_to_sphere(-30.0, 95.0);
        assert_eq!((d.azimuth_deg(), d.polar_deg()), (330.0, 0.0));
    }

    #[test]
    fn wrap_handles_edges() {
        assert_eq!(wrap_degrees(360.0), 0.0);
        assert_eq!(wrap_degrees(-1e-18), 0.0);
        assert_eq!(wrap_degrees(725.0), 5.0);
        assert_eq!(wrapped_delta(350.0, 10.0), 20.0);
        assert_eq!(wrapped_delta(10.0, 350.0), -20.0);
    }

    #[test]
    fn tile_binning_corners() {
        let g = grid();
        assert_eq!(direction_to_tile(SphereDirection::new(0.0, 0.0), g), 0);
        assert_eq!(direction_to_tile(SphereDirection::new(359.99, 179.99), g), 23);
        // floor(90/360*6) = 1, floor(90/180*4) = 2
        assert_eq!(direction_to_tile(SphereDirection::new(90.0, 90.0), g), 13);
        assert_eq!(direction_to_tile(SphereDirection::new(0.0, 180.0), g), 18);
    }

    #[test]
    fn raster_order_is_bijective() {
        let g = TileGrid::new(5, 3).unwrap();
        for k in 0..g.tile_count() {
            let (r, c) = g.position(k);
            assert_eq!(g.index(r, c), k);
            assert_eq!(direction_to_tile(g.tile_center(k), g), k);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(ViewportSpec::new(180.0, 90.0, 64).is_err());
        assert!(ViewportSpec::new(110.0, 0.0, 64).is_err());
        assert!(ViewportSpec::new(110.0, 90.0, 7).is_err());
        assert!(TileGrid::new(0, 4).is_err());
    }

    #[test]
    fn equator_viewport_is_compact() {
        let w = viewport_footprint(yaw_pitch_to_sphere(0.0, 0.0), ViewportSpec::default(), grid());
        assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for corner in [0, 5, 18, 23] {
            assert_eq!(w.weights[corner], 0.0, "corner tile {corner}");
        }
        // Centred on the seam between columns 0 and 5 in the middle rows.
        for k in [6, 11, 12, 17] {
            assert!(w.weights[k] > 0.1, "tile {k}: {}", w.weights[k]);
        }
        assert!(w.covered_tiles().count() <= 12);
    }

    #[test]
    fn south_polar_viewport_spreads_over_row() {
        let w = viewport_footprint(SphereDirection::new(120.0, 150.0), ViewportSpec::default(), grid());
        for k in 18..24 {
            assert!(w.weights[k] > 0.0, "bottom tile {k}");
        }
        assert!(w.weights[..6].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn narrow_viewport_hits_single_tile() {
        let spec = ViewportSpec::new(1e-6, 1e-6, 16).unwrap();
        let g = grid();
        for k in 0..g.tile_count() {
            let w = viewport_footprint(g.tile_center(k), spec, g);
            assert_eq!(w.weights[k], 1.0);
            assert_eq!(w.weights.iter().sum::<f64>(), 1.0);
        }
    }
}
