//! Terrain synthesis and I/O.
//!
//! Terrain enters the pipeline as an altitude raster over the region.
//! Rasters can be synthesized (diamond-square fractal noise, rescaled to a
//! target relief) or loaded from a plain ASCII grid file, so real elevation
//! data can be dropped in without code changes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// Altitude raster defining the region topography.
///
/// `altitude` is row-major (`y * width + x`), in meters. `roughness` is the
/// synthesis parameter the grid was generated with; it is informational and
/// not part of grid identity (it is not persisted by the ASCII format).
#[derive(Debug, Clone)]
pub struct TerrainGrid {
    pub width: usize,
    pub height: usize,
    pub cell_size_m: f64,
    pub altitude: Vec<f64>,
    pub roughness: f64,
}

impl PartialEq for TerrainGrid {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.cell_size_m == other.cell_size_m
            && self.altitude == other.altitude
    }
}

impl TerrainGrid {
    /// Altitude at raster cell `(x, y)`.
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.altitude[y * self.width + x]
    }

    /// Region extent in meters along x.
    pub fn extent_x_m(&self) -> f64 {
        self.width as f64 * self.cell_size_m
    }

    /// Region extent in meters along y.
    pub fn extent_y_m(&self) -> f64 {
        self.height as f64 * self.cell_size_m
    }

    /// True if the point (meters) lies inside the region.
    pub fn contains(&self, x_m: f64, y_m: f64) -> bool {
        x_m >= 0.0 && x_m < self.extent_x_m() && y_m >= 0.0 && y_m < self.extent_y_m()
    }

    /// Bilinear altitude at a point in meters. Cell centers sit at
    /// `(i + 0.5) * cell_size_m`; samples outside the center lattice clamp
    /// to the border cells.
    pub fn altitude_at(&self, x_m: f64, y_m: f64) -> f64 {
        let fx = (x_m / self.cell_size_m - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (y_m / self.cell_size_m - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let dx = fx - x0 as f64;
        let dy = fy - y0 as f64;
        let h00 = self.at(x0, y0);
        let h01 = self.at(x1, y0);
        let h10 = self.at(x0, y1);
        let h11 = self.at(x1, y1);
        let h0 = h00 * (1.0 - dx) + h01 * dx;
        let h1 = h10 * (1.0 - dx) + h11 * dx;
        h0 * (1.0 - dy) + h1 * dy
    }

    /// Peak-to-peak altitude range in meters.
    pub fn relief_m(&self) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &a in &self.altitude {
            lo = lo.min(a);
            hi = hi.max(a);
        }
        if self.altitude.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }
}

/// Full relief (peak-to-peak, meters) of a `roughness = 1` synthetic grid.
pub const MAX_RELIEF_M: f64 = 600.0;

/// Synthesize terrain with diamond-square fractal noise.
///
/// The noise is generated on the next power-of-two lattice, cropped to
/// `width x height`, then affinely rescaled so the peak-to-peak altitude
/// range is exactly `roughness * 600 m` (zero roughness gives a flat grid).
/// Deterministic for a fixed seed.
pub fn synthesize_terrain(
    width: usize,
    height: usize,
    cell_size_m: f64,
    roughness: f64,
    seed: u64,
) -> Result<TerrainGrid> {
    if width < 2 || height < 2 {
        return Err(Error::Dimension(format!(
            "terrain must be at least 2x2, got {width}x{height}"
        )));
    }
    if !(0.0..=1.0).contains(&roughness) {
        return Err(Error::Parameter(format!(
            "roughness must be in [0, 1], got {roughness}"
        )));
    }
    if !(cell_size_m > 0.0) {
        return Err(Error::Parameter(format!(
            "cell_size_m must be > 0, got {cell_size_m}"
        )));
    }

    let target_range = roughness * MAX_RELIEF_M;
    if target_range == 0.0 {
        return Ok(TerrainGrid {
            width,
            height,
            cell_size_m,
            altitude: vec![0.0; width * height],
            roughness,
        });
    }

    // Next power of two covering both dimensions; diamond-square runs on a
    // (n+1) x (n+1) lattice.
    let n = (width.max(height)).next_power_of_two();
    let side = n + 1;
    let mut rng = rng_from_seed(seed);
    let mut data = vec![0.0f64; side * side];

    // Seed the corners.
    for &(x, y) in &[(0usize, 0usize), (n, 0), (0, n), (n, n)] {
        data[y * side + x] = rng.random_range(-1.0..1.0);
    }

    let mut step = n;
    let mut amp = 1.0f64;
    while step > 1 {
        let half = step / 2;
        // Diamond step: centers of squares.
        for y in (half..n).step_by(step) {
            for x in (half..n).step_by(step) {
                let avg = (data[(y - half) * side + (x - half)]
                    + data[(y - half) * side + (x + half)]
                    + data[(y + half) * side + (x - half)]
                    + data[(y + half) * side + (x + half)])
                    / 4.0;
                data[y * side + x] = avg + rng.random_range(-amp..amp);
            }
        }
        // Square step: edge midpoints.
        for y in (0..side).step_by(half) {
            let x_start = if (y / half) % 2 == 0 { half } else { 0 };
            for x in (x_start..side).step_by(step) {
                let mut sum = 0.0;
                let mut cnt = 0.0;
                if x >= half {
                    sum += data[y * side + (x - half)];
                    cnt += 1.0;
                }
                if x + half < side {
                    sum += data[y * side + (x + half)];
                    cnt += 1.0;
                }
                if y >= half {
                    sum += data[(y - half) * side + x];
                    cnt += 1.0;
                }
                if y + half < side {
                    sum += data[(y + half) * side + x];
                    cnt += 1.0;
                }
                data[y * side + x] = sum / cnt + rng.random_range(-amp..amp);
            }
        }
        step = half;
        amp *= 0.5;
    }

    // Crop, then rescale so the cropped raster has the exact target range.
    let mut altitude = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            altitude.push(data[y * side + x]);
        }
    }
    let lo = altitude.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = altitude.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span > 0.0 {
        for a in &mut altitude {
            *a = (*a - lo) / span * target_range;
        }
    } else {
        for a in &mut altitude {
            *a = 0.0;
        }
    }

    Ok(TerrainGrid {
        width,
        height,
        cell_size_m,
        altitude,
        roughness,
    })
}

/// Save terrain in the ASCII grid format:
/// `ncols`, `nrows`, `cellsize` header lines, then `nrows` rows of `ncols`
/// space-separated altitudes in meters. Values round-trip bit-exactly.
pub fn save_terrain(grid: &TerrainGrid, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "ncols {}", grid.width).unwrap();
    writeln!(out, "nrows {}", grid.height).unwrap();
    writeln!(out, "cellsize {}", grid.cell_size_m).unwrap();
    for y in 0..grid.height {
        for x in 0..grid.width {
            if x > 0 {
                out.push(' ');
            }
            write!(out, "{}", grid.at(x, y)).unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Load terrain from the ASCII grid format written by [`save_terrain`].
pub fn load_terrain(path: &Path) -> Result<TerrainGrid> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();

    let mut header = |key: &str| -> Result<(usize, String)> {
        let (idx, line) = lines
            .next()
            .ok_or_else(|| Error::Parse { line: 0, msg: format!("missing header `{key}`") })?;
        let mut parts = line.split_whitespace();
        let k = parts.next().unwrap_or("");
        let v = parts.next().unwrap_or("");
        if k != key || v.is_empty() || parts.next().is_some() {
            return Err(Error::Parse {
                line: idx + 1,
                msg: format!("expected `{key} <value>`, got `{line}`"),
            });
        }
        Ok((idx + 1, v.to_string()))
    };

    let (l, w) = header("ncols")?;
    let width: usize = w
        .parse()
        .map_err(|_| Error::Parse { line: l, msg: format!("bad ncols `{w}`") })?;
    let (l, h) = header("nrows")?;
    let height: usize = h
        .parse()
        .map_err(|_| Error::Parse { line: l, msg: format!("bad nrows `{h}`") })?;
    let (l, c) = header("cellsize")?;
    let cell_size_m: f64 = c
        .parse()
        .map_err(|_| Error::Parse { line: l, msg: format!("bad cellsize `{c}`") })?;

    let mut altitude = Vec::with_capacity(width * height);
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                line: idx + 1,
                msg: format!("bad altitude token `{tok}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "altitude `{tok}` at line {}",
                    idx + 1
                )));
            }
            altitude.push(v);
        }
    }
    if altitude.len() != width * height {
        return Err(Error::Parse {
            line: 0,
            msg: format!(
                "expected {} values ({}x{}), got {}",
                width * height,
                width,
                height,
                altitude.len()
            ),
        });
    }
    if width < 2 || height < 2 {
        return Err(Error::Dimension(format!("terrain must be at least 2x2, got {width}x{height}")));
    }
    Ok(TerrainGrid {
        width,
        height,
        cell_size_m,
        altitude,
        roughness: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_roughness_is_flat() {
        let t = synthesize_terrain(64, 64, 50.0, 0.0, 1).unwrap();
        assert_eq!(t.relief_m(), 0.0);
        assert!(t.altitude.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn full_roughness_hits_600m_relief() {
        let t = synthesize_terrain(64, 64, 50.0, 1.0, 1).unwrap();
        assert!((t.relief_m() - 600.0).abs() < 1e-9);
    }

    #[test]
    fn chicago_like_roughness() {
        // 0.13 * 600 = 78 m peak-to-peak, a flat low-relief profile.
        let t = synthesize_terrain(64, 64, 50.0, 0.13, 7).unwrap();
        assert!((t.relief_m() - 78.0).abs() < 1e-9);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = synthesize_terrain(32, 32, 50.0, 0.5, 9).unwrap();
        let b = synthesize_terrain(32, 32, 50.0, 0.5, 9).unwrap();
        assert_eq!(a, b);
        let c = synthesize_terrain(32, 32, 50.0, 0.5, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn relief_scales_monotonically_with_roughness() {
        let mut last = -1.0;
        for r in [0.0, 0.1, 0.3, 0.6, 1.0] {
            let t = synthesize_terrain(32, 32, 50.0, r, 3).unwrap();
            assert!(t.relief_m() >= last);
            last = t.relief_m();
        }
    }

    #[test]
    fn non_square_and_crop() {
        let t = synthesize_terrain(48, 20, 25.0, 0.5, 2).unwrap();
        assert_eq!(t.altitude.len(), 48 * 20);
        assert!((t.relief_m() - 300.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_dimensions_rejected() {
        assert!(matches!(
            synthesize_terrain(1, 64, 50.0, 0.5, 1),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            synthesize_terrain(64, 64, 50.0, 1.5, 1),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.asc");
        let t = synthesize_terrain(64, 64, 50.0, 0.5, 3).unwrap();
        save_terrain(&t, &path).unwrap();
        let l = load_terrain(&path).unwrap();
        assert_eq!(t, l);
        // Bit-exact altitudes.
        for (a, b) in t.altitude.iter().zip(&l.altitude) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn length_mismatch_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.asc");
        std::fs::write(&path, "ncols 2\nnrows 2\ncellsize 50\n1 2 3\n").unwrap();
        assert!(matches!(load_terrain(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn nan_token_is_nonfinite_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.asc");
        std::fs::write(&path, "ncols 2\nnrows 2\ncellsize 50\n1 nan\n3 4\n").unwrap();
        assert!(matches!(load_terrain(&path), Err(Error::NonFinite(_))));
    }

    #[test]
    fn bilinear_interpolation_matches_cell_centers() {
        let t = synthesize_terrain(16, 16, 50.0, 0.4, 5).unwrap();
        for (x, y) in [(0usize, 0usize), (3, 7), (15, 15)] {
            let m = ((x as f64 + 0.5) * 50.0, (y as f64 + 0.5) * 50.0);
            assert!((t.altitude_at(m.0, m.1) - t.at(x, y)).abs() < 1e-12);
        }
    }
}
