//! Region partition and occupancy ground truth.
//!
//! The fine raster is partitioned into `n_side x n_side` equal sub-regions;
//! a sub-region is occupied when the mean linear field over its cells
//! reaches the threshold.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::*;
use crate::propagation::FieldMap;
use crate::units::dbm_to_watts;

/// Uniform partition of a `raster_width x raster_height` raster into
/// `n_side x n_side` sub-regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_side: usize,
    pub raster_width: usize,
    pub raster_height: usize,
    pub cell_size_m: f64,
}

impl GridSpec {
    pub fn new(
        n_side: usize,
        raster_width: usize,
        raster_height: usize,
        cell_size_m: f64,
    ) -> Result<Self> {
        if n_side == 0 || raster_width == 0 || raster_height == 0 {
            return Err(Error::Grid("grid dimensions must be positive".into()));
        }
        if raster_width % n_side != 0 || raster_height % n_side != 0 {
            return Err(Error::Grid(format!(
                "raster {raster_width}x{raster_height} not divisible by n_side {n_side}"
            )));
        }
        if !(cell_size_m > 0.0) {
            return Err(Error::Grid("cell_size_m must be > 0".into()));
        }
        Ok(GridSpec { n_side, raster_width, raster_height, cell_size_m })
    }

    /// Number of sub-regions.
    pub fn n_subregions(&self) -> usize {
        self.n_side * self.n_side
    }

    /// Raster cells per sub-region along x.
    pub fn cells_per_sub_x(&self) -> usize {
        self.raster_width / self.n_side
    }

    /// Raster cells per sub-region along y.
    pub fn cells_per_sub_y(&self) -> usize {
        self.raster_height / self.n_side
    }

    /// Region extent in meters along x.
    pub fn extent_x_m(&self) -> f64 {
        self.raster_width as f64 * self.cell_size_m
    }

    /// Region extent in meters along y.
    pub fn extent_y_m(&self) -> f64 {
        self.raster_height as f64 * self.cell_size_m
    }

    /// Sub-region index of a raster cell.
    pub fn subregion_of_cell(&self, x: usize, y: usize) -> usize {
        let sx = x / self.cells_per_sub_x();
        let sy = y / self.cells_per_sub_y();
        sy * self.n_side + sx
    }

    /// Sub-region index of a point in meters. Points on a boundary belong
    /// to the sub-region containing their floor cell index.
    pub fn subregion_of_point(&self, x_m: f64, y_m: f64) -> Result<usize> {
        if !(x_m >= 0.0 && x_m < self.extent_x_m() && y_m >= 0.0 && y_m < self.extent_y_m()) {
            return Err(Error::Placement(format!("point ({x_m}, {y_m}) outside region")));
        }
        let cx = ((x_m / self.cell_size_m) as usize).min(self.raster_width - 1);
        let cy = ((y_m / self.cell_size_m) as usize).min(self.raster_height - 1);
        Ok(self.subregion_of_cell(cx, cy))
    }

    /// Center (meters) of sub-region `k`.
    pub fn subregion_center_m(&self, k: usize) -> (f64, f64) {
        let sx = k % self.n_side;
        let sy = k / self.n_side;
        let sub_w = self.extent_x_m() / self.n_side as f64;
        let sub_h = self.extent_y_m() / self.n_side as f64;
        ((sx as f64 + 0.5) * sub_w, (sy as f64 + 0.5) * sub_h)
    }

    fn check_field(&self, field: &FieldMap) -> Result<()> {
        if field.width != self.raster_width || field.height != self.raster_height {
            return Err(Error::Grid(format!(
                "field {}x{} does not match grid raster {}x{}",
                field.width, field.height, self.raster_width, self.raster_height
            )));
        }
        Ok(())
    }
}

/// Binary occupancy ground truth over the coarse grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMap {
    pub n_side: usize,
    pub bits: Vec<u8>,
    pub tau_dbm: f64,
}

impl OccupancyMap {
    /// Fraction of occupied sub-regions.
    pub fn occupied_fraction(&self) -> f64 {
        self.bits.iter().map(|&b| b as usize).sum::<usize>() as f64 / self.bits.len() as f64
    }
}

/// Binary prediction over the coarse grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionMap {
    pub n_side: usize,
    pub bits: Vec<u8>,
    pub theta: f64,
}

/// Mean linear field (Watts) per sub-region, row-major over the coarse grid.
pub fn mean_field(field: &FieldMap, grid: &GridSpec) -> Result<Vec<f64>> {
    grid.check_field(field)?;
    let sub_x = grid.cells_per_sub_x();
    let sub_y = grid.cells_per_sub_y();
    let inv = 1.0 / (sub_x * sub_y) as f64;
    let mut out = vec![0.0f64; grid.n_subregions()];
    for sy in 0..grid.n_side {
        for sx in 0..grid.n_side {
            let mut sum = 0.0;
            for y in sy * sub_y..(sy + 1) * sub_y {
                let row = &field.values_w[y * field.width..(y + 1) * field.width];
                for x in sx * sub_x..(sx + 1) * sub_x {
                    sum += row[x];
                }
            }
            out[sy * grid.n_side + sx] = sum * inv;
        }
    }
    Ok(out)
}

/// Occupancy from sub-region means: bit k is 1 iff the mean linear field
/// over sub-region k is at least the threshold (boundary equality counts
/// as occupied).
pub fn compute_occupancy(field: &FieldMap, grid: &GridSpec, tau_dbm: f64) -> Result<OccupancyMap> {
    let means = mean_field(field, grid)?;
    Ok(occupancy_from_means(&means, grid.n_side, tau_dbm))
}

/// Occupancy directly from precomputed sub-region means.
pub fn occupancy_from_means(means_w: &[f64], n_side: usize, tau_dbm: f64) -> OccupancyMap {
    let tau_w = dbm_to_watts(tau_dbm);
    OccupancyMap {
        n_side,
        bits: means_w.iter().map(|&m| u8::from(m >= tau_w)).collect(),
        tau_dbm,
    }
}

/// Diagnostic: mean intra-sub-region spread in dB (10*log10(max/min) of the
/// field cells within a sub-region), averaged over sub-regions whose cells
/// are all positive. Returns the mean spread and the number of sub-regions
/// skipped because they contain a zero cell.
pub fn intra_subregion_db_spread(field: &FieldMap, grid: &GridSpec) -> Result<(f64, usize)> {
    grid.check_field(field)?;
    let sub_x = grid.cells_per_sub_x();
    let sub_y = grid.cells_per_sub_y();
    let mut total = 0.0;
    let mut counted = 0usize;
    let mut skipped = 0usize;
    for sy in 0..grid.n_side {
        for sx in 0..grid.n_side {
            let mut lo = f64::INFINITY;
            let mut hi = 0.0f64;
            for y in sy * sub_y..(sy + 1) * sub_y {
                for x in sx * sub_x..(sx + 1) * sub_x {
                    let v = field.values_w[y * field.width + x];
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            if lo > 0.0 {
                total += 10.0 * (hi / lo).log10();
                counted += 1;
            } else {
                skipped += 1;
            }
        }
    }
    let mean = if counted > 0 { total / counted as f64 } else { 0.0 };
    Ok((mean, skipped))
}

// ---------------------------------------------------------------------------
// OccupancyMap binary format
// ---------------------------------------------------------------------------

const OCC_MAGIC: &[u8; 4] = b"SOCC";

/// Write an occupancy map: magic `SOCC`, u32 n_side, n_side^2 u8 bits
/// row-major, f64 tau_dbm.
pub fn save_occupancy(map: &OccupancyMap, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_occupancy(&mut w, map)
}

pub fn write_occupancy<W: std::io::Write>(w: &mut W, map: &OccupancyMap) -> Result<()> {
    w.write_all(OCC_MAGIC)?;
    write_u32(w, map.n_side as u32)?;
    w.write_all(&map.bits)?;
    write_f64(w, map.tau_dbm)?;
    Ok(())
}

pub fn load_occupancy(path: &Path) -> Result<OccupancyMap> {
    let mut r = BufReader::new(fs::File::open(path)?);
    read_occupancy(&mut r)
}

pub fn read_occupancy<R: std::io::Read>(r: &mut R) -> Result<OccupancyMap> {
    expect_magic(r, OCC_MAGIC)?;
    let n_side = read_u32(r)? as usize;
    let mut bits = vec![0u8; n_side * n_side];
    r.read_exact(&mut bits)?;
    if bits.iter().any(|&b| b > 1) {
        return Err(Error::Format("occupancy bits must be 0 or 1".into()));
    }
    let tau_dbm = read_f64(r)?;
    Ok(OccupancyMap { n_side, bits, tau_dbm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagation::{compute_field, EmitterConfig, PropagationParams};
    use crate::seed::rng_from_seed;
    use crate::terrain::synthesize_terrain;
    use crate::units::watts_to_dbm;
    use rand::Rng;

    fn const_field(w: usize, h: usize, v: f64) -> FieldMap {
        FieldMap { width: w, height: h, values_w: vec![v; w * h] }
    }

    #[test]
    fn mean_of_constant_field() {
        let f = const_field(8, 8, 5.0);
        let g = GridSpec::new(2, 8, 8, 50.0).unwrap();
        let m = mean_field(&f, &g).unwrap();
        assert!(m.iter().all(|&v| v == 5.0));
    }

    #[test]
    fn mean_of_2x2_single_subregion() {
        let f = FieldMap { width: 2, height: 2, values_w: vec![1.0, 2.0, 3.0, 4.0] };
        let g = GridSpec::new(1, 2, 2, 50.0).unwrap();
        assert_eq!(mean_field(&f, &g).unwrap(), vec![2.5]);
    }

    #[test]
    fn mean_matches_bruteforce_loop() {
        let mut rng = rng_from_seed(3);
        let f = FieldMap {
            width: 8,
            height: 8,
            values_w: (0..64).map(|_| rng.random_range(0.0..10.0)).collect(),
        };
        let g = GridSpec::new(2, 8, 8, 50.0).unwrap();
        let m = mean_field(&f, &g).unwrap();
        // Independent per-cell loop oracle.
        let mut oracle = vec![0.0f64; 4];
        let mut counts = vec![0usize; 4];
        for y in 0..8 {
            for x in 0..8 {
                let k = (y / 4) * 2 + (x / 4);
                oracle[k] += f.at(x, y);
                counts[k] += 1;
            }
        }
        for k in 0..4 {
            assert!((m[k] - oracle[k] / counts[k] as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn divisibility_violation_is_grid_error() {
        assert!(matches!(GridSpec::new(3, 8, 8, 50.0), Err(Error::Grid(_))));
    }

    #[test]
    fn zero_field_is_unoccupied() {
        let f = const_field(8, 8, 0.0);
        let g = GridSpec::new(2, 8, 8, 50.0).unwrap();
        let o = compute_occupancy(&f, &g, -90.0).unwrap();
        assert!(o.bits.iter().all(|&b| b == 0));
    }

    #[test]
    fn boundary_equality_counts_as_occupied() {
        let tau_w = dbm_to_watts(-90.0);
        let f = const_field(4, 4, tau_w);
        let g = GridSpec::new(2, 4, 4, 50.0).unwrap();
        let o = compute_occupancy(&f, &g, -90.0).unwrap();
        assert!(o.bits.iter().all(|&b| b == 1));
    }

    #[test]
    fn occupied_fraction_monotone_in_tau() {
        // 18-emitter field on flat terrain; occupied fraction grows as the
        // threshold drops from -75 to -105 dBm.
        let t = synthesize_terrain(64, 64, 50.0, 0.0, 1).unwrap();
        let mut rng = rng_from_seed(18);
        let mut locs = Vec::new();
        let mut pows = Vec::new();
        for _ in 0..18 {
            locs.push((rng.random_range(0.0..3200.0), rng.random_range(0.0..3200.0)));
            pows.push(rng.random_range(0.1..2.0));
        }
        let f = compute_field(
            &t,
            &PropagationParams::default(),
            &EmitterConfig::new(locs, pows).unwrap(),
        )
        .unwrap();
        let g = GridSpec::new(16, 64, 64, 50.0).unwrap();
        let mut last = -1.0;
        let mut taus: Vec<f64> = Vec::new();
        let mut tau = -75.0;
        while tau >= -105.0 {
            taus.push(tau);
            tau -= 5.0;
        }
        let mut fractions = Vec::new();
        for tau in taus {
            let o = compute_occupancy(&f, &g, tau).unwrap();
            let frac = o.occupied_fraction();
            assert!(frac >= last, "fraction dropped at tau {tau}");
            last = frac;
            fractions.push(frac);
        }
        assert!(fractions.last().unwrap() > fractions.first().unwrap());
    }

    #[test]
    fn threshold_monotonicity_bitwise() {
        let mut rng = rng_from_seed(4);
        let f = FieldMap {
            width: 16,
            height: 16,
            values_w: (0..256).map(|_| rng.random_range(0.0..1e-9)).collect(),
        };
        let g = GridSpec::new(4, 16, 16, 50.0).unwrap();
        let hi = compute_occupancy(&f, &g, -85.0).unwrap();
        let lo = compute_occupancy(&f, &g, -95.0).unwrap();
        for (h, l) in hi.bits.iter().zip(&lo.bits) {
            assert!(h <= l);
        }
    }

    #[test]
    fn scale_covariance() {
        let mut rng = rng_from_seed(5);
        let f = FieldMap {
            width: 16,
            height: 16,
            values_w: (0..256).map(|_| rng.random_range(1e-13..1e-9)).collect(),
        };
        let g = GridSpec::new(4, 16, 16, 50.0).unwrap();
        let c = 37.5;
        let scaled = FieldMap {
            width: 16,
            height: 16,
            values_w: f.values_w.iter().map(|v| v * c).collect(),
        };
        let tau = -91.3;
        let tau_shifted = tau + 10.0 * c.log10();
        let a = compute_occupancy(&f, &g, tau).unwrap();
        let b = compute_occupancy(&scaled, &g, tau_shifted).unwrap();
        // Skip sub-regions whose mean sits within rounding distance of the
        // threshold; scaling is not bit-exact there.
        let means = mean_field(&f, &g).unwrap();
        let tau_w = dbm_to_watts(tau);
        for k in 0..means.len() {
            if (means[k] - tau_w).abs() / tau_w > 1e-9 {
                assert_eq!(a.bits[k], b.bits[k], "sub-region {k}");
            }
        }
    }

    #[test]
    fn refinement_composition() {
        let mut rng = rng_from_seed(6);
        let f = FieldMap {
            width: 16,
            height: 16,
            values_w: (0..256).map(|_| rng.random_range(0.0..1.0)).collect(),
        };
        let coarse = GridSpec::new(2, 16, 16, 50.0).unwrap();
        let fine = GridSpec::new(4, 16, 16, 50.0).unwrap();
        let mc = mean_field(&f, &coarse).unwrap();
        let mf = mean_field(&f, &fine).unwrap();
        // Mean over a coarse sub-region equals the mean of its 4 quadrants.
        for sy in 0..2 {
            for sx in 0..2 {
                let mut q = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        q += mf[(2 * sy + dy) * 4 + (2 * sx + dx)];
                    }
                }
                let rel = (mc[sy * 2 + sx] - q / 4.0).abs() / mc[sy * 2 + sx];
                assert!(rel < 1e-12);
            }
        }
    }

    #[test]
    fn db_spread_diagnostic() {
        let f = const_field(8, 8, 2.0);
        let g = GridSpec::new(2, 8, 8, 50.0).unwrap();
        let (spread, skipped) = intra_subregion_db_spread(&f, &g).unwrap();
        assert_eq!(spread, 0.0);
        assert_eq!(skipped, 0);
        let mut f2 = f.clone();
        f2.values_w[0] = 20.0; // 10 dB above the rest in sub-region 0
        let (spread2, _) = intra_subregion_db_spread(&f2, &g).unwrap();
        assert!((spread2 - 2.5).abs() < 1e-12);
    }

    #[test]
    fn occupancy_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.socc");
        let map = OccupancyMap { n_side: 4, bits: vec![0, 1].repeat(8), tau_dbm: -92.5 };
        save_occupancy(&map, &path).unwrap();
        assert_eq!(load_occupancy(&path).unwrap(), map);
    }

    #[test]
    fn tau_watts_boundary_uses_dbm_conversion() {
        // bits[k] = 1 iff mean >= 10^((tau_dbm - 30)/10).
        let tau_dbm = -90.0;
        let w = dbm_to_watts(tau_dbm);
        assert!((watts_to_dbm(w) - tau_dbm).abs() < 1e-12);
    }
}
