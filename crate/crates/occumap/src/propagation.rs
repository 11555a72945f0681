//! Radio propagation forward model.
//!
//! Computes per-cell linear power fields from a set of emitters over a
//! terrain raster: log-distance path loss, single knife-edge diffraction
//! from the strongest terrain obstruction on the emitter-receiver line, and
//! optional correlated log-normal shadowing. Multi-emitter fields are the
//! linear superposition of per-emitter unit-power gains scaled by the
//! emitter powers.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::*;
use crate::seed::{derive_seed, rng_from_seed};
use crate::terrain::TerrainGrid;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Free-space path loss in dB at `distance_m` for a carrier in MHz.
pub fn free_space_loss_db(frequency_mhz: f64, distance_m: f64) -> f64 {
    20.0 * (4.0 * std::f64::consts::PI * distance_m * frequency_mhz * 1e6 / SPEED_OF_LIGHT).log10()
}

/// Propagation model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagationParams {
    pub frequency_mhz: f64,
    pub tx_height_m: f64,
    pub rx_height_m: f64,
    pub path_loss_exponent: f64,
    pub reference_loss_db: f64,
    pub reference_distance_m: f64,
    pub diffraction_enabled: bool,
    pub shadowing_sigma_db: f64,
    pub shadowing_corr_m: f64,
    pub rng_seed: u64,
}

impl Default for PropagationParams {
    fn default() -> Self {
        let frequency_mhz = 2100.0;
        PropagationParams {
            frequency_mhz,
            tx_height_m: 20.0,
            rx_height_m: 1.5,
            path_loss_exponent: 3.0,
            reference_loss_db: free_space_loss_db(frequency_mhz, 1.0),
            reference_distance_m: 1.0,
            diffraction_enabled: true,
            shadowing_sigma_db: 0.0,
            shadowing_corr_m: 500.0,
            rng_seed: 0,
        }
    }
}

impl PropagationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.frequency_mhz > 0.0) {
            return Err(Error::Parameter("frequency_mhz must be > 0".into()));
        }
        if !(self.tx_height_m > 0.0) || !(self.rx_height_m > 0.0) {
            return Err(Error::Parameter("antenna heights must be > 0".into()));
        }
        if !(self.path_loss_exponent > 0.0) {
            return Err(Error::Parameter("path_loss_exponent must be > 0".into()));
        }
        if !(self.reference_distance_m > 0.0) {
            return Err(Error::Parameter("reference_distance_m must be > 0".into()));
        }
        if self.shadowing_sigma_db < 0.0 || !(self.shadowing_corr_m > 0.0) {
            return Err(Error::Parameter("bad shadowing parameters".into()));
        }
        Ok(())
    }

    fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / (self.frequency_mhz * 1e6)
    }
}

/// Emitter locations (meters) and powers (Watts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmitterConfig {
    pub locations: Vec<(f64, f64)>,
    pub powers_w: Vec<f64>,
}

impl EmitterConfig {
    pub fn new(locations: Vec<(f64, f64)>, powers_w: Vec<f64>) -> Result<Self> {
        if locations.len() != powers_w.len() {
            return Err(Error::Parameter(format!(
                "{} locations but {} powers",
                locations.len(),
                powers_w.len()
            )));
        }
        if powers_w.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::Parameter("emitter powers must be finite and > 0".into()));
        }
        Ok(EmitterConfig { locations, powers_w })
    }

    pub fn count(&self) -> usize {
        self.locations.len()
    }

    pub fn empty() -> Self {
        EmitterConfig { locations: Vec::new(), powers_w: Vec::new() }
    }
}

/// Linear-power field over the fine raster (Watts, row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMap {
    pub width: usize,
    pub height: usize,
    pub values_w: Vec<f64>,
}

impl FieldMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        FieldMap { width, height, values_w: vec![0.0; width * height] }
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values_w[y * self.width + x]
    }
}

// ---------------------------------------------------------------------------
// Gain model
// ---------------------------------------------------------------------------

/// Knife-edge diffraction loss in dB for Fresnel parameter `v`.
/// Standard approximation: 6.9 + 20 log10(sqrt((v-0.1)^2 + 1) + v - 0.1)
/// for v > -0.78, zero otherwise.
pub fn knife_edge_loss_db(v: f64) -> f64 {
    if v > -0.78 {
        let t = v - 0.1;
        6.9 + 20.0 * ((t * t + 1.0).sqrt() + t).log10()
    } else {
        0.0
    }
}

/// Largest Fresnel parameter over terrain obstructions between the emitter
/// antenna and the receiver antenna, walking the line at one sample per
/// cell length (endpoints excluded).
fn max_fresnel_v(
    terrain: &TerrainGrid,
    params: &PropagationParams,
    from: (f64, f64),
    to: (f64, f64),
) -> f64 {
    let dx = to.0 - from.0;
    let dy = to.1 - from.1;
    let dist = (dx * dx + dy * dy).sqrt();
    let n_steps = (dist / terrain.cell_size_m).ceil() as usize;
    if n_steps < 2 {
        return f64::NEG_INFINITY;
    }
    let h_tx = terrain.altitude_at(from.0, from.1) + params.tx_height_m;
    let h_rx = terrain.altitude_at(to.0, to.1) + params.rx_height_m;
    let lambda = params.wavelength_m();
    let mut v_max = f64::NEG_INFINITY;
    for i in 1..n_steps {
        let t = i as f64 / n_steps as f64;
        let x = from.0 + t * dx;
        let y = from.1 + t * dy;
        let ground = terrain.altitude_at(x, y);
        let line = h_tx + t * (h_rx - h_tx);
        let h = ground - line;
        let v = h * (2.0 / (lambda * dist * t * (1.0 - t))).sqrt();
        if v > v_max {
            v_max = v;
        }
    }
    v_max
}

/// Correlated log-normal shadowing field in dB: unit-variance Gaussian noise
/// on a coarse lattice of spacing `shadowing_corr_m`, bilinearly interpolated
/// to the raster and scaled by `shadowing_sigma_db`. The draw is seeded from
/// `(rng_seed, emitter coordinates)` so identical inputs give identical
/// fields.
fn shadowing_field_db(
    terrain: &TerrainGrid,
    params: &PropagationParams,
    emitter: (f64, f64),
) -> Vec<f64> {
    let spacing_cells = (params.shadowing_corr_m / terrain.cell_size_m).max(1.0);
    let nx = (terrain.width as f64 / spacing_cells).ceil() as usize + 2;
    let ny = (terrain.height as f64 / spacing_cells).ceil() as usize + 2;
    let seed = derive_seed(
        params.rng_seed,
        emitter.0.to_bits() ^ emitter.1.to_bits().rotate_left(17),
    );
    let mut rng = rng_from_seed(seed);
    let lattice: Vec<f64> = (0..nx * ny)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * params.shadowing_sigma_db
        })
        .collect();
    let mut out = Vec::with_capacity(terrain.width * terrain.height);
    for y in 0..terrain.height {
        for x in 0..terrain.width {
            let fx = x as f64 / spacing_cells;
            let fy = y as f64 / spacing_cells;
            let x0 = fx.floor() as usize;
            let y0 = fy.floor() as usize;
            let dx = fx - x0 as f64;
            let dy = fy - y0 as f64;
            let x1 = (x0 + 1).min(nx - 1);
            let y1 = (y0 + 1).min(ny - 1);
            let v00 = lattice[y0 * nx + x0];
            let v01 = lattice[y0 * nx + x1];
            let v10 = lattice[y1 * nx + x0];
            let v11 = lattice[y1 * nx + x1];
            let v0 = v00 * (1.0 - dx) + v01 * dx;
            let v1 = v10 * (1.0 - dx) + v11 * dx;
            out.push(v0 * (1.0 - dy) + v1 * dy);
        }
    }
    out
}

/// Linear gain per raster cell from a unit-power emitter.
///
/// Loss is `reference_loss_db + 10 * exponent * log10(max(d, d_ref)/d_ref)`
/// plus knife-edge diffraction from the strongest obstruction (when enabled)
/// plus the shadowing draw (when sigma > 0); gain is `10^(-loss/10)`.
/// The emitter's own cell uses `d = reference_distance_m`.
pub fn unit_power_gain(
    terrain: &TerrainGrid,
    params: &PropagationParams,
    emitter: (f64, f64),
) -> Result<FieldMap> {
    params.validate()?;
    if !terrain.contains(emitter.0, emitter.1) {
        return Err(Error::Placement(format!(
            "emitter at ({}, {}) outside region {}x{} m",
            emitter.0,
            emitter.1,
            terrain.extent_x_m(),
            terrain.extent_y_m()
        )));
    }

    let shadow = if params.shadowing_sigma_db > 0.0 {
        Some(shadowing_field_db(terrain, params, emitter))
    } else {
        None
    };

    let cell = terrain.cell_size_m;
    let width = terrain.width;
    let mut values_w = vec![0.0f64; width * terrain.height];
    values_w
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, out) in row.iter_mut().enumerate() {
                let cx = (x as f64 + 0.5) * cell;
                let cy = (y as f64 + 0.5) * cell;
                let d = ((cx - emitter.0).powi(2) + (cy - emitter.1).powi(2))
                    .sqrt()
                    .max(params.reference_distance_m);
                let mut loss_db = params.reference_loss_db
                    + 10.0 * params.path_loss_exponent * (d / params.reference_distance_m).log10();
                if params.diffraction_enabled {
                    let v = max_fresnel_v(terrain, params, emitter, (cx, cy));
                    loss_db += knife_edge_loss_db(v);
                }
                if let Some(s) = &shadow {
                    loss_db += s[y * width + x];
                }
                *out = 10f64.powf(-loss_db / 10.0);
            }
        });

    Ok(FieldMap { width, height: terrain.height, values_w })
}

/// Multi-emitter field: elementwise sum over emitters of unit-power gain
/// scaled by the emitter power, accumulated in ascending emitter order.
pub fn compute_field(
    terrain: &TerrainGrid,
    params: &PropagationParams,
    emitters: &EmitterConfig,
) -> Result<FieldMap> {
    let gains: Vec<FieldMap> = emitters
        .locations
        .iter()
        .map(|&e| unit_power_gain(terrain, params, e))
        .collect::<Result<_>>()?;
    let mut field = FieldMap::zeros(terrain.width, terrain.height);
    for (gain, &p) in gains.iter().zip(&emitters.powers_w) {
        for (acc, g) in field.values_w.iter_mut().zip(&gain.values_w) {
            *acc += g * p;
        }
    }
    Ok(field)
}

// ---------------------------------------------------------------------------
// FieldMap binary format
// ---------------------------------------------------------------------------

const FIELD_MAGIC: &[u8; 4] = b"SFLD";

/// Write a field map: magic `SFLD`, u32 width, u32 height, then
/// width*height f64 little-endian values (Watts, row-major).
pub fn save_field(field: &FieldMap, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    std::io::Write::write_all(&mut w, FIELD_MAGIC)?;
    write_u32(&mut w, field.width as u32)?;
    write_u32(&mut w, field.height as u32)?;
    for &v in &field.values_w {
        write_f64(&mut w, v)?;
    }
    Ok(())
}

pub fn load_field(path: &Path) -> Result<FieldMap> {
    let mut r = BufReader::new(fs::File::open(path)?);
    expect_magic(&mut r, FIELD_MAGIC)?;
    let width = read_u32(&mut r)? as usize;
    let height = read_u32(&mut r)? as usize;
    let mut values_w = Vec::with_capacity(width * height);
    for _ in 0..width * height {
        values_w.push(read_f64(&mut r)?);
    }
    Ok(FieldMap { width, height, values_w })
}
