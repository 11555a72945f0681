//! Dataset generation and storage.
//!
//! A dataset is a set of `(LLR image, occupancy map)` pairs stratified by
//! emitter count: for each count in `[lo, hi]`, `maps_per_count` maps are
//! generated with random emitter placements and powers, fields computed
//! over the terrain, occupancy thresholded, sensors placed and measured,
//! and measurements aggregated. Every pair carries full provenance (seeds
//! plus the exact emitter list), so it can be regenerated bit-exactly.
//!
//! Scenario generation (emitters and fields) is split from realization
//! (sensing and aggregation) so sweeps can reuse one set of fields across
//! many sensing configurations.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{mean_field, occupancy_from_means, GridSpec, OccupancyMap};
use crate::io_util::*;
use crate::llr::{aggregate, read_llr_image, write_llr_image, AggregationMode, Domain, LlrImage};
use crate::propagation::{compute_field, EmitterConfig, FieldMap, PropagationParams};
use crate::seed::{derive_seed, rng_from_seed};
use crate::sensing::{measure_ideal, measure_noisy, one_bit_readings, place_sensors, SensorReading};
use crate::terrain::{load_terrain, synthesize_terrain, TerrainGrid};

/// Minimum emitter power; uniform draws below this are redrawn so every
/// emitter has strictly positive power.
pub const MIN_POWER_W: f64 = 1e-6;

/// Measurement noise model for a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub noise_power_w: f64,
    pub n_samples: u64,
}

/// Where the terrain comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerrainSource {
    Synthesize { width: usize, height: usize, cell_size_m: f64, roughness: f64, seed: u64 },
    File { path: PathBuf },
}

impl TerrainSource {
    pub fn resolve(&self) -> Result<TerrainGrid> {
        match self {
            TerrainSource::Synthesize { width, height, cell_size_m, roughness, seed } => {
                synthesize_terrain(*width, *height, *cell_size_m, *roughness, *seed)
            }
            TerrainSource::File { path } => load_terrain(path),
        }
    }
}

/// Dataset recipe. The total map count is
/// `maps_per_count * (n_emitters_hi - n_emitters_lo + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub n_emitters_lo: u32,
    pub n_emitters_hi: u32,
    pub maps_per_count: u32,
    pub power_lo_w: f64,
    pub power_hi_w: f64,
    pub tau_dbm: f64,
    pub n_sensors: usize,
    pub n_side: usize,
    pub noise: Option<NoiseSpec>,
    pub mode: AggregationMode,
    pub domain: Domain,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            n_emitters_lo: 1,
            n_emitters_hi: 10,
            maps_per_count: 20,
            power_lo_w: 0.0,
            power_hi_w: 2.0,
            tau_dbm: -90.0,
            n_sensors: 50,
            n_side: 32,
            noise: None,
            mode: AggregationMode::Soft,
            domain: Domain::Dbm,
            seed: 42,
        }
    }
}

impl DatasetSpec {
    pub fn total_maps(&self) -> usize {
        self.maps_per_count as usize * (self.n_emitters_hi - self.n_emitters_lo + 1) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_emitters_lo == 0 || self.n_emitters_hi < self.n_emitters_lo {
            return Err(Error::Parameter("need 1 <= n_emitters_lo <= n_emitters_hi".into()));
        }
        if self.maps_per_count == 0 {
            return Err(Error::Parameter("maps_per_count must be >= 1".into()));
        }
        if !(self.power_hi_w > self.power_lo_w) || self.power_lo_w < 0.0 {
            return Err(Error::Parameter("need 0 <= power_lo_w < power_hi_w".into()));
        }
        if self.n_sensors == 0 {
            return Err(Error::Parameter("n_sensors must be >= 1".into()));
        }
        if let Some(ns) = &self.noise {
            if ns.noise_power_w < 0.0 || ns.n_samples == 0 {
                return Err(Error::Parameter("bad noise spec".into()));
            }
        }
        if self.mode == AggregationMode::SoftNoisy && self.domain == Domain::Dbm {
            return Err(Error::Parameter("soft_noisy aggregation requires linear_watts domain".into()));
        }
        Ok(())
    }

    /// Grid spec over the given terrain raster.
    pub fn grid(&self, terrain: &TerrainGrid) -> Result<GridSpec> {
        GridSpec::new(self.n_side, terrain.width, terrain.height, terrain.cell_size_m)
    }
}

/// One generated emitter configuration with its field, before sensing.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub index: u32,
    pub n_emitters: u32,
    pub pair_seed: u64,
    pub sensor_seed: u64,
    pub noise_seed: u64,
    pub emitters: EmitterConfig,
    pub field: FieldMap,
    pub means_w: Vec<f64>,
}

/// Per-pair provenance stored in the dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub pair_index: u32,
    pub n_emitters: u32,
    pub pair_seed: u64,
    pub sensor_seed: u64,
    pub noise_seed: u64,
    /// (x_m, y_m, power_w) per emitter.
    pub emitters: Vec<(f64, f64, f64)>,
}

/// One stored training/test pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPair {
    pub image: LlrImage,
    pub truth: OccupancyMap,
    pub provenance: Provenance,
}

fn draw_emitters(
    rng: &mut rand_chacha::ChaCha8Rng,
    count: u32,
    terrain: &TerrainGrid,
    spec: &DatasetSpec,
) -> EmitterConfig {
    let mut locations = Vec::with_capacity(count as usize);
    let mut powers = Vec::with_capacity(count as usize);
    for _ in 0..count {
        locations.push((
            rng.random_range(0.0..terrain.extent_x_m()),
            rng.random_range(0.0..terrain.extent_y_m()),
        ));
        let mut p = rng.random_range(spec.power_lo_w..spec.power_hi_w);
        while p < MIN_POWER_W {
            p = rng.random_range(spec.power_lo_w..spec.power_hi_w);
        }
        powers.push(p);
    }
    EmitterConfig { locations, powers_w: powers }
}

/// Generate all scenarios for a spec: emitters, fields, and sub-region
/// means, stratified by emitter count. Parallel over pairs; deterministic
/// because every pair derives its own seed from `(spec.seed, index)`.
pub fn gen_scenarios(
    terrain: &TerrainGrid,
    prop: &PropagationParams,
    spec: &DatasetSpec,
) -> Result<Vec<Scenario>> {
    spec.validate()?;
    prop.validate()?;
    let grid = spec.grid(terrain)?;
    let mut plan = Vec::new();
    let mut index = 0u32;
    for count in spec.n_emitters_lo..=spec.n_emitters_hi {
        for _ in 0..spec.maps_per_count {
            plan.push((index, count));
            index += 1;
        }
    }
    plan.par_iter()
        .map(|&(index, count)| {
            let pair_seed = derive_seed(spec.seed, u64::from(index));
            let mut rng = rng_from_seed(derive_seed(pair_seed, 1));
            let emitters = draw_emitters(&mut rng, count, terrain, spec);
            let field = compute_field(terrain, prop, &emitters)?;
            let means_w = mean_field(&field, &grid)?;
            Ok(Scenario {
                index,
                n_emitters: count,
                pair_seed,
                sensor_seed: derive_seed(pair_seed, 2),
                noise_seed: derive_seed(pair_seed, 3),
                emitters,
                field,
                means_w,
            })
        })
        .collect()
}

/// Sensing/aggregation knobs, separable from the scenario so sweeps can
/// re-measure the same fields under different settings.
#[derive(Debug, Clone, Copy)]
pub struct Realization {
    pub tau_dbm: f64,
    pub n_sensors: usize,
    pub noise: Option<NoiseSpec>,
    pub mode: AggregationMode,
    pub domain: Domain,
}

impl Realization {
    pub fn from_spec(spec: &DatasetSpec) -> Self {
        Realization {
            tau_dbm: spec.tau_dbm,
            n_sensors: spec.n_sensors,
            noise: spec.noise,
            mode: spec.mode,
            domain: spec.domain,
        }
    }
}

/// Measure and aggregate one scenario.
pub fn realize(
    scenario: &Scenario,
    grid: &GridSpec,
    r: &Realization,
) -> Result<(LlrImage, OccupancyMap, Vec<SensorReading>)> {
    let sensors = place_sensors(grid, r.n_sensors, scenario.sensor_seed)?;
    let mut readings = match &r.noise {
        None => measure_ideal(&scenario.field, grid, &sensors)?,
        Some(ns) => measure_noisy(
            &scenario.field,
            grid,
            &sensors,
            ns.noise_power_w,
            ns.n_samples,
            scenario.noise_seed,
        )?,
    };
    if r.mode == AggregationMode::Hard {
        readings = one_bit_readings(&readings, r.tau_dbm);
    }
    let image = aggregate(&readings, grid, r.tau_dbm, r.mode, r.domain)?;
    let truth = occupancy_from_means(&scenario.means_w, grid.n_side, r.tau_dbm);
    Ok((image, truth, readings))
}

/// Generate the full pair list in memory.
pub fn generate_pairs(
    terrain: &TerrainGrid,
    prop: &PropagationParams,
    spec: &DatasetSpec,
) -> Result<Vec<DatasetPair>> {
    let grid = spec.grid(terrain)?;
    let r = Realization::from_spec(spec);
    let scenarios = gen_scenarios(terrain, prop, spec)?;
    scenarios
        .par_iter()
        .map(|s| {
            let (image, truth, _) = realize(s, &grid, &r)?;
            Ok(DatasetPair {
                image,
                truth,
                provenance: Provenance {
                    pair_index: s.index,
                    n_emitters: s.n_emitters,
                    pair_seed: s.pair_seed,
                    sensor_seed: s.sensor_seed,
                    noise_seed: s.noise_seed,
                    emitters: s
                        .emitters
                        .locations
                        .iter()
                        .zip(&s.emitters.powers_w)
                        .map(|(&(x, y), &p)| (x, y, p))
                        .collect(),
                },
            })
        })
        .collect()
}

/// Regenerate one pair bit-exactly from its provenance (stored emitters,
/// derived sensor and noise streams). Also returns the sensor readings,
/// which the stored pair does not carry.
pub fn regenerate_pair(
    terrain: &TerrainGrid,
    prop: &PropagationParams,
    spec: &DatasetSpec,
    prov: &Provenance,
) -> Result<(DatasetPair, Vec<SensorReading>)> {
    let grid = spec.grid(terrain)?;
    let emitters = EmitterConfig::new(
        prov.emitters.iter().map(|&(x, y, _)| (x, y)).collect(),
        prov.emitters.iter().map(|&(_, _, p)| p).collect(),
    )?;
    let field = compute_field(terrain, prop, &emitters)?;
    let means_w = mean_field(&field, &grid)?;
    let scenario = Scenario {
        index: prov.pair_index,
        n_emitters: prov.n_emitters,
        pair_seed: prov.pair_seed,
        sensor_seed: prov.sensor_seed,
        noise_seed: prov.noise_seed,
        emitters,
        field,
        means_w,
    };
    let (image, truth, readings) = realize(&scenario, &grid, &Realization::from_spec(spec))?;
    Ok((
        DatasetPair { image, truth, provenance: prov.clone() },
        readings,
    ))
}

// ---------------------------------------------------------------------------
// Dataset file format
// ---------------------------------------------------------------------------

const DATASET_MAGIC: &[u8; 4] = b"SDST";
const DATASET_VERSION: u32 = 1;

/// Everything needed to regenerate a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub terrain: TerrainSource,
    pub propagation: PropagationParams,
    pub dataset: DatasetSpec,
}

fn write_provenance<W: Write>(w: &mut W, p: &Provenance) -> Result<()> {
    write_u32(w, p.pair_index)?;
    write_u32(w, p.n_emitters)?;
    write_u64(w, p.pair_seed)?;
    write_u64(w, p.sensor_seed)?;
    write_u64(w, p.noise_seed)?;
    write_u32(w, p.emitters.len() as u32)?;
    for &(x, y, pw) in &p.emitters {
        write_f64(w, x)?;
        write_f64(w, y)?;
        write_f64(w, pw)?;
    }
    Ok(())
}

fn read_provenance<R: Read>(r: &mut R) -> Result<Provenance> {
    let pair_index = read_u32(r)?;
    let n_emitters = read_u32(r)?;
    let pair_seed = read_u64(r)?;
    let sensor_seed = read_u64(r)?;
    let noise_seed = read_u64(r)?;
    let n = read_u32(r)? as usize;
    let mut emitters = Vec::with_capacity(n);
    for _ in 0..n {
        emitters.push((read_f64(r)?, read_f64(r)?, read_f64(r)?));
    }
    Ok(Provenance { pair_index, n_emitters, pair_seed, sensor_seed, noise_seed, emitters })
}

/// Generate a dataset and persist it.
pub fn generate_dataset(header: &DatasetHeader, path: &Path) -> Result<DatasetStats> {
    let terrain = header.terrain.resolve()?;
    let pairs = generate_pairs(&terrain, &header.propagation, &header.dataset)?;
    write_dataset(header, &pairs, path)?;
    Ok(stats_of(&pairs))
}

/// Write pairs with their header to a dataset file.
pub fn write_dataset(header: &DatasetHeader, pairs: &[DatasetPair], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    write_u32(&mut w, DATASET_VERSION)?;
    let header_toml =
        toml::to_string(header).map_err(|e| Error::Config(format!("header serialize: {e}")))?;
    write_block(&mut w, header_toml.as_bytes())?;
    write_u32(&mut w, pairs.len() as u32)?;
    for pair in pairs {
        write_llr_image(&mut w, &pair.image)?;
        crate::grid::write_occupancy(&mut w, &pair.truth)?;
        write_provenance(&mut w, &pair.provenance)?;
    }
    Ok(())
}

/// Streaming dataset reader; iterate to get pairs one at a time.
pub struct DatasetReader {
    pub header: DatasetHeader,
    pub total: usize,
    read: usize,
    r: BufReader<fs::File>,
}

impl DatasetReader {
    pub fn open(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(fs::File::open(path)?);
        expect_magic(&mut r, DATASET_MAGIC)?;
        let version = read_u32(&mut r)?;
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let header_bytes = read_block(&mut r)?;
        let header_str = String::from_utf8(header_bytes)
            .map_err(|_| Error::Format("dataset header is not UTF-8".into()))?;
        let header: DatasetHeader = toml::from_str(&header_str)
            .map_err(|e| Error::Format(format!("dataset header parse: {e}")))?;
        let total = read_u32(&mut r)? as usize;
        Ok(DatasetReader { header, total, read: 0, r })
    }
}

impl Iterator for DatasetReader {
    type Item = Result<DatasetPair>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.read >= self.total {
            return None;
        }
        self.read += 1;
        let pair = (|| {
            let image = read_llr_image(&mut self.r)?;
            let truth = crate::grid::read_occupancy(&mut self.r)?;
            let provenance = read_provenance(&mut self.r)?;
            Ok(DatasetPair { image, truth, provenance })
        })();
        Some(pair)
    }
}

/// Load a whole dataset into memory.
pub fn load_dataset(path: &Path) -> Result<(DatasetHeader, Vec<DatasetPair>)> {
    let reader = DatasetReader::open(path)?;
    let header = reader.header.clone();
    let pairs: Result<Vec<_>> = reader.collect();
    Ok((header, pairs?))
}

/// Pairs as `(image, truth)` for training/eval entry points.
pub fn as_training_pairs(pairs: &[DatasetPair]) -> Vec<(LlrImage, OccupancyMap)> {
    pairs.iter().map(|p| (p.image.clone(), p.truth.clone())).collect()
}

// ---------------------------------------------------------------------------
// Stats
// ---------------------------------------------------------------------------

/// Exact dataset summary.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub total: usize,
    pub per_count: BTreeMap<u32, usize>,
    /// Mean occupied fraction per emitter count.
    pub occupancy_by_count: BTreeMap<u32, f64>,
    /// Histogram of occupied fraction over 10 equal bins of [0, 1].
    pub occupancy_histogram: [usize; 10],
}

pub fn stats_of(pairs: &[DatasetPair]) -> DatasetStats {
    let mut per_count = BTreeMap::new();
    let mut frac_sum: BTreeMap<u32, f64> = BTreeMap::new();
    let mut histogram = [0usize; 10];
    for p in pairs {
        *per_count.entry(p.provenance.n_emitters).or_insert(0) += 1;
        let frac = p.truth.occupied_fraction();
        *frac_sum.entry(p.provenance.n_emitters).or_insert(0.0) += frac;
        let bin = ((frac * 10.0) as usize).min(9);
        histogram[bin] += 1;
    }
    let occupancy_by_count = frac_sum
        .iter()
        .map(|(&c, &s)| (c, s / per_count[&c] as f64))
        .collect();
    DatasetStats { total: pairs.len(), per_count, occupancy_by_count, occupancy_histogram: histogram }
}

/// Summary of a dataset file, streamed.
pub fn dataset_stats(path: &Path) -> Result<DatasetStats> {
    let reader = DatasetReader::open(path)?;
    let pairs: Result<Vec<_>> = reader.collect();
    Ok(stats_of(&pairs?))
}

/// Derive the disjoint seed stream used for test splits.
pub fn test_split_seed(train_seed: u64) -> u64 {
    derive_seed(train_seed, 0x7e57_0000)
}
