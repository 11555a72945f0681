//! Sensor placement and power measurement.
//!
//! Sensors sit on the fine raster's lattice points and report the received
//! power. Noisy mode simulates the complex baseband samples directly: the
//! sum over uncorrelated emitters collapses to one circular complex Gaussian
//! with variance equal to the local field power, thermal noise is added per
//! sample, and the sensor reports the mean-square value. Nothing is dropped,
//! so the cross term usually neglected in closed-form treatments is present
//! in the simulated measurements.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::propagation::FieldMap;
use crate::seed::{derive_seed, rng_from_seed};
use crate::units::dbm_to_watts;

/// Sentinel for the sample count of an ideal (noise-free) reading.
pub const N_SAMPLES_IDEAL: u64 = u64::MAX;

/// Sensor locations in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSet {
    pub locations: Vec<(f64, f64)>,
    pub seed: u64,
}

impl SensorSet {
    pub fn count(&self) -> usize {
        self.locations.len()
    }
}

/// One power measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorReading {
    pub location: (f64, f64),
    /// Measured power in Watts.
    pub measured_w: f64,
    /// Noise power nu^2 known to the sensor (Watts).
    pub noise_power_w: f64,
    /// Number of averaged samples; `N_SAMPLES_IDEAL` for ideal readings.
    pub n_samples: u64,
    /// Hard decision sgn(m - tau), present only in one-bit mode.
    pub one_bit: Option<i8>,
}

/// Place `n_sensors` sensors uniformly over the raster's lattice points
/// (cell centers). Draws are independent, so duplicates are allowed.
pub fn place_sensors(grid: &GridSpec, n_sensors: usize, seed: u64) -> Result<SensorSet> {
    if n_sensors == 0 {
        return Err(Error::EmptySet("n_sensors must be at least 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let locations = (0..n_sensors)
        .map(|_| {
            let cx = rng.random_range(0..grid.raster_width);
            let cy = rng.random_range(0..grid.raster_height);
            (
                (cx as f64 + 0.5) * grid.cell_size_m,
                (cy as f64 + 0.5) * grid.cell_size_m,
            )
        })
        .collect();
    Ok(SensorSet { locations, seed })
}

fn field_at_location(field: &FieldMap, grid: &GridSpec, loc: (f64, f64)) -> Result<f64> {
    if !(loc.0 >= 0.0 && loc.0 < grid.extent_x_m() && loc.1 >= 0.0 && loc.1 < grid.extent_y_m()) {
        return Err(Error::Placement(format!("sensor at ({}, {}) outside region", loc.0, loc.1)));
    }
    let cx = ((loc.0 / grid.cell_size_m) as usize).min(field.width - 1);
    let cy = ((loc.1 / grid.cell_size_m) as usize).min(field.height - 1);
    Ok(field.at(cx, cy))
}

/// Ideal measurements: the field value at each sensor's raster cell.
pub fn measure_ideal(
    field: &FieldMap,
    grid: &GridSpec,
    sensors: &SensorSet,
) -> Result<Vec<SensorReading>> {
    sensors
        .locations
        .iter()
        .map(|&loc| {
            Ok(SensorReading {
                location: loc,
                measured_w: field_at_location(field, grid, loc)?,
                noise_power_w: 0.0,
                n_samples: N_SAMPLES_IDEAL,
                one_bit: None,
            })
        })
        .collect()
}

/// Noisy measurements: each sensor draws `n_samples` complex samples
/// `y = sqrt(f(s)) u + w` with `u ~ CN(0, 1)` and `w ~ CN(0, nu^2)`, and
/// reports the mean of `|y|^2`. Per-sensor RNG streams are derived from
/// `(seed, sensor index)`.
pub fn measure_noisy(
    field: &FieldMap,
    grid: &GridSpec,
    sensors: &SensorSet,
    noise_power_w: f64,
    n_samples: u64,
    seed: u64,
) -> Result<Vec<SensorReading>> {
    if noise_power_w < 0.0 {
        return Err(Error::Parameter("noise power must be >= 0".into()));
    }
    if n_samples == 0 {
        return Err(Error::Parameter("n_samples must be >= 1".into()));
    }
    let powers: Vec<f64> = sensors
        .locations
        .iter()
        .map(|&loc| field_at_location(field, grid, loc))
        .collect::<Result<_>>()?;

    let readings: Vec<SensorReading> = powers
        .par_iter()
        .enumerate()
        .map(|(j, &f_s)| {
            let mut rng = rng_from_seed(derive_seed(seed, j as u64));
            let sig_amp = (f_s / 2.0).sqrt();
            let noise_amp = (noise_power_w / 2.0).sqrt();
            let mut acc = 0.0f64;
            for _ in 0..n_samples {
                let ur: f64 = StandardNormal.sample(&mut rng);
                let ui: f64 = StandardNormal.sample(&mut rng);
                let wr: f64 = StandardNormal.sample(&mut rng);
                let wi: f64 = StandardNormal.sample(&mut rng);
                let re = sig_amp * ur + noise_amp * wr;
                let im = sig_amp * ui + noise_amp * wi;
                acc += re * re + im * im;
            }
            SensorReading {
                location: sensors.locations[j],
                measured_w: acc / n_samples as f64,
                noise_power_w,
                n_samples,
                one_bit: None,
            }
        })
        .collect();
    Ok(readings)
}

/// Convert readings to hard decisions: `one_bit = sgn(m - tau)` with
/// `sgn(0) = 0`. The measured value is retained for diagnostics but must
/// not feed aggregation in hard mode.
pub fn one_bit_readings(readings: &[SensorReading], tau_dbm: f64) -> Vec<SensorReading> {
    let tau_w = dbm_to_watts(tau_dbm);
    readings
        .iter()
        .map(|r| {
            let d = r.measured_w - tau_w;
            let bit = if d > 0.0 {
                1
            } else if d < 0.0 {
                -1
            } else {
                0
            };
            SensorReading { one_bit: Some(bit), ..r.clone() }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Readings CSV
// ---------------------------------------------------------------------------

/// Write readings as CSV with header `x_m,y_m,measured_w,noise_w,n_samples,one_bit`.
/// The ideal-sample sentinel serializes as `inf`; an absent hard decision is
/// an empty field.
pub fn save_readings(readings: &[SensorReading], path: &Path) -> Result<()> {
    let mut out = String::from("x_m,y_m,measured_w,noise_w,n_samples,one_bit\n");
    for r in readings {
        let n = if r.n_samples == N_SAMPLES_IDEAL {
            "inf".to_string()
        } else {
            r.n_samples.to_string()
        };
        let ob = r.one_bit.map(|b| b.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.location.0, r.location.1, r.measured_w, r.noise_power_w, n, ob
        )
        .unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_readings(path: &Path) -> Result<Vec<SensorReading>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "x_m,y_m,measured_w,noise_w,n_samples,one_bit" => {}
        _ => return Err(Error::Format("bad readings CSV header".into())),
    }
    let mut readings = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Parse { line: idx + 1, msg: "expected 6 fields".into() });
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse { line: idx + 1, msg: format!("bad number `{s}`") })
        };
        let n_samples = if fields[4] == "inf" {
            N_SAMPLES_IDEAL
        } else {
            fields[4]
                .parse()
                .map_err(|_| Error::Parse { line: idx + 1, msg: "bad n_samples".into() })?
        };
        let one_bit = if fields[5].is_empty() {
            None
        } else {
            Some(
                fields[5]
                    .parse()
                    .map_err(|_| Error::Parse { line: idx + 1, msg: "bad one_bit".into() })?,
            )
        };
        readings.push(SensorReading {
            location: (parse(fields[0])?, parse(fields[1])?),
            measured_w: parse(fields[2])?,
            noise_power_w: parse(fields[3])?,
            n_samples,
            one_bit,
        });
    }
    Ok(readings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::watts_to_dbm;

    fn grid16() -> GridSpec {
        GridSpec::new(4, 16, 16, 50.0).unwrap()
    }

    fn const_field(v: f64) -> FieldMap {
        FieldMap { width: 16, height: 16, values_w: vec![v; 256] }
    }

    #[test]
    fn placement_is_deterministic() {
        let g = grid16();
        let a = place_sensors(&g, 100, 1).unwrap();
        let b = place_sensors(&g, 100, 1).unwrap();
        assert_eq!(a, b);
        let c = place_sensors(&g, 100, 2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn single_sensor_inside_region() {
        let g = grid16();
        let s = place_sensors(&g, 1, 5).unwrap();
        let (x, y) = s.locations[0];
        assert!(x >= 0.0 && x < g.extent_x_m());
        assert!(y >= 0.0 && y < g.extent_y_m());
    }

    #[test]
    fn zero_sensors_is_error() {
        assert!(matches!(place_sensors(&grid16(), 0, 1), Err(Error::EmptySet(_))));
    }

    #[test]
    fn placement_uniformity_chi_square() {
        // Per-quadrant counts within 4 sigma of the uniform expectation.
        let g = GridSpec::new(32, 128, 128, 50.0).unwrap();
        let s = place_sensors(&g, 10_000, 7).unwrap();
        let half_x = g.extent_x_m() / 2.0;
        let half_y = g.extent_y_m() / 2.0;
        let mut counts = [0usize; 4];
        for &(x, y) in &s.locations {
            let q = usize::from(x >= half_x) + 2 * usize::from(y >= half_y);
            counts[q] += 1;
        }
        let expected = 2500.0;
        let sigma = (10_000.0f64 * 0.25 * 0.75).sqrt();
        for (q, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expected).abs() <= 4.0 * sigma,
                "quadrant {q}: {c} vs {expected} +- {sigma}"
            );
        }
    }

    #[test]
    fn ideal_reading_of_constant_field() {
        let g = grid16();
        let f = const_field(3.0);
        let s = place_sensors(&g, 20, 3).unwrap();
        let r = measure_ideal(&f, &g, &s).unwrap();
        assert!(r.iter().all(|r| r.measured_w == 3.0));
        // The cell-vs-mean discrepancy z(s) is zero on a constant field.
        let means = crate::grid::mean_field(&f, &g).unwrap();
        for r in &r {
            let k = g.subregion_of_point(r.location.0, r.location.1).unwrap();
            assert_eq!(r.measured_w - means[k], 0.0);
        }
    }

    #[test]
    fn ideal_reading_matches_raster_lookup() {
        let g = grid16();
        let mut f = const_field(0.0);
        for (i, v) in f.values_w.iter_mut().enumerate() {
            *v = i as f64;
        }
        let s = place_sensors(&g, 50, 9).unwrap();
        let r = measure_ideal(&f, &g, &s).unwrap();
        for r in &r {
            let cx = (r.location.0 / 50.0) as usize;
            let cy = (r.location.1 / 50.0) as usize;
            assert_eq!(r.measured_w, f.values_w[cy * 16 + cx]);
        }
    }

    #[test]
    fn noise_free_limit() {
        // nu^2 = 0, large N: measured converges to f(s) within 3 f(s)/sqrt(N).
        let g = grid16();
        let f = const_field(1.0);
        let s = place_sensors(&g, 8, 4).unwrap();
        let n = 10_000u64;
        let r = measure_noisy(&f, &g, &s, 0.0, n, 11).unwrap();
        for r in &r {
            assert!((r.measured_w - 1.0).abs() <= 3.0 / (n as f64).sqrt());
        }
    }

    #[test]
    fn noise_only_moments() {
        // f = 0, nu^2 = 1, N = 1024: mean ~= 1 +- 0.001, variance ~= 1/1024 +- 5%.
        let g = GridSpec::new(2, 2, 2, 50.0).unwrap();
        let f = FieldMap { width: 2, height: 2, values_w: vec![0.0; 4] };
        let n_draws = 100_000usize;
        let s = SensorSet { locations: vec![(25.0, 25.0); n_draws], seed: 0 };
        let r = measure_noisy(&f, &g, &s, 1.0, 1024, 21).unwrap();
        let mean = r.iter().map(|r| r.measured_w).sum::<f64>() / n_draws as f64;
        let var = r.iter().map(|r| (r.measured_w - mean).powi(2)).sum::<f64>() / n_draws as f64;
        assert!((mean - 1.0).abs() < 1e-3, "mean {mean}");
        let expected_var = 1.0 / 1024.0;
        assert!((var - expected_var).abs() / expected_var < 0.05, "var {var}");
    }

    #[test]
    fn independence_across_sensors() {
        let g = GridSpec::new(2, 2, 2, 50.0).unwrap();
        let f = FieldMap { width: 2, height: 2, values_w: vec![0.0; 4] };
        let n_pairs = 100_000usize;
        let s = SensorSet { locations: vec![(25.0, 25.0); 2 * n_pairs], seed: 0 };
        let r = measure_noisy(&f, &g, &s, 1.0, 8, 33).unwrap();
        let a: Vec<f64> = r.iter().step_by(2).map(|r| r.measured_w).collect();
        let b: Vec<f64> = r.iter().skip(1).step_by(2).map(|r| r.measured_w).collect();
        let ma = a.iter().sum::<f64>() / n_pairs as f64;
        let mb = b.iter().sum::<f64>() / n_pairs as f64;
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for i in 0..n_pairs {
            cov += (a[i] - ma) * (b[i] - mb);
            va += (a[i] - ma).powi(2);
            vb += (b[i] - mb).powi(2);
        }
        let corr = cov / (va.sqrt() * vb.sqrt());
        assert!(corr.abs() < 0.01, "corr {corr}");
    }

    #[test]
    fn negative_noise_power_rejected() {
        let g = grid16();
        let f = const_field(1.0);
        let s = place_sensors(&g, 2, 1).unwrap();
        assert!(matches!(
            measure_noisy(&f, &g, &s, -1.0, 8, 1),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn one_bit_signs() {
        let tau_dbm = -90.0;
        let tau_w = dbm_to_watts(tau_dbm);
        let mk = |m: f64| SensorReading {
            location: (0.0, 0.0),
            measured_w: m,
            noise_power_w: 0.0,
            n_samples: N_SAMPLES_IDEAL,
            one_bit: None,
        };
        let rs = vec![mk(tau_w), mk(2.0 * tau_w), mk(0.5 * tau_w)];
        let out = one_bit_readings(&rs, tau_dbm);
        assert_eq!(out[0].one_bit, Some(0));
        assert_eq!(out[1].one_bit, Some(1));
        assert_eq!(out[2].one_bit, Some(-1));
        // Elementwise sign oracle on a mixed batch.
        for (r, o) in rs.iter().zip(&out) {
            let expect = match r.measured_w.partial_cmp(&tau_w).unwrap() {
                std::cmp::Ordering::Greater => 1,
                std::cmp::Ordering::Less => -1,
                std::cmp::Ordering::Equal => 0,
            };
            assert_eq!(o.one_bit, Some(expect));
            assert_eq!(o.measured_w, r.measured_w);
        }
    }

    #[test]
    fn hard_decisions_invariant_to_joint_rescaling() {
        let mk = |m: f64| SensorReading {
            location: (0.0, 0.0),
            measured_w: m,
            noise_power_w: 0.0,
            n_samples: N_SAMPLES_IDEAL,
            one_bit: None,
        };
        let tau_dbm = -90.0;
        let rs: Vec<SensorReading> =
            [0.3e-12, 1e-12, 4e-12].iter().map(|&m| mk(m)).collect();
        let base = one_bit_readings(&rs, tau_dbm);
        let scale = 1000.0;
        let scaled: Vec<SensorReading> = rs.iter().map(|r| mk(r.measured_w * scale)).collect();
        let shifted = one_bit_readings(&scaled, tau_dbm + 10.0 * scale.log10());
        for (a, b) in base.iter().zip(&shifted) {
            assert_eq!(a.one_bit, b.one_bit);
        }
    }

    #[test]
    fn readings_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let g = grid16();
        let f = const_field(2.5e-12);
        let s = place_sensors(&g, 10, 2).unwrap();
        let mut r = measure_ideal(&f, &g, &s).unwrap();
        r = one_bit_readings(&r, watts_to_dbm(1e-12));
        save_readings(&r, &path).unwrap();
        let l = load_readings(&path).unwrap();
        assert_eq!(r, l);
    }
}
