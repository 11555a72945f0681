//! Log-likelihood-ratio formation and aggregation.
//!
//! Sensor measurements become (approximate) LLRs for the occupied-versus-
//! unoccupied hypothesis and are pooled per sub-region into a fixed-size
//! image: each sub-region holds the mean LLR of its sensors, empty
//! sub-regions hold zero, and the whole image is scaled to unit population
//! variance. This image is the network input regardless of how many sensors
//! reported.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::io_util::*;
use crate::sensing::SensorReading;
use crate::units::{dbm_to_watts, watts_to_dbm};

// ---------------------------------------------------------------------------
// LLR forms
// ---------------------------------------------------------------------------

/// Exact GLRT log-likelihood ratio for a Gaussian measurement model:
/// `(m - tau) |m - tau| / (2 zeta^2)`.
pub fn glrt_llr(m: f64, tau: f64, zeta_sq: f64) -> Result<f64> {
    if !(zeta_sq > 0.0) {
        return Err(Error::Parameter(format!("zeta_sq must be > 0, got {zeta_sq}")));
    }
    let d = m - tau;
    Ok(d * d.abs() / (2.0 * zeta_sq))
}

/// Approximate LLR reported by sensors: `m - tau`. The absolute-value
/// factor and the constant `1/(2 zeta^2)` are dropped for numerical
/// stability over the large dynamic range of power measurements.
pub fn approx_llr(m: f64, tau: f64) -> f64 {
    m - tau
}

/// GLRT LLR for noisy power measurements with known noise power `nu^2`
/// averaged over `n` samples. Piecewise around `m = nu^2`:
/// `|m - nu^2 - tau| (m - nu^2 - tau) / (2 (nu^4/n + zeta^2))` when
/// `m >= nu^2`, else `tau (2m - 2 nu^2 - tau) / (2 (nu^4/n + zeta^2))`.
pub fn noisy_glrt_llr(m: f64, tau: f64, noise_power: f64, n_samples: u64, zeta_sq: f64) -> Result<f64> {
    if noise_power < 0.0 {
        return Err(Error::Parameter("noise power must be >= 0".into()));
    }
    if n_samples == 0 {
        return Err(Error::Parameter("n_samples must be >= 1".into()));
    }
    if !(zeta_sq > 0.0) {
        return Err(Error::Parameter(format!("zeta_sq must be > 0, got {zeta_sq}")));
    }
    let denom = 2.0 * (noise_power.powi(4) / n_samples as f64 + zeta_sq);
    let d = m - noise_power - tau;
    if m >= noise_power {
        Ok(d.abs() * d / denom)
    } else {
        Ok(tau * (2.0 * m - 2.0 * noise_power - tau) / denom)
    }
}

/// Approximate noisy LLR: `m - nu^2 - tau` when `m >= nu^2`, else
/// `2m - 2 nu^2 - tau`. Reduces to [`approx_llr`] when `nu^2 = 0`.
pub fn approx_llr_noisy(m: f64, tau: f64, noise_power: f64) -> f64 {
    if m >= noise_power {
        m - noise_power - tau
    } else {
        2.0 * m - 2.0 * noise_power - tau
    }
}

// ---------------------------------------------------------------------------
// Aggregation image
// ---------------------------------------------------------------------------

/// How sensor readings are turned into per-sensor LLR values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// Approximate LLR `m - tau` (noise not modeled).
    Soft,
    /// Noise-aware approximate LLR, linear Watts only.
    SoftNoisy,
    /// Hard +-1/0 decisions from one-bit sensors.
    Hard,
}

/// Domain the soft LLR difference is computed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    LinearWatts,
    Dbm,
}

impl Domain {
    fn code(self) -> u8 {
        match self {
            Domain::LinearWatts => 0,
            Domain::Dbm => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Domain::LinearWatts),
            1 => Ok(Domain::Dbm),
            _ => Err(Error::Format(format!("bad domain code {c}"))),
        }
    }
}

/// Fixed-resolution aggregated LLR image; the network input.
///
/// `values` are the normalized per-sub-region mean LLRs (row-major); `z` is
/// the normalizer that was divided out, so `values[k] * z` recovers the raw
/// aggregated means.
#[derive(Debug, Clone, PartialEq)]
pub struct LlrImage {
    pub n_side: usize,
    pub values: Vec<f64>,
    pub z: f64,
    pub domain: Domain,
}

impl LlrImage {
    /// Raw (pre-normalization) aggregated values.
    pub fn raw_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v * self.z).collect()
    }
}

/// Pool readings into the aggregation image.
///
/// Per sub-region with at least one sensor the value is the mean per-sensor
/// LLR; sub-regions without sensors stay zero. The image is then divided by
/// `z = sqrt(population variance)` so it has unit variance (`z = 1` when the
/// variance is zero). Sensors on sub-region boundaries belong to the
/// sub-region of their floor cell index.
pub fn aggregate(
    readings: &[SensorReading],
    grid: &GridSpec,
    tau_dbm: f64,
    mode: AggregationMode,
    domain: Domain,
) -> Result<LlrImage> {
    if mode == AggregationMode::SoftNoisy && domain == Domain::Dbm {
        return Err(Error::Mode(
            "soft_noisy aggregation is defined on linear Watts; use domain = linear_watts".into(),
        ));
    }
    let tau_w = dbm_to_watts(tau_dbm);
    let n_sub = grid.n_subregions();
    let mut sums = vec![0.0f64; n_sub];
    let mut counts = vec![0u32; n_sub];

    for (idx, r) in readings.iter().enumerate() {
        let k = grid.subregion_of_point(r.location.0, r.location.1)?;
        let llr = match mode {
            AggregationMode::Soft => match domain {
                Domain::LinearWatts => approx_llr(r.measured_w, tau_w),
                Domain::Dbm => approx_llr(watts_to_dbm(r.measured_w), tau_dbm),
            },
            AggregationMode::SoftNoisy => {
                approx_llr_noisy(r.measured_w, tau_w, r.noise_power_w)
            }
            AggregationMode::Hard => {
                let bit = r.one_bit.ok_or_else(|| {
                    Error::Mode(format!("hard aggregation requires one-bit readings (sensor {idx})"))
                })?;
                f64::from(bit)
            }
        };
        sums[k] += llr;
        counts[k] += 1;
    }

    let mut values: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / f64::from(c) } else { 0.0 })
        .collect();

    let mean = values.iter().sum::<f64>() / n_sub as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n_sub as f64;
    let z = if var > 0.0 { var.sqrt() } else { 1.0 };
    for v in &mut values {
        *v /= z;
    }

    Ok(LlrImage { n_side: grid.n_side, values, z, domain })
}

// ---------------------------------------------------------------------------
// LlrImage binary format
// ---------------------------------------------------------------------------

const LLR_MAGIC: &[u8; 4] = b"SLLR";

/// Write an LLR image: magic `SLLR`, u32 n_side, u8 domain code, f64 z,
/// then n_side^2 f64 little-endian values.
pub fn save_llr_image(img: &LlrImage, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_llr_image(&mut w, img)
}

pub fn write_llr_image<W: std::io::Write>(w: &mut W, img: &LlrImage) -> Result<()> {
    w.write_all(LLR_MAGIC)?;
    write_u32(w, img.n_side as u32)?;
    w.write_all(&[img.domain.code()])?;
    write_f64(w, img.z)?;
    for &v in &img.values {
        write_f64(w, v)?;
    }
    Ok(())
}

pub fn load_llr_image(path: &Path) -> Result<LlrImage> {
    let mut r = BufReader::new(fs::File::open(path)?);
    read_llr_image(&mut r)
}

pub fn read_llr_image<R: std::io::Read>(r: &mut R) -> Result<LlrImage> {
    expect_magic(r, LLR_MAGIC)?;
    let n_side = read_u32(r)? as usize;
    let domain = Domain::from_code(read_u8(r)?)?;
    let z = read_f64(r)?;
    let mut values = Vec::with_capacity(n_side * n_side);
    for _ in 0..n_side * n_side {
        values.push(read_f64(r)?);
    }
    Ok(LlrImage { n_side, values, z, domain })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use crate::sensing::{one_bit_readings, SensorReading, N_SAMPLES_IDEAL};
    use rand::Rng;

    fn reading_at(x: f64, y: f64, m: f64) -> SensorReading {
        SensorReading {
            location: (x, y),
            measured_w: m,
            noise_power_w: 0.0,
            n_samples: N_SAMPLES_IDEAL,
            one_bit: None,
        }
    }

    #[test]
    fn glrt_boundary_and_signs() {
        assert_eq!(glrt_llr(5.0, 5.0, 0.5).unwrap(), 0.0);
        assert_eq!(glrt_llr(6.0, 5.0, 0.5).unwrap(), 1.0);
        assert_eq!(glrt_llr(4.0, 5.0, 0.5).unwrap(), -1.0);
        assert!(matches!(glrt_llr(1.0, 0.0, 0.0), Err(Error::Parameter(_))));
    }

    /// Brute-force GLRT oracle: grid-search the two constrained likelihood
    /// maxima and take the log ratio. The H0 supremum over the open set
    /// `mu < tau` equals the value on its closure (the likelihood is
    /// continuous), so the boundary point tau is evaluated explicitly for
    /// both hypotheses in addition to the uniform grid.
    fn glrt_bruteforce(m: f64, tau: f64, zeta_sq: f64, points: usize) -> f64 {
        let sigma = zeta_sq.sqrt();
        let lo = (m.min(tau)) - 10.0 * sigma;
        let hi = (m.max(tau)) + 10.0 * sigma;
        let log_q = |mu: f64| -(m - mu).powi(2) / (2.0 * zeta_sq);
        let mut best1 = log_q(tau);
        let mut best0 = best1;
        for i in 0..=points {
            let mu = lo + (hi - lo) * i as f64 / points as f64;
            let v = log_q(mu);
            if mu >= tau && v > best1 {
                best1 = v;
            }
            if mu < tau && v > best0 {
                best0 = v;
            }
        }
        best1 - best0
    }

    #[test]
    fn glrt_matches_bruteforce_small() {
        let mut rng = rng_from_seed(12);
        for _ in 0..20 {
            let m = rng.random_range(-4.0..4.0);
            let tau = rng.random_range(-4.0..4.0);
            let zeta_sq = rng.random_range(0.1..2.0);
            let exact = glrt_llr(m, tau, zeta_sq).unwrap();
            let brute = glrt_bruteforce(m, tau, zeta_sq, 100_000);
            assert!((exact - brute).abs() < 1e-4, "m={m} tau={tau}: {exact} vs {brute}");
        }
    }

    #[test]
    fn approx_llr_values() {
        assert_eq!(approx_llr(5.0, 5.0), 0.0);
        assert_eq!(approx_llr(10.0, 5.0), 5.0);
    }

    #[test]
    fn approx_llr_sign_matches_glrt() {
        let mut rng = rng_from_seed(13);
        for _ in 0..100_000 {
            let m = rng.random_range(-10.0..10.0);
            let tau = rng.random_range(-10.0..10.0);
            let zeta_sq = rng.random_range(0.01..4.0);
            let a = approx_llr(m, tau);
            let g = glrt_llr(m, tau, zeta_sq).unwrap();
            assert_eq!(a.signum(), g.signum());
        }
    }

    #[test]
    fn noisy_glrt_reduces_to_glrt_at_zero_noise() {
        let mut rng = rng_from_seed(14);
        for _ in 0..1000 {
            let m = rng.random_range(0.0..10.0);
            let tau = rng.random_range(-5.0..5.0);
            let zeta_sq = rng.random_range(0.1..2.0);
            let a = noisy_glrt_llr(m, tau, 0.0, 64, zeta_sq).unwrap();
            let b = glrt_llr(m, tau, zeta_sq).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn noisy_glrt_first_branch_zero() {
        // m = nu^2 + tau with tau > 0 sits on the first branch and gives 0.
        let v = noisy_glrt_llr(3.0, 2.0, 1.0, 16, 0.5).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn noisy_glrt_branches_agree_at_crossover() {
        // At m = nu^2 both branches evaluate to -tau^2 / (2 (nu^4/N + zeta^2))
        // for tau > 0.
        let (tau, nu2, n, zeta) = (1.7, 0.9, 32u64, 0.4);
        let denom = 2.0 * (nu2 * nu2 * nu2 * nu2 / n as f64 + zeta);
        let first = {
            let d: f64 = -tau;
            d.abs() * d / denom
        };
        let second = tau * (2.0 * nu2 - 2.0 * nu2 - tau) / denom;
        assert!((first - second).abs() < 1e-15);
        let at = noisy_glrt_llr(nu2, tau, nu2, n, zeta).unwrap();
        assert!((at - first).abs() < 1e-15);
    }

    #[test]
    fn approx_noisy_matches_piecewise_oracle() {
        let mut rng = rng_from_seed(15);
        for _ in 0..10_000 {
            let m = rng.random_range(0.0..5.0);
            let tau = rng.random_range(-2.0..2.0);
            let nu2 = rng.random_range(0.0..3.0);
            let got = approx_llr_noisy(m, tau, nu2);
            let want = if m >= nu2 { m - nu2 - tau } else { 2.0 * m - 2.0 * nu2 - tau };
            assert_eq!(got, want);
        }
    }

    #[test]
    fn approx_noisy_reduces_and_is_continuous() {
        for m in [0.0, 0.5, 2.0, 7.5] {
            assert_eq!(approx_llr_noisy(m, 1.0, 0.0), approx_llr(m, 1.0));
        }
        assert_eq!(approx_llr_noisy(2.0, 4.0, 2.0), -4.0);
        let eps = 1e-12;
        let below = approx_llr_noisy(2.0 - eps, 4.0, 2.0);
        assert!((below + 4.0).abs() < 1e-10);
    }

    fn grid4() -> GridSpec {
        GridSpec::new(4, 16, 16, 50.0).unwrap()
    }

    #[test]
    fn empty_subregions_are_zero() {
        let g = grid4();
        // One sensor in sub-region 0 only.
        let r = vec![reading_at(25.0, 25.0, 2e-12)];
        let img = aggregate(&r, &g, -90.0, AggregationMode::Soft, Domain::Dbm).unwrap();
        for (k, v) in img.values.iter().enumerate() {
            if k == 0 {
                assert!(*v != 0.0);
            } else {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn pooled_mean_within_subregion() {
        let g = grid4();
        let tau_dbm = -90.0;
        let tau_w = dbm_to_watts(tau_dbm);
        // Two sensors in sub-region 0 with linear-domain LLRs 2 and 4.
        let r = vec![
            reading_at(25.0, 25.0, tau_w + 2.0),
            reading_at(80.0, 60.0, tau_w + 4.0),
        ];
        let img = aggregate(&r, &g, tau_dbm, AggregationMode::Soft, Domain::LinearWatts).unwrap();
        let raw = img.raw_values();
        assert!((raw[0] - 3.0).abs() < 1e-12);
        for v in &raw[1..] {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn unit_variance_after_normalization() {
        let g = grid4();
        let mut rng = rng_from_seed(16);
        let readings: Vec<SensorReading> = (0..30)
            .map(|_| {
                reading_at(
                    rng.random_range(0.0..800.0),
                    rng.random_range(0.0..800.0),
                    rng.random_range(1e-13..1e-10),
                )
            })
            .collect();
        let img = aggregate(&readings, &g, -90.0, AggregationMode::Soft, Domain::Dbm).unwrap();
        let n = img.values.len() as f64;
        let mean = img.values.iter().sum::<f64>() / n;
        let var = img.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!((var - 1.0).abs() < 1e-9, "var {var}");
        assert!(img.z > 0.0);
    }

    #[test]
    fn all_zero_image_has_unit_z() {
        let g = grid4();
        let img = aggregate(&[], &g, -90.0, AggregationMode::Soft, Domain::Dbm).unwrap();
        assert_eq!(img.z, 1.0);
        assert!(img.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalization_preserves_signs() {
        let g = grid4();
        let tau_w = dbm_to_watts(-90.0);
        let r = vec![
            reading_at(25.0, 25.0, tau_w * 3.0),
            reading_at(225.0, 25.0, tau_w * 0.1),
        ];
        let img = aggregate(&r, &g, -90.0, AggregationMode::Soft, Domain::LinearWatts).unwrap();
        let raw = img.raw_values();
        for (v, r) in img.values.iter().zip(&raw) {
            assert_eq!(v.signum(), r.signum());
        }
    }

    #[test]
    fn threshold_shift_is_constant_offset_pre_normalization() {
        let g = grid4();
        let mut rng = rng_from_seed(17);
        let readings: Vec<SensorReading> = (0..25)
            .map(|_| {
                reading_at(
                    rng.random_range(0.0..800.0),
                    rng.random_range(0.0..800.0),
                    rng.random_range(1e-13..1e-10),
                )
            })
            .collect();
        let tau_train = -90.0;
        let tau_test = -96.0;
        let a = aggregate(&readings, &g, tau_train, AggregationMode::Soft, Domain::Dbm).unwrap();
        let b = aggregate(&readings, &g, tau_test, AggregationMode::Soft, Domain::Dbm).unwrap();
        let ra = a.raw_values();
        let rb = b.raw_values();
        for k in 0..ra.len() {
            if ra[k] == 0.0 && rb[k] == 0.0 {
                continue; // no sensors
            }
            assert!((rb[k] - ra[k] - (tau_train - tau_test)).abs() < 1e-9);
        }
    }

    #[test]
    fn hard_mode_requires_one_bit_and_is_bounded() {
        let g = grid4();
        let r = vec![reading_at(25.0, 25.0, 1e-12)];
        assert!(matches!(
            aggregate(&r, &g, -90.0, AggregationMode::Hard, Domain::LinearWatts),
            Err(Error::Mode(_))
        ));
        let mut rng = rng_from_seed(18);
        let readings: Vec<SensorReading> = (0..40)
            .map(|_| {
                reading_at(
                    rng.random_range(0.0..800.0),
                    rng.random_range(0.0..800.0),
                    rng.random_range(1e-13..1e-11),
                )
            })
            .collect();
        let hard = one_bit_readings(&readings, -90.0);
        let img = aggregate(&hard, &g, -90.0, AggregationMode::Hard, Domain::LinearWatts).unwrap();
        for v in img.raw_values() {
            assert!((-1.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn soft_noisy_rejects_dbm_domain() {
        let g = grid4();
        assert!(matches!(
            aggregate(&[], &g, -90.0, AggregationMode::SoftNoisy, Domain::Dbm),
            Err(Error::Mode(_))
        ));
    }

    #[test]
    fn llr_image_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.sllr");
        let g = grid4();
        let r = vec![reading_at(25.0, 25.0, 3e-12), reading_at(600.0, 700.0, 0.2e-12)];
        let img = aggregate(&r, &g, -90.0, AggregationMode::Soft, Domain::Dbm).unwrap();
        save_llr_image(&img, &path).unwrap();
        assert_eq!(load_llr_image(&path).unwrap(), img);
    }
}
