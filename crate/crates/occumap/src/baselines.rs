//! Classical spatial-interpolation baselines: inverse distance weighting,
//! K-nearest neighbors, thin-plate-spline RBF, and ordinary kriging with a
//! fitted exponential variogram. Interpolation runs in the dBm domain
//! (standard practice for radio maps); the interpolated power map is then
//! thresholded into a decision map for comparison against the occupancy
//! ground truth.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DecisionMap, GridSpec};
use crate::sensing::SensorReading;
use crate::units::watts_to_dbm;

/// Which interpolator to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpolationMethod {
    Idw,
    Knn,
    Rbf,
    Kriging,
}

/// Interpolator parameters. Defaults follow the usual choices for radio-map
/// comparisons: IDW exponent 2, K-NN with K = 1, RBF ridge 0.01 with a bias
/// term, exponential variogram for kriging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpolatorConfig {
    pub method: InterpolationMethod,
    pub idw_exponent: f64,
    pub knn_k: usize,
    pub rbf_reg: f64,
    pub rbf_bias: bool,
    pub variogram_bins: usize,
}

impl Default for InterpolatorConfig {
    fn default() -> Self {
        InterpolatorConfig {
            method: InterpolationMethod::Idw,
            idw_exponent: 2.0,
            knn_k: 1,
            rbf_reg: 0.01,
            rbf_bias: true,
            variogram_bins: 15,
        }
    }
}

impl InterpolatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.idw_exponent > 0.0) {
            return Err(Error::Parameter("idw_exponent must be > 0".into()));
        }
        if self.knn_k == 0 {
            return Err(Error::Parameter("knn_k must be >= 1".into()));
        }
        if self.rbf_reg < 0.0 {
            return Err(Error::Parameter("rbf_reg must be >= 0".into()));
        }
        if self.variogram_bins < 2 {
            return Err(Error::Parameter("variogram_bins must be >= 2".into()));
        }
        Ok(())
    }
}

/// Fitted exponential variogram `gamma(h) = nugget + sill (1 - exp(-h/range))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variogram {
    pub nugget: f64,
    pub sill: f64,
    pub range: f64,
}

impl Variogram {
    pub fn eval(&self, h: f64) -> f64 {
        self.nugget + self.sill * (1.0 - (-h / self.range).exp())
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Predict power (dBm) at every sub-region center from the sensor readings.
pub fn interpolate(
    readings: &[SensorReading],
    grid: &GridSpec,
    config: &InterpolatorConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    if readings.is_empty() {
        return Err(Error::EmptySet("interpolation needs at least one reading".into()));
    }
    let points: Vec<(f64, f64)> = readings.iter().map(|r| r.location).collect();
    let values: Vec<f64> = readings.iter().map(|r| watts_to_dbm(r.measured_w)).collect();
    let queries: Vec<(f64, f64)> =
        (0..grid.n_subregions()).map(|k| grid.subregion_center_m(k)).collect();

    match config.method {
        InterpolationMethod::Idw => {
            Ok(idw(&points, &values, &queries, config.idw_exponent, grid.cell_size_m))
        }
        InterpolationMethod::Knn => Ok(knn(&points, &values, &queries, config.knn_k)),
        InterpolationMethod::Rbf => rbf(&points, &values, &queries, config, grid),
        InterpolationMethod::Kriging => kriging(&points, &values, &queries, config),
    }
}

/// Shepard weights `d^(-exponent)`; a query within `cell/1e6` of a sensor
/// returns that sensor's value exactly (first such sensor by index).
fn idw(
    points: &[(f64, f64)],
    values: &[f64],
    queries: &[(f64, f64)],
    exponent: f64,
    cell_size_m: f64,
) -> Vec<f64> {
    let snap = cell_size_m / 1e6;
    queries
        .iter()
        .map(|&q| {
            let mut num = 0.0;
            let mut den = 0.0;
            for (j, &p) in points.iter().enumerate() {
                let d = dist(q, p);
                if d < snap {
                    return values[j];
                }
                let w = d.powf(-exponent);
                num += w * values[j];
                den += w;
            }
            num / den
        })
        .collect()
}

/// Mean of the K nearest readings; ties broken by sensor index.
fn knn(points: &[(f64, f64)], values: &[f64], queries: &[(f64, f64)], k: usize) -> Vec<f64> {
    let k = k.min(points.len());
    queries
        .iter()
        .map(|&q| {
            let mut order: Vec<usize> = (0..points.len()).collect();
            order.sort_by(|&a, &b| {
                dist(q, points[a])
                    .partial_cmp(&dist(q, points[b]))
                    .unwrap()
                    .then(a.cmp(&b))
            });
            order[..k].iter().map(|&j| values[j]).sum::<f64>() / k as f64
        })
        .collect()
}

/// Thin-plate-spline kernel `r^2 ln r`, distances normalized by the region
/// extent for conditioning.
fn tps(r: f64) -> f64 {
    if r <= 0.0 {
        0.0
    } else {
        r * r * r.ln()
    }
}

fn rbf(
    points: &[(f64, f64)],
    values: &[f64],
    queries: &[(f64, f64)],
    config: &InterpolatorConfig,
    grid: &GridSpec,
) -> Result<Vec<f64>> {
    let n = points.len();
    let scale = grid.extent_x_m().max(grid.extent_y_m());
    let bias = usize::from(config.rbf_bias);
    let dim = n + bias;
    let mut a = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = tps(dist(points[i], points[j]) / scale);
        }
        a[(i, i)] += config.rbf_reg;
        if bias == 1 {
            a[(i, n)] = 1.0;
            a[(n, i)] = 1.0;
        }
    }
    let mut b = DVector::<f64>::zeros(dim);
    for i in 0..n {
        b[i] = values[i];
    }
    let lu = a.lu();
    let sol = lu.solve(&b).ok_or_else(|| {
        Error::Solver(format!(
            "singular RBF system (n = {n}, reg = {}); diagonal spread {:.3e}",
            config.rbf_reg,
            diag_spread(points),
        ))
    })?;
    Ok(queries
        .iter()
        .map(|&q| {
            let mut v = if bias == 1 { sol[n] } else { 0.0 };
            for (j, &p) in points.iter().enumerate() {
                v += sol[j] * tps(dist(q, p) / scale);
            }
            v
        })
        .collect())
}

fn diag_spread(points: &[(f64, f64)]) -> f64 {
    let mut max_d = 0.0f64;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            max_d = max_d.max(dist(points[i], points[j]));
        }
    }
    max_d
}

/// Least-squares fit of an exponential variogram to the empirical
/// semivariogram over equal-width distance bins. The range is grid-searched
/// over log-spaced candidates; nugget and sill solve the linear
/// least-squares subproblem (clamped non-negative).
pub fn fit_variogram(
    points: &[(f64, f64)],
    values: &[f64],
    bins: usize,
) -> Result<Variogram> {
    let n = points.len();
    let mut max_d = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            max_d = max_d.max(dist(points[i], points[j]));
        }
    }
    if max_d <= 0.0 {
        return Err(Error::Solver("all sensors coincide; cannot fit a variogram".into()));
    }
    let width = max_d / bins as f64;
    let mut sums = vec![0.0f64; bins];
    let mut counts = vec![0usize; bins];
    let mut centers = vec![0.0f64; bins];
    for (b, c) in centers.iter_mut().enumerate() {
        *c = (b as f64 + 0.5) * width;
    }
    for i in 0..n {
        for j in i + 1..n {
            let d = dist(points[i], points[j]);
            let b = ((d / width) as usize).min(bins - 1);
            sums[b] += 0.5 * (values[i] - values[j]).powi(2);
            counts[b] += 1;
        }
    }
    let pts: Vec<(f64, f64)> = (0..bins)
        .filter(|&b| counts[b] > 0)
        .map(|b| (centers[b], sums[b] / counts[b] as f64))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Solver("too few variogram bins with data".into()));
    }

    let mut best = Variogram { nugget: 0.0, sill: pts.iter().map(|p| p.1).fold(0.0, f64::max), range: max_d / 3.0 };
    let mut best_sse = f64::INFINITY;
    for step in 0..50 {
        let range = max_d / 100.0 * (200.0f64).powf(step as f64 / 49.0);
        // Linear LSQ in (nugget, sill) for g(h) = nugget + sill * e(h).
        let (mut s_ee, mut s_e1, mut s_11, mut s_ge, mut s_g1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(h, g) in &pts {
            let e = 1.0 - (-h / range).exp();
            s_ee += e * e;
            s_e1 += e;
            s_11 += 1.0;
            s_ge += g * e;
            s_g1 += g;
        }
        let det = s_ee * s_11 - s_e1 * s_e1;
        if det.abs() < 1e-12 {
            continue;
        }
        let sill = (s_ge * s_11 - s_g1 * s_e1) / det;
        let nugget = (s_g1 - sill * s_e1) / s_11;
        let (sill, nugget) = (sill.max(1e-12), nugget.max(0.0));
        let sse: f64 = pts
            .iter()
            .map(|&(h, g)| {
                let m = nugget + sill * (1.0 - (-h / range).exp());
                (g - m).powi(2)
            })
            .sum();
        if sse < best_sse {
            best_sse = sse;
            best = Variogram { nugget, sill, range };
        }
    }
    Ok(best)
}

/// Ordinary kriging: solve the semivariogram system with the unbiasedness
/// constraint (weights sum to one); one factorization serves all queries.
fn kriging(
    points: &[(f64, f64)],
    values: &[f64],
    queries: &[(f64, f64)],
    config: &InterpolatorConfig,
) -> Result<Vec<f64>> {
    let n = points.len();
    if n < 10 {
        return Err(Error::Parameter(format!(
            "kriging needs at least 10 readings for the variogram fit, got {n}"
        )));
    }
    let vario = fit_variogram(points, values, config.variogram_bins)?;
    let dim = n + 1;
    let mut a = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = vario.eval(dist(points[i], points[j]));
        }
        a[(i, n)] = 1.0;
        a[(n, i)] = 1.0;
    }
    let lu = a.lu();
    let mut out = Vec::with_capacity(queries.len());
    for &q in queries {
        let mut b = DVector::<f64>::zeros(dim);
        for i in 0..n {
            b[i] = vario.eval(dist(q, points[i]));
        }
        b[n] = 1.0;
        let sol = lu.solve(&b).ok_or_else(|| {
            Error::Solver(format!(
                "singular kriging system (n = {n}, variogram {vario:?})"
            ))
        })?;
        let mut v = 0.0;
        for i in 0..n {
            v += sol[i] * values[i];
        }
        out.push(v);
    }
    Ok(out)
}

/// Threshold an interpolated dBm map into a decision map
/// (bit = 1 iff prediction >= tau).
pub fn baseline_decide(predicted_dbm: &[f64], n_side: usize, tau_dbm: f64) -> DecisionMap {
    DecisionMap {
        n_side,
        bits: predicted_dbm.iter().map(|&p| u8::from(p >= tau_dbm)).collect(),
        theta: f64::NAN,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use crate::sensing::N_SAMPLES_IDEAL;
    use crate::units::dbm_to_watts;
    use rand::Rng;

    fn grid() -> GridSpec {
        GridSpec::new(8, 32, 32, 50.0).unwrap()
    }

    fn reading(x: f64, y: f64, dbm: f64) -> SensorReading {
        SensorReading {
            location: (x, y),
            measured_w: dbm_to_watts(dbm),
            noise_power_w: 0.0,
            n_samples: N_SAMPLES_IDEAL,
            one_bit: None,
        }
    }

    fn random_readings(n: usize, seed: u64) -> Vec<SensorReading> {
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|_| {
                reading(
                    rng.random_range(0.0..1600.0),
                    rng.random_range(0.0..1600.0),
                    rng.random_range(-110.0..-70.0),
                )
            })
            .collect()
    }

    #[test]
    fn single_sensor_knn_is_constant() {
        let r = vec![reading(300.0, 500.0, -85.0)];
        let cfg = InterpolatorConfig { method: InterpolationMethod::Knn, ..Default::default() };
        let out = interpolate(&r, &grid(), &cfg).unwrap();
        assert!(out.iter().all(|&v| (v - -85.0).abs() < 1e-9));
    }

    #[test]
    fn idw_exact_hit_returns_sensor_value() {
        let g = grid();
        // Sensor exactly at the center of sub-region 0.
        let c = g.subregion_center_m(0);
        let r = vec![reading(c.0, c.1, -80.0), reading(900.0, 1100.0, -100.0)];
        let cfg = InterpolatorConfig { method: InterpolationMethod::Idw, ..Default::default() };
        let out = interpolate(&r, &g, &cfg).unwrap();
        assert_eq!(out[0], -80.0);
    }

    #[test]
    fn idw_predictions_inside_reading_range() {
        let r = random_readings(20, 1);
        let cfg = InterpolatorConfig { method: InterpolationMethod::Idw, ..Default::default() };
        let out = interpolate(&r, &grid(), &cfg).unwrap();
        let lo = r.iter().map(|r| watts_to_dbm(r.measured_w)).fold(f64::INFINITY, f64::min);
        let hi = r.iter().map(|r| watts_to_dbm(r.measured_w)).fold(f64::NEG_INFINITY, f64::max);
        for v in out {
            assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        }
    }

    #[test]
    fn knn1_is_voronoi() {
        let r = random_readings(6, 2);
        let g = grid();
        let cfg = InterpolatorConfig { method: InterpolationMethod::Knn, knn_k: 1, ..Default::default() };
        let out = interpolate(&r, &g, &cfg).unwrap();
        for (k, &v) in out.iter().enumerate() {
            let q = g.subregion_center_m(k);
            // Nearest sensor by brute force (ties by index).
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (j, rr) in r.iter().enumerate() {
                let d = super::dist(q, rr.location);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            assert_eq!(v, watts_to_dbm(r[best].measured_w));
        }
    }

    #[test]
    fn rbf_with_zero_reg_interpolates() {
        let r = vec![
            reading(100.0, 200.0, -80.0),
            reading(1400.0, 300.0, -95.0),
            reading(700.0, 900.0, -102.0),
            reading(300.0, 1300.0, -88.0),
            reading(1200.0, 1200.0, -76.0),
        ];
        let g = grid();
        let cfg = InterpolatorConfig {
            method: InterpolationMethod::Rbf,
            rbf_reg: 0.0,
            ..Default::default()
        };
        // Solve-and-substitute oracle: predictions at the sensor locations
        // reproduce the sensor values.
        let points: Vec<(f64, f64)> = r.iter().map(|r| r.location).collect();
        let values: Vec<f64> = r.iter().map(|r| watts_to_dbm(r.measured_w)).collect();
        let preds = super::rbf(&points, &values, &points, &cfg, &g).unwrap();
        for (p, v) in preds.iter().zip(&values) {
            assert!((p - v).abs() < 1e-8, "{p} vs {v}");
        }
    }

    #[test]
    fn kriging_constant_field_returns_constant() {
        let mut rng = rng_from_seed(3);
        let r: Vec<SensorReading> = (0..15)
            .map(|_| {
                reading(
                    rng.random_range(0.0..1600.0),
                    rng.random_range(0.0..1600.0),
                    -90.0,
                )
            })
            .collect();
        let cfg = InterpolatorConfig { method: InterpolationMethod::Kriging, ..Default::default() };
        let out = interpolate(&r, &grid(), &cfg).unwrap();
        for v in out {
            assert!((v - -90.0).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn kriging_needs_ten_readings() {
        let r = random_readings(9, 4);
        let cfg = InterpolatorConfig { method: InterpolationMethod::Kriging, ..Default::default() };
        assert!(matches!(interpolate(&r, &grid(), &cfg), Err(Error::Parameter(_))));
    }

    #[test]
    fn variogram_fit_is_sane() {
        let r = random_readings(60, 5);
        let points: Vec<(f64, f64)> = r.iter().map(|r| r.location).collect();
        let values: Vec<f64> = r.iter().map(|r| watts_to_dbm(r.measured_w)).collect();
        let v = fit_variogram(&points, &values, 15).unwrap();
        assert!(v.nugget >= 0.0);
        assert!(v.sill > 0.0);
        assert!(v.range > 0.0);
    }

    #[test]
    fn baseline_decide_boundary_and_oracle() {
        let preds = vec![-90.0, -89.9, -95.0, -90.0];
        let d = baseline_decide(&preds, 2, -90.0);
        assert_eq!(d.bits, vec![1, 1, 0, 1]);
        let all_lo = baseline_decide(&[-120.0, -130.0, -99.0, -91.0], 2, -90.0);
        assert_eq!(all_lo.bits, vec![0; 4]);
        // Loop oracle on a random map.
        let mut rng = rng_from_seed(6);
        let preds: Vec<f64> = (0..16).map(|_| rng.random_range(-110.0..-70.0)).collect();
        let d = baseline_decide(&preds, 4, -90.0);
        for (p, b) in preds.iter().zip(&d.bits) {
            assert_eq!(*b, u8::from(*p >= -90.0));
        }
    }
}
