//! Robustness sweep experiments.
//!
//! Each sweep trains networks under a controlled setting and evaluates the
//! error rate over a grid of test settings, producing rows of
//! `(sweep value, matched kappa, mismatched kappa)` averaged over test-set
//! seeds:
//!
//! - `tau`: matched = trained at each test threshold; mismatched = one
//!   network trained at the base threshold, fed `m - tau_test` inputs.
//! - `n_sensors`: matched = trained at each test sensor count; mismatched =
//!   one network trained at the base count.
//! - `noise`: values are TNR (tau/noise in dB); matched = trained at each
//!   test noise power; mismatched = one network trained on noise-free
//!   measurements. LLR formation follows the base spec's aggregation mode,
//!   so the same sweep contrasts noise-aware and noise-blind inputs.
//! - `tnr`: matched = trained and tested at each TNR; the second column is
//!   the noise-free reference error rate (constant across rows).
//! - `one_bit`: values are sensor counts; the first column is the
//!   full-resolution error rate, the second the one-bit (hard-decision)
//!   error rate, both trained matched at that count.
//!
//! Fields are generated once per map and re-measured per sweep point, so
//! matched and mismatched columns always see identical emitter layouts.

use serde::{Deserialize, Serialize};

use crate::dataset::{gen_scenarios, realize, test_split_seed, DatasetSpec, NoiseSpec, Realization, Scenario};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, OccupancyMap};
use crate::llr::{AggregationMode, Domain, LlrImage};
use crate::metrics::evaluate_kappa;
use crate::nn::{train, Network, TrainConfig};
use crate::propagation::PropagationParams;
use crate::seed::derive_seed;
use crate::terrain::TerrainGrid;
use crate::units::dbm_to_watts;

/// Which robustness axis to sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Tau,
    NSensors,
    Noise,
    Tnr,
    OneBit,
}

impl SweepKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tau" => Ok(SweepKind::Tau),
            "n_sensors" => Ok(SweepKind::NSensors),
            "noise" => Ok(SweepKind::Noise),
            "tnr" => Ok(SweepKind::Tnr),
            "one_bit" => Ok(SweepKind::OneBit),
            _ => Err(Error::Parameter(format!(
                "unknown sweep kind `{s}` (expected tau, n_sensors, noise, tnr, one_bit)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Tau => "tau",
            SweepKind::NSensors => "n_sensors",
            SweepKind::Noise => "noise",
            SweepKind::Tnr => "tnr",
            SweepKind::OneBit => "one_bit",
        }
    }

    /// Column headers for the sweep CSV.
    pub fn columns(self) -> (&'static str, &'static str, &'static str) {
        match self {
            SweepKind::Tau => ("tau_test_dbm", "kappa_matched", "kappa_mismatched"),
            SweepKind::NSensors => ("n_sensors_test", "kappa_matched", "kappa_mismatched"),
            SweepKind::Noise => ("tnr_db", "kappa_matched", "kappa_mismatched"),
            SweepKind::Tnr => ("tnr_db", "kappa_matched", "kappa_noise_free"),
            SweepKind::OneBit => ("n_sensors", "kappa_full_res", "kappa_one_bit"),
        }
    }
}

/// Everything a sweep needs.
#[derive(Debug, Clone)]
pub struct SweepContext {
    pub terrain: TerrainGrid,
    pub propagation: PropagationParams,
    /// Base (training) dataset spec; also defines the mismatched setting.
    pub train_spec: DatasetSpec,
    pub test_maps_per_count: u32,
    pub train_config: TrainConfig,
    /// Test-set seeds to average over.
    pub eval_seeds: Vec<u64>,
}

/// One output row.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub matched_kappa: f64,
    pub mismatched_kappa: f64,
    pub matched_std: f64,
    pub mismatched_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Train a network on scenarios realized under the given setting.
fn train_on(
    scenarios: &[Scenario],
    grid: &GridSpec,
    realization: &Realization,
    config: &TrainConfig,
) -> Result<Network<f32>> {
    let pairs: Result<Vec<(LlrImage, OccupancyMap)>> = scenarios
        .iter()
        .map(|s| realize(s, grid, realization).map(|(img, truth, _)| (img, truth)))
        .collect();
    let (net, _) = train::<f32>(&pairs?, config)?;
    Ok(net)
}

fn kappa_on(
    net: &mut Network<f32>,
    scenarios: &[Scenario],
    grid: &GridSpec,
    realization: &Realization,
    theta: f64,
) -> Result<f64> {
    let pairs: Result<Vec<(LlrImage, OccupancyMap)>> = scenarios
        .iter()
        .map(|s| realize(s, grid, realization).map(|(img, truth, _)| (img, truth)))
        .collect();
    evaluate_kappa(net, &pairs?, theta)
}

/// TNR in dB to noise power in Watts at the spec's threshold.
pub fn noise_for_tnr(tau_dbm: f64, tnr_db: f64) -> f64 {
    dbm_to_watts(tau_dbm) / 10f64.powf(tnr_db / 10.0)
}

/// Run one sweep. `values` are thresholds in dBm (`tau`), sensor counts
/// (`n_sensors`, `one_bit`), or TNR in dB (`noise`, `tnr`).
pub fn sweep_experiment(
    kind: SweepKind,
    values: &[f64],
    ctx: &SweepContext,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::EmptySet("sweep values are empty".into()));
    }
    if ctx.eval_seeds.is_empty() {
        return Err(Error::EmptySet("need at least one eval seed".into()));
    }
    let grid = ctx.train_spec.grid(&ctx.terrain)?;
    let base = Realization::from_spec(&ctx.train_spec);

    // Fields for the training set and one test set per eval seed.
    let train_scenarios = gen_scenarios(&ctx.terrain, &ctx.propagation, &ctx.train_spec)?;
    let mut test_sets = Vec::new();
    for (i, &seed) in ctx.eval_seeds.iter().enumerate() {
        let mut test_spec = ctx.train_spec.clone();
        test_spec.maps_per_count = ctx.test_maps_per_count;
        test_spec.seed = test_split_seed(derive_seed(ctx.train_spec.seed, seed ^ (i as u64) << 32));
        test_sets.push(gen_scenarios(&ctx.terrain, &ctx.propagation, &test_spec)?);
    }
    let theta = ctx.train_config.theta;

    // The mismatched network is shared across sweep points.
    let mismatched_net: Option<Network<f32>> = match kind {
        SweepKind::Tau | SweepKind::NSensors => {
            Some(train_on(&train_scenarios, &grid, &base, &ctx.train_config)?)
        }
        SweepKind::Noise | SweepKind::Tnr => {
            let noise_free = Realization { noise: None, ..base };
            Some(train_on(&train_scenarios, &grid, &noise_free, &ctx.train_config)?)
        }
        SweepKind::OneBit => None,
    };

    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let (matched_r, test_r, alt_r): (Realization, Realization, Option<Realization>) = match kind {
            SweepKind::Tau => {
                let r = Realization { tau_dbm: value, ..base };
                (r, r, None)
            }
            SweepKind::NSensors => {
                let r = Realization { n_sensors: value as usize, ..base };
                (r, r, None)
            }
            SweepKind::Noise | SweepKind::Tnr => {
                let ns = NoiseSpec {
                    noise_power_w: noise_for_tnr(ctx.train_spec.tau_dbm, value),
                    n_samples: ctx.train_spec.noise.map_or(1024, |n| n.n_samples),
                };
                let r = Realization { noise: Some(ns), ..base };
                (r, r, None)
            }
            SweepKind::OneBit => {
                let full = Realization { n_sensors: value as usize, ..base };
                let hard = Realization {
                    n_sensors: value as usize,
                    mode: AggregationMode::Hard,
                    domain: Domain::LinearWatts,
                    ..base
                };
                (full, full, Some(hard))
            }
        };

        let mut matched_net = train_on(&train_scenarios, &grid, &matched_r, &ctx.train_config)?;
        let mut matched_ks = Vec::new();
        let mut mismatched_ks = Vec::new();

        match kind {
            SweepKind::OneBit => {
                let hard_r = alt_r.expect("one-bit realization");
                let mut hard_net = train_on(&train_scenarios, &grid, &hard_r, &ctx.train_config)?;
                for test in &test_sets {
                    matched_ks.push(kappa_on(&mut matched_net, test, &grid, &test_r, theta)?);
                    mismatched_ks.push(kappa_on(&mut hard_net, test, &grid, &hard_r, theta)?);
                }
            }
            SweepKind::Tnr => {
                let mut nf_net = mismatched_net.clone().expect("noise-free reference");
                let noise_free = Realization { noise: None, ..base };
                for test in &test_sets {
                    matched_ks.push(kappa_on(&mut matched_net, test, &grid, &test_r, theta)?);
                    mismatched_ks.push(kappa_on(&mut nf_net, test, &grid, &noise_free, theta)?);
                }
            }
            _ => {
                let mut mm_net = mismatched_net.clone().expect("mismatched network");
                for test in &test_sets {
                    matched_ks.push(kappa_on(&mut matched_net, test, &grid, &test_r, theta)?);
                    mismatched_ks.push(kappa_on(&mut mm_net, test, &grid, &test_r, theta)?);
                }
            }
        }

        let (m, ms) = mean_std(&matched_ks);
        let (mm, mms) = mean_std(&mismatched_ks);
        rows.push(SweepRow {
            value,
            matched_kappa: m,
            mismatched_kappa: mm,
            matched_std: ms,
            mismatched_std: mms,
        });
    }
    Ok(rows)
}
