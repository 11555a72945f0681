//! Deterministic training loop: seeded shuffles, fixed batch order, fixed
//! reduction order, so identical seeds give bit-identical parameters.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::OccupancyMap;
use crate::llr::LlrImage;
use crate::nn::adam::{Adam, PlateauScheduler};
use crate::nn::tensor::Scalar;
use crate::nn::{images_to_tensor, targets_to_tensor, weighted_bce_with_grad, Network};
use crate::seed::{derive_seed, rng_from_seed};

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub plateau_patience_epochs: usize,
    pub plateau_factor: f64,
    pub epochs: usize,
    /// Weight on occupied sub-regions in the loss.
    pub alpha: f64,
    /// Detection threshold used at decision time.
    pub theta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 5e-5,
            plateau_patience_epochs: 10,
            plateau_factor: 0.1,
            epochs: 50,
            alpha: 1.0,
            theta: 0.5,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.plateau_patience_epochs == 0 {
            return Err(Error::Parameter("batch size, epochs, patience must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.plateau_factor > 0.0) || !(self.alpha > 0.0) {
            return Err(Error::Parameter("rates and alpha must be positive".into()));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::Parameter(format!("theta must be in (0, 1), got {}", self.theta)));
        }
        Ok(())
    }
}

/// Per-epoch record of the training run.
#[derive(Debug, Clone)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
    pub learning_rates: Vec<f64>,
}

/// Train a fresh network on `(image, truth)` pairs.
pub fn train<T: Scalar>(
    pairs: &[(LlrImage, OccupancyMap)],
    config: &TrainConfig,
) -> Result<(Network<T>, TrainLog)> {
    config.validate()?;
    let first = pairs
        .first()
        .ok_or_else(|| Error::EmptySet("training dataset is empty".into()))?;
    let side = first.0.n_side;
    let mut net = Network::<T>::build(side, derive_seed(config.seed, 0))?;
    let mut adam = Adam::new(net.total_params, config.learning_rate);
    let mut sched = PlateauScheduler::new(config.plateau_patience_epochs, config.plateau_factor);
    let mut log = TrainLog { epoch_losses: Vec::new(), learning_rates: Vec::new() };

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..config.epochs {
        let mut rng = rng_from_seed(derive_seed(config.seed, 1 + epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut elems = 0usize;
        for batch in order.chunks(config.batch_size) {
            let images: Vec<&LlrImage> = batch.iter().map(|&i| &pairs[i].0).collect();
            let truths: Vec<&OccupancyMap> = batch.iter().map(|&i| &pairs[i].1).collect();
            let x = images_to_tensor::<T>(&images)?;
            let t = targets_to_tensor::<T>(&truths)?;
            let logits = net.forward(&x, true)?;
            let (loss, grad) = weighted_bce_with_grad(&logits, &t, config.alpha, true)?;
            net.zero_grads();
            net.backward(&grad.expect("grad requested"))?;
            adam.step(&mut net);
            loss_sum += loss * x.len() as f64;
            elems += x.len();
        }
        let epoch_loss = loss_sum / elems as f64;
        adam.lr *= sched.observe(epoch_loss);
        log.epoch_losses.push(epoch_loss);
        log.learning_rates.push(adam.lr);
    }
    Ok((net, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::llr::{aggregate, AggregationMode, Domain};
    use crate::metrics::error_rate;
    use crate::nn::decide;
    use crate::sensing::{SensorReading, N_SAMPLES_IDEAL};
    use crate::units::dbm_to_watts;

    fn toy_pair(seed: u64) -> (LlrImage, OccupancyMap) {
        // One desk-scale 32x32 map: a blob of occupancy in one corner,
        // sensors giving positive LLRs there and negative elsewhere.
        let grid = GridSpec::new(32, 128, 128, 50.0).unwrap();
        let tau_dbm = -90.0;
        let tau_w = dbm_to_watts(tau_dbm);
        let mut rng = crate::seed::rng_from_seed(seed);
        use rand::Rng;
        let mut readings = Vec::new();
        for _ in 0..120 {
            let x = rng.random_range(0.0..6400.0);
            let y = rng.random_range(0.0..6400.0);
            let occupied = x < 2400.0 && y < 2400.0;
            let m = if occupied { tau_w * 30.0 } else { tau_w * 0.01 };
            readings.push(SensorReading {
                location: (x, y),
                measured_w: m,
                noise_power_w: 0.0,
                n_samples: N_SAMPLES_IDEAL,
                one_bit: None,
            });
        }
        let img = aggregate(&readings, &grid, tau_dbm, AggregationMode::Soft, Domain::Dbm).unwrap();
        let bits: Vec<u8> = (0..1024)
            .map(|k| {
                let (cx, cy) = grid.subregion_center_m(k);
                u8::from(cx < 2400.0 && cy < 2400.0)
            })
            .collect();
        (img, OccupancyMap { n_side: 32, bits, tau_dbm })
    }

    #[test]
    fn overfits_single_example() {
        let pair = toy_pair(3);
        let config = TrainConfig {
            epochs: 200,
            batch_size: 1,
            learning_rate: 3e-3,
            seed: 7,
            ..TrainConfig::default()
        };
        let (mut net, log) = train::<f32>(std::slice::from_ref(&pair), &config).unwrap();
        assert!(log.epoch_losses.last().unwrap() < &0.05);
        let x = images_to_tensor::<f32>(&[&pair.0]).unwrap();
        let logits = net.forward(&x, false).unwrap();
        let d = decide(&logits, 0.5).unwrap();
        let kappa = error_rate(std::slice::from_ref(&pair.1), &d).unwrap();
        assert_eq!(kappa, 0.0);
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let pairs: Vec<_> = (0..4).map(toy_pair).collect();
        let config = TrainConfig {
            epochs: 3,
            batch_size: 2,
            learning_rate: 1e-3,
            seed: 5,
            ..TrainConfig::default()
        };
        let (mut a, _) = train::<f32>(&pairs, &config).unwrap();
        let (mut b, _) = train::<f32>(&pairs, &config).unwrap();
        let pa = a.flat_params();
        let pb = b.flat_params();
        assert_eq!(pa.len(), pb.len());
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn empty_dataset_is_error() {
        let config = TrainConfig::default();
        assert!(matches!(
            train::<f32>(&[], &config),
            Err(Error::EmptySet(_))
        ));
    }
}
