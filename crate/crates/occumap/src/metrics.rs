//! Evaluation metrics: error rate, detection and false-alarm rates, and ROC
//! sweeps. Counts are pooled over all sub-regions and maps, not averaged
//! per map, and empty classes are reported as undefined rather than forced
//! to 0 or 1.

use crate::error::{Error, Result};
use crate::grid::{DecisionMap, OccupancyMap};
use crate::llr::LlrImage;
use crate::nn::tensor::Scalar;
use crate::nn::{decide, images_to_tensor, Network, Tensor4};
use crate::units::tnr_db;

/// Pooled confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Counts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn kappa(&self) -> f64 {
        (self.fp + self.fn_) as f64 / self.total() as f64
    }

    /// Detection rate TP/(TP+FN); `None` when there are no positives.
    pub fn p_d(&self) -> Option<f64> {
        let pos = self.tp + self.fn_;
        (pos > 0).then(|| self.tp as f64 / pos as f64)
    }

    /// False-alarm rate FP/(FP+TN); `None` when there are no negatives.
    pub fn p_f(&self) -> Option<f64> {
        let neg = self.fp + self.tn;
        (neg > 0).then(|| self.fp as f64 / neg as f64)
    }
}

/// One evaluation summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub kappa: f64,
    pub p_d: Option<f64>,
    pub p_f: Option<f64>,
    pub theta: f64,
    pub tau_dbm: f64,
    /// Threshold-to-noise ratio in dB; +inf for noise-free sensing.
    pub tnr_db: f64,
    pub counts: Counts,
}

impl EvalReport {
    pub fn from_counts(counts: Counts, theta: f64, tau_dbm: f64, noise_w: f64) -> Self {
        EvalReport {
            kappa: counts.kappa(),
            p_d: counts.p_d(),
            p_f: counts.p_f(),
            theta,
            tau_dbm,
            tnr_db: tnr_db(crate::units::dbm_to_watts(tau_dbm), noise_w),
            counts,
        }
    }
}

fn check_shapes(truth: &[OccupancyMap], pred: &[DecisionMap]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} truth maps vs {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    for (t, p) in truth.iter().zip(pred) {
        if t.n_side != p.n_side {
            return Err(Error::Shape(format!(
                "truth side {} vs prediction side {}",
                t.n_side, p.n_side
            )));
        }
    }
    Ok(())
}

/// Pool confusion counts over a batch of maps.
pub fn pooled_counts(truth: &[OccupancyMap], pred: &[DecisionMap]) -> Result<Counts> {
    check_shapes(truth, pred)?;
    let mut c = Counts::default();
    for (t, p) in truth.iter().zip(pred) {
        for (&tb, &pb) in t.bits.iter().zip(&p.bits) {
            match (tb, pb) {
                (1, 1) => c.tp += 1,
                (0, 1) => c.fp += 1,
                (0, 0) => c.tn += 1,
                (1, 0) => c.fn_ += 1,
                _ => return Err(Error::Shape("bits must be 0 or 1".into())),
            }
        }
    }
    Ok(c)
}

/// Classification error rate: mean absolute bit difference over all
/// sub-regions and maps.
pub fn error_rate(truth: &[OccupancyMap], pred: &[DecisionMap]) -> Result<f64> {
    Ok(pooled_counts(truth, pred)?.kappa())
}

/// Pooled detection and false-alarm rates. `None` marks an undefined rate
/// (no positives / no negatives in the truth).
pub fn pd_pf(truth: &[OccupancyMap], pred: &[DecisionMap]) -> Result<(Option<f64>, Option<f64>)> {
    let c = pooled_counts(truth, pred)?;
    Ok((c.p_d(), c.p_f()))
}

/// One ROC point.
#[derive(Debug, Clone, PartialEq)]
pub struct RocPoint {
    pub theta: f64,
    pub p_f: Option<f64>,
    pub p_d: Option<f64>,
    pub kappa: f64,
}

/// Sweep the detection threshold over cached logits: one forward pass per
/// map (eval mode), then one pooled report per theta.
pub fn roc_sweep<T: Scalar>(
    net: &mut Network<T>,
    pairs: &[(LlrImage, OccupancyMap)],
    thetas: &[f64],
) -> Result<Vec<RocPoint>> {
    if thetas.is_empty() {
        return Err(Error::EmptySet("theta list is empty".into()));
    }
    if thetas.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err(Error::Parameter("thetas must lie in (0, 1)".into()));
    }
    if thetas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Parameter("thetas must be strictly increasing".into()));
    }
    let logits = batch_logits(net, pairs, 32)?;
    let truths: Vec<OccupancyMap> = pairs.iter().map(|p| p.1.clone()).collect();
    thetas
        .iter()
        .map(|&theta| {
            let preds = decide(&logits, theta)?;
            let c = pooled_counts(&truths, &preds)?;
            Ok(RocPoint { theta, p_f: c.p_f(), p_d: c.p_d(), kappa: c.kappa() })
        })
        .collect()
}

/// Forward all pairs through the network in eval mode, in chunks, and stack
/// the logits into one (M, 1, side, side) tensor.
pub fn batch_logits<T: Scalar>(
    net: &mut Network<T>,
    pairs: &[(LlrImage, OccupancyMap)],
    chunk: usize,
) -> Result<Tensor4<T>> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::EmptySet("no evaluation pairs".into()))?;
    let side = first.0.n_side;
    let mut data = Vec::with_capacity(pairs.len() * side * side);
    for group in pairs.chunks(chunk.max(1)) {
        let images: Vec<&LlrImage> = group.iter().map(|p| &p.0).collect();
        let x = images_to_tensor::<T>(&images)?;
        let logits = net.forward(&x, false)?;
        data.extend_from_slice(&logits.data);
    }
    Ok(Tensor4::from_vec(pairs.len(), 1, side, side, data))
}

/// Evaluate error rate at one theta.
pub fn evaluate_kappa<T: Scalar>(
    net: &mut Network<T>,
    pairs: &[(LlrImage, OccupancyMap)],
    theta: f64,
) -> Result<f64> {
    let logits = batch_logits(net, pairs, 32)?;
    let preds = decide(&logits, theta)?;
    let truths: Vec<OccupancyMap> = pairs.iter().map(|p| p.1.clone()).collect();
    error_rate(&truths, &preds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use rand::Rng;

    fn random_pair(n_side: usize, seed: u64) -> (OccupancyMap, DecisionMap) {
        let mut rng = rng_from_seed(seed);
        let truth = OccupancyMap {
            n_side,
            bits: (0..n_side * n_side).map(|_| rng.random_range(0..2u8)).collect(),
            tau_dbm: -90.0,
        };
        let pred = DecisionMap {
            n_side,
            bits: (0..n_side * n_side).map(|_| rng.random_range(0..2u8)).collect(),
            theta: 0.5,
        };
        (truth, pred)
    }

    #[test]
    fn perfect_prediction_has_zero_error() {
        let (t, _) = random_pair(8, 1);
        let p = DecisionMap { n_side: 8, bits: t.bits.clone(), theta: 0.5 };
        assert_eq!(error_rate(&[t], &[p]).unwrap(), 0.0);
    }

    #[test]
    fn complement_prediction_has_unit_error() {
        let (t, _) = random_pair(8, 2);
        let p = DecisionMap {
            n_side: 8,
            bits: t.bits.iter().map(|b| 1 - b).collect(),
            theta: 0.5,
        };
        assert_eq!(error_rate(&[t], &[p]).unwrap(), 1.0);
    }

    #[test]
    fn error_rate_matches_loop_oracle() {
        let (t, p) = random_pair(16, 3);
        let got = error_rate(std::slice::from_ref(&t), std::slice::from_ref(&p)).unwrap();
        let mut diff = 0usize;
        for (a, b) in t.bits.iter().zip(&p.bits) {
            diff += usize::from(a != b);
        }
        assert_eq!(got, diff as f64 / 256.0);
    }

    #[test]
    fn pd_pf_on_perfect_and_all_ones() {
        let (t, _) = random_pair(8, 4);
        let perfect = DecisionMap { n_side: 8, bits: t.bits.clone(), theta: 0.5 };
        let (pd, pf) = pd_pf(std::slice::from_ref(&t), std::slice::from_ref(&perfect)).unwrap();
        assert_eq!(pd, Some(1.0));
        assert_eq!(pf, Some(0.0));
        let ones = DecisionMap { n_side: 8, bits: vec![1; 64], theta: 0.5 };
        let (pd, pf) = pd_pf(&[t], &[ones]).unwrap();
        assert_eq!(pd, Some(1.0));
        assert_eq!(pf, Some(1.0));
    }

    #[test]
    fn pd_pf_matches_confusion_matrix_oracle() {
        let (t, p) = random_pair(16, 5);
        let (pd, pf) = pd_pf(std::slice::from_ref(&t), std::slice::from_ref(&p)).unwrap();
        let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
        for (a, b) in t.bits.iter().zip(&p.bits) {
            match (a, b) {
                (1, 1) => tp += 1,
                (0, 1) => fp += 1,
                (0, 0) => tn += 1,
                _ => fn_ += 1,
            }
        }
        assert_eq!(pd, Some(tp as f64 / (tp + fn_) as f64));
        assert_eq!(pf, Some(fp as f64 / (fp + tn) as f64));
    }

    #[test]
    fn undefined_rates_flagged() {
        let t = OccupancyMap { n_side: 2, bits: vec![0; 4], tau_dbm: -90.0 };
        let p = DecisionMap { n_side: 2, bits: vec![0; 4], theta: 0.5 };
        let (pd, pf) = pd_pf(&[t], &[p]).unwrap();
        assert_eq!(pd, None);
        assert_eq!(pf, Some(0.0));
    }

    #[test]
    fn kappa_identity_over_counts() {
        // kappa = p_f * neg_frac + (1 - p_d) * pos_frac, exactly over counts.
        for seed in 0..50 {
            let (t, p) = random_pair(8, 100 + seed);
            let c = pooled_counts(std::slice::from_ref(&t), std::slice::from_ref(&p)).unwrap();
            let total = c.total() as f64;
            let pos = (c.tp + c.fn_) as f64;
            let neg = (c.fp + c.tn) as f64;
            let lhs = c.kappa();
            let rhs = c.p_f().unwrap_or(0.0) * (neg / total)
                + (1.0 - c.p_d().unwrap_or(1.0)) * (pos / total);
            assert!((lhs - rhs).abs() < 1e-15);
        }
    }

    #[test]
    fn kappa_invariant_under_joint_complement() {
        let (t, p) = random_pair(8, 7);
        let k1 = error_rate(std::slice::from_ref(&t), std::slice::from_ref(&p)).unwrap();
        let tc = OccupancyMap {
            n_side: 8,
            bits: t.bits.iter().map(|b| 1 - b).collect(),
            tau_dbm: t.tau_dbm,
        };
        let pc = DecisionMap {
            n_side: 8,
            bits: p.bits.iter().map(|b| 1 - b).collect(),
            theta: p.theta,
        };
        let k2 = error_rate(&[tc], &[pc]).unwrap();
        assert_eq!(k1, k2);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (t, _) = random_pair(8, 8);
        let p = DecisionMap { n_side: 4, bits: vec![0; 16], theta: 0.5 };
        assert!(matches!(error_rate(&[t], &[p]), Err(Error::Shape(_))));
    }
}
