//! Encoder-decoder decision network, built from scratch.
//!
//! The network maps an aggregated LLR image to per-sub-region logits of the
//! same spatial size. An initial wide strided convolution halves the input,
//! the encoder alternates dense blocks (growth 16) with channel-halving and
//! spatially-halving transitions, and the decoder mirrors the structure
//! with transposed convolutions until a final transposed convolution
//! restores the input side on one output channel. Every convolution is
//! preceded by batchnorm (ReLU everywhere except at the raw input), carries
//! no bias, and the parameter count is exactly
//! `sum_i k_i^2 n_in_i n_out_i + 2 n_in_i`.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod tensor;
pub mod train;

use crate::error::{Error, Result};
use crate::grid::{DecisionMap, OccupancyMap};
use crate::llr::LlrImage;
use crate::seed::rng_from_seed;

pub use adam::{Adam, PlateauScheduler};
pub use checkpoint::{load_checkpoint, meta_for, save_checkpoint, CheckpointMeta};
pub use layers::{BatchNorm2d, Conv2d, ConvBlock, ConvOp, ConvTranspose2d};
pub use tensor::{Scalar, Tensor4};
pub use train::{train, TrainConfig, TrainLog};

/// Dense-block growth rate: feature maps added per dense block.
pub const GROWTH: usize = 16;

/// One line of the realized schedule, for logging and parameter audits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSummary {
    pub index: usize,
    pub kind: &'static str,
    pub kernel: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    /// k^2 * in * out conv weights plus 2 * in batchnorm parameters.
    pub params: usize,
}

/// The full decision network.
#[derive(Debug, Clone)]
pub struct Network<T> {
    pub input_side: usize,
    pub blocks: Vec<ConvBlock<T>>,
    pub total_params: usize,
}

impl<T: Scalar> Network<T> {
    /// Build the network for `input_side x input_side` inputs (side must be
    /// a multiple of 16, at least 16). Weights are Kaiming-uniform (fan-in)
    /// from the given seed; batchnorm starts at scale 1, shift 0.
    pub fn build(input_side: usize, seed: u64) -> Result<Self> {
        if input_side < 16 || input_side % 16 != 0 {
            return Err(Error::Dimension(format!(
                "input side must be a multiple of 16 and >= 16, got {input_side}"
            )));
        }
        let mut rng = rng_from_seed(seed);
        let mut blocks: Vec<ConvBlock<T>> = Vec::new();
        let mut c = 1usize;

        let conv = |i: usize, o: usize, k: usize, s: usize, p: usize, rng: &mut _| {
            ConvOp::Conv(Conv2d::new(i, o, k, s, p, rng))
        };
        let convt = |i: usize, o: usize, rng: &mut _| {
            ConvOp::ConvT(ConvTranspose2d::new(i, o, 3, 2, 1, 1, rng))
        };

        // Initial features: batchnorm + k21s2p10 convolution to 6 channels.
        // No ReLU here; the LLR input is signed and clipping it would drop
        // the below-threshold half of the evidence.
        blocks.push(ConvBlock::new(
            BatchNorm2d::new(c),
            false,
            conv(c, 6, 21, 2, 10, &mut rng),
            false,
        ));
        c = 6;

        // Encoder: 3 x (dense block, channel-halving transition, strided
        // spatial-halving transition).
        for _ in 0..3 {
            blocks.push(ConvBlock::new(
                BatchNorm2d::new(c),
                true,
                conv(c, GROWTH, 3, 1, 1, &mut rng),
                true,
            ));
            c += GROWTH;
            let half = c / 2;
            blocks.push(ConvBlock::new(
                BatchNorm2d::new(c),
                true,
                conv(c, half, 1, 1, 0, &mut rng),
                false,
            ));
            c = half;
            blocks.push(ConvBlock::new(
                BatchNorm2d::new(c),
                true,
                conv(c, c, 3, 2, 1, &mut rng),
                false,
            ));
        }

        // Decoder: 4 dense blocks interleaved with 3 up-transitions
        // (channel-halving 1x1 convolution, then spatially-doubling
        // transposed convolution).
        for stage in 0..4 {
            blocks.push(ConvBlock::new(
                BatchNorm2d::new(c),
                true,
                conv(c, GROWTH, 3, 1, 1, &mut rng),
                true,
            ));
            c += GROWTH;
            if stage < 3 {
                let half = c / 2;
                blocks.push(ConvBlock::new(
                    BatchNorm2d::new(c),
                    true,
                    conv(c, half, 1, 1, 0, &mut rng),
                    false,
                ));
                c = half;
                blocks.push(ConvBlock::new(
                    BatchNorm2d::new(c),
                    true,
                    convt(c, c, &mut rng),
                    false,
                ));
            }
        }

        // Final block: transposed convolution restoring the input side on a
        // single logit channel.
        blocks.push(ConvBlock::new(
            BatchNorm2d::new(c),
            true,
            convt(c, 1, &mut rng),
            false,
        ));

        let total_params = blocks.iter().map(|b| b.num_params()).sum();
        Ok(Network { input_side, blocks, total_params })
    }

    /// Realized per-layer schedule with parameter counts.
    pub fn layer_summaries(&self) -> Vec<LayerSummary> {
        self.blocks
            .iter()
            .enumerate()
            .map(|(index, b)| LayerSummary {
                index,
                kind: match (&b.op, b.dense) {
                    (ConvOp::Conv(_), true) => "dense",
                    (ConvOp::Conv(_), false) => "conv",
                    (ConvOp::ConvT(_), _) => "conv_transpose",
                },
                kernel: b.op.kernel(),
                in_ch: b.op.in_ch(),
                out_ch: b.op.out_ch(),
                params: b.num_params(),
            })
            .collect()
    }

    /// Forward pass. Training mode uses batch statistics in the batchnorm
    /// layers and keeps the caches needed by [`Network::backward`]; eval
    /// mode uses running statistics and keeps nothing.
    pub fn forward(&mut self, input: &Tensor4<T>, training: bool) -> Result<Tensor4<T>> {
        if input.h != self.input_side || input.w != self.input_side || input.c != 1 {
            return Err(Error::Shape(format!(
                "expected (N, 1, {0}, {0}) input, got ({1}, {2}, {3}, {4})",
                self.input_side, input.n, input.c, input.h, input.w
            )));
        }
        let mut x = input.clone();
        for block in &mut self.blocks {
            x = block.forward(&x, training, training);
        }
        Ok(x)
    }

    /// Backward pass from the loss gradient w.r.t. the logits. Accumulates
    /// parameter gradients; call [`Network::zero_grads`] between steps.
    pub fn backward(&mut self, grad_logits: &Tensor4<T>) -> Result<()> {
        let mut g = grad_logits.clone();
        for block in self.blocks.iter_mut().rev() {
            g = block.backward(&g)?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for b in &mut self.blocks {
            b.zero_grads();
        }
    }

    /// Visit all (values, grads) parameter pairs in checkpoint order.
    pub fn visit_params_mut(&mut self, mut f: impl FnMut(&mut [T], &mut [T])) {
        for b in &mut self.blocks {
            b.visit_params_mut(&mut f);
        }
    }

    /// Flatten all parameters (checkpoint order) into one vector.
    pub fn flat_params(&mut self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.total_params);
        self.visit_params_mut(|vals, _| out.extend_from_slice(vals));
        out
    }
}

// ---------------------------------------------------------------------------
// Input/target packing
// ---------------------------------------------------------------------------

/// Pack a batch of LLR images into a (N, 1, side, side) tensor.
pub fn images_to_tensor<T: Scalar>(images: &[&LlrImage]) -> Result<Tensor4<T>> {
    let side = images
        .first()
        .ok_or_else(|| Error::EmptySet("empty image batch".into()))?
        .n_side;
    let mut data = Vec::with_capacity(images.len() * side * side);
    for img in images {
        if img.n_side != side {
            return Err(Error::Shape("mixed image sizes in batch".into()));
        }
        data.extend(img.values.iter().map(|&v| T::of_f64(v)));
    }
    Ok(Tensor4::from_vec(images.len(), 1, side, side, data))
}

/// Pack a batch of occupancy maps into a (N, 1, side, side) target tensor.
pub fn targets_to_tensor<T: Scalar>(maps: &[&OccupancyMap]) -> Result<Tensor4<T>> {
    let side = maps
        .first()
        .ok_or_else(|| Error::EmptySet("empty target batch".into()))?
        .n_side;
    let mut data = Vec::with_capacity(maps.len() * side * side);
    for m in maps {
        if m.n_side != side {
            return Err(Error::Shape("mixed map sizes in batch".into()));
        }
        data.extend(m.bits.iter().map(|&b| T::of_f64(f64::from(b))));
    }
    Ok(Tensor4::from_vec(maps.len(), 1, side, side, data))
}

// ---------------------------------------------------------------------------
// Decision rule and loss
// ---------------------------------------------------------------------------

/// Numerically stable sigmoid.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Threshold the sigmoid of the logits at `theta` (strict inequality):
/// bit = 1 iff `sigmoid(logit) > theta`.
pub fn decide<T: Scalar>(logits: &Tensor4<T>, theta: f64) -> Result<Vec<DecisionMap>> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Parameter(format!("theta must be in (0, 1), got {theta}")));
    }
    let theta_t = T::of_f64(theta);
    let side = logits.h;
    let plane = logits.h * logits.w;
    let mut out = Vec::with_capacity(logits.n);
    for b in 0..logits.n {
        let bits = logits.plane(b, 0)[..plane]
            .iter()
            .map(|&o| u8::from(sigmoid(o) > theta_t))
            .collect();
        out.push(DecisionMap { n_side: side, bits, theta });
    }
    Ok(out)
}

/// `softplus(x) = ln(1 + e^x)`, stable for large |x|.
fn softplus<T: Scalar>(x: T) -> T {
    // max(x, 0) + ln(1 + exp(-|x|))
    x.max(T::zero()) + (T::one() + (-x.abs()).exp()).ln()
}

/// Weighted binary cross entropy over logits, in log-sum-exp form:
/// mean of `alpha * t * softplus(-o) + (1 - t) * softplus(o)`.
/// Returns the scalar loss; use [`weighted_bce_with_grad`] during training.
pub fn weighted_bce<T: Scalar>(logits: &Tensor4<T>, targets: &Tensor4<T>, alpha: f64) -> Result<f64> {
    Ok(weighted_bce_with_grad(logits, targets, alpha, false)?.0)
}

/// Loss plus (optionally) its gradient w.r.t. the logits:
/// `d loss / d o = (sigmoid(o) (alpha t + 1 - t) - alpha t) / count`.
pub fn weighted_bce_with_grad<T: Scalar>(
    logits: &Tensor4<T>,
    targets: &Tensor4<T>,
    alpha: f64,
    want_grad: bool,
) -> Result<(f64, Option<Tensor4<T>>)> {
    if !logits.same_shape(targets) {
        return Err(Error::Shape(format!(
            "logits ({},{},{},{}) vs targets ({},{},{},{})",
            logits.n, logits.c, logits.h, logits.w, targets.n, targets.c, targets.h, targets.w
        )));
    }
    if !(alpha > 0.0) {
        return Err(Error::Parameter(format!("alpha must be > 0, got {alpha}")));
    }
    let a = T::of_f64(alpha);
    let count = T::of_f64(logits.len() as f64);
    let mut total = T::zero();
    let mut grad = if want_grad {
        Some(Tensor4::zeros(logits.n, logits.c, logits.h, logits.w))
    } else {
        None
    };
    for i in 0..logits.data.len() {
        let o = logits.data[i];
        let t = targets.data[i];
        total = total + a * t * softplus(-o) + (T::one() - t) * softplus(o);
        if let Some(g) = &mut grad {
            let s = sigmoid(o);
            g.data[i] = (s * (a * t + T::one() - t) - a * t) / count;
        }
    }
    Ok(((total / count).into_f64(), grad))
}
