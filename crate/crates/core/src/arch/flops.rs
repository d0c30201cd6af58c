//! Parameter and multiply-accumulate counting, and depth calibration.

use crate::arch::config::ArchConfig;
use crate::arch::model::{Layer, ModelSpec};
use crate::autodiff::output_size;
use crate::error::{Error, Result};

/// Trainable parameter count (running statistics excluded).
pub fn count_params(config: &ArchConfig) -> Result<u64> {
    Ok(ModelSpec::build(config)?.num_params() as u64)
}

/// Multiply-accumulates of one forward pass at `config.input_resolution`,
/// counting convolutions (every kernel tap, padded or not) and the linear
/// head. One MAC counts as one FLOP.
pub fn count_flops(config: &ArchConfig) -> Result<u64> {
    let spec = ModelSpec::build(config)?;
    let r = config.input_resolution;
    let mut shape = [3usize, r, r];
    let mut total = 0u64;
    for layer in &spec.layers {
        total += layer_macs(&spec, layer, &mut shape)?;
    }
    Ok(total)
}

/// MACs of one layer applied to a `[C, H, W]` feature map; updates the shape.
fn layer_macs(spec: &ModelSpec, layer: &Layer, shape: &mut [usize; 3]) -> Result<u64> {
    let macs = match layer {
        Layer::Conv {
            params,
            in_channels,
            out_channels,
            kernel,
            ..
        } => {
            let ho = output_size(shape[1], *kernel, params.stride, params.padding)?;
            let wo = output_size(shape[2], *kernel, params.stride, params.padding)?;
            *shape = [*out_channels, ho, wo];
            (out_channels * ho * wo * (in_channels / params.groups) * kernel * kernel) as u64
        }
        Layer::MaxPool {
            kernel,
            stride,
            padding,
        } => {
            shape[1] = output_size(shape[1], *kernel, *stride, *padding)?;
            shape[2] = output_size(shape[2], *kernel, *stride, *padding)?;
            0
        }
        Layer::Residual(inner) => {
            let mut s = *shape;
            let mut sum = 0;
            for l in inner {
                sum += layer_macs(spec, l, &mut s)?;
            }
            sum
        }
        Layer::GlobalAvgPool => {
            *shape = [shape[0], 1, 1];
            0
        }
        Layer::Linear { weight, .. } => {
            let out = spec.params[*weight].shape[0];
            let macs = (out * shape[0]) as u64;
            *shape = [out, 1, 1];
            macs
        }
        Layer::Norm(_) | Layer::Act { .. } => 0,
    };
    Ok(macs)
}

/// Largest multiplier tried by [`calibrate_depths`].
pub const MAX_DEPTH_MULTIPLIER: usize = 32;
/// Stage depth ratio scaled by the calibration multiplier.
pub const BASE_DEPTH_RATIO: [usize; 4] = [1, 1, 3, 1];

/// Smallest depths `m * (1, 1, 3, 1)` whose FLOPs land within
/// `tolerance * target` of `target`.
pub fn calibrate_depths(config: &ArchConfig, target_flops: u64, tolerance: f64) -> Result<[usize; 4]> {
    if !(tolerance >= 0.0) {
        return Err(Error::Calibration(format!("tolerance {tolerance} must be non-negative")));
    }
    let mut cfg = config.clone();
    for m in 1..=MAX_DEPTH_MULTIPLIER {
        cfg.depths = BASE_DEPTH_RATIO.map(|r| r * m);
        let f = count_flops(&cfg)?;
        if (f as f64 - target_flops as f64).abs() <= tolerance * target_flops as f64 {
            return Ok(cfg.depths);
        }
    }
    Err(Error::Calibration(format!(
        "no depth multiplier in 1..={MAX_DEPTH_MULTIPLIER} reaches {target_flops} FLOPs within {:.1}%",
        tolerance * 100.0
    )))
}
