//! Derivation of compact network variants: magnitude-based pruning and
//! per-tensor quantization.
//!
//! Both transforms keep every shape unchanged, so a compacted network is
//! always comparable with its original. Pruning zeroes small parameters
//! relative to the largest magnitude in the same layer; quantization snaps
//! parameters to a symmetric integer grid (or to IEEE binary16) and stores
//! the dequantized `f64` values, which is exactly what a fixed-point
//! inference engine would compute with.

use half::f16;

use crate::model::{Layer, Network};
use crate::{Error, Result};

/// Quantization scheme for [`quantize`]. Integer schemes are symmetric
/// per-tensor: `scale = max|v| / qmax` with `qmax = 2^(bits-1) - 1`, values
/// rounded half-to-even and clamped to `[-qmax, qmax]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantScheme {
    Float16,
    Int16,
    Int8,
    Int4,
}

impl QuantScheme {
    /// Integer bit width, or `None` for the float scheme.
    pub fn bits(self) -> Option<u32> {
        match self {
            QuantScheme::Float16 => None,
            QuantScheme::Int16 => Some(16),
            QuantScheme::Int8 => Some(8),
            QuantScheme::Int4 => Some(4),
        }
    }
}

/// Which parameters share a pruning threshold.
///
/// The reference scale for a layer's threshold is the largest magnitude
/// among its weights and biases taken together ([`PruneScope::JointMax`],
/// the default used by [`prune_mbp`]); [`PruneScope::PerTensorMax`] instead
/// scales weight and bias thresholds independently.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneScope {
    JointMax,
    PerTensorMax,
}

/// Magnitude-based pruning: within each parameterized layer, zero every
/// entry whose magnitude is strictly below `fraction` times the layer's
/// largest magnitude. `fraction = 0` removes nothing; `fraction = 1`
/// removes everything except the extreme entries themselves.
pub fn prune_mbp(net: &Network, fraction: f64) -> Result<Network> {
    prune_mbp_scoped(net, fraction, PruneScope::JointMax)
}

/// [`prune_mbp`] with an explicit choice of threshold scope.
pub fn prune_mbp_scoped(net: &Network, fraction: f64, scope: PruneScope) -> Result<Network> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!(
            "prune fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let layers = net
        .layers
        .iter()
        .map(|layer| match layer {
            Layer::Dense {
                weights,
                bias,
                in_features,
                out_features,
            } => {
                let (w, b) = prune_tensors(weights, bias, fraction, scope);
                Layer::Dense {
                    weights: w,
                    bias: b,
                    in_features: *in_features,
                    out_features: *out_features,
                }
            }
            Layer::Conv2d {
                kernel,
                bias,
                input_shape,
                out_channels,
                kernel_h,
                kernel_w,
                stride_h,
                stride_w,
            } => {
                let (k, b) = prune_tensors(kernel, bias, fraction, scope);
                Layer::Conv2d {
                    kernel: k,
                    bias: b,
                    input_shape: *input_shape,
                    out_channels: *out_channels,
                    kernel_h: *kernel_h,
                    kernel_w: *kernel_w,
                    stride_h: *stride_h,
                    stride_w: *stride_w,
                }
            }
            other => other.clone(),
        })
        .collect();
    Network::new(net.name.clone(), layers)
}

fn prune_tensors(
    weights: &[f64],
    bias: &[f64],
    fraction: f64,
    scope: PruneScope,
) -> (Vec<f64>, Vec<f64>) {
    let max_abs = |values: &[f64]| values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let apply = |values: &[f64], threshold: f64| {
        values
            .iter()
            .map(|v| if v.abs() < threshold { 0.0 } else { *v })
            .collect()
    };
    match scope {
        PruneScope::JointMax => {
            let threshold = fraction * max_abs(weights).max(max_abs(bias));
            (apply(weights, threshold), apply(bias, threshold))
        }
        PruneScope::PerTensorMax => (
            apply(weights, fraction * max_abs(weights)),
            apply(bias, fraction * max_abs(bias)),
        ),
    }
}

/// Quantize every weight and bias tensor per-tensor under `scheme`,
/// returning a network whose parameters are the dequantized values.
/// An all-zero tensor passes through unchanged.
pub fn quantize(net: &Network, scheme: QuantScheme) -> Result<Network> {
    let layers = net
        .layers
        .iter()
        .map(|layer| match layer {
            Layer::Dense {
                weights,
                bias,
                in_features,
                out_features,
            } => Layer::Dense {
                weights: quantize_tensor(weights, scheme),
                bias: quantize_tensor(bias, scheme),
                in_features: *in_features,
                out_features: *out_features,
            },
            Layer::Conv2d {
                kernel,
                bias,
                input_shape,
                out_channels,
                kernel_h,
                kernel_w,
                stride_h,
                stride_w,
            } => Layer::Conv2d {
                kernel: quantize_tensor(kernel, scheme),
                bias: quantize_tensor(bias, scheme),
                input_shape: *input_shape,
                out_channels: *out_channels,
                kernel_h: *kernel_h,
                kernel_w: *kernel_w,
                stride_h: *stride_h,
                stride_w: *stride_w,
            },
            other => other.clone(),
        })
        .collect();
    Network::new(net.name.clone(), layers)
}

/// Quantize one tensor. Exposed for the scale arithmetic tests; networks
/// should go through [`quantize`].
pub fn quantize_tensor(values: &[f64], scheme: QuantScheme) -> Vec<f64> {
    match scheme.bits() {
        None => values
            .iter()
            .map(|v| f64::from(f16::from_f64(*v)))
            .collect(),
        Some(bits) => {
            let qmax = ((1_i64 << (bits - 1)) - 1) as f64;
            let max = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if max == 0.0 {
                return values.to_vec();
            }
            let scale = max / qmax;
            values
                .iter()
                .map(|v| (v / scale).round_ties_even().clamp(-qmax, qmax) * scale)
                .collect()
        }
    }
}

/// Per-layer parameter counts used by the `compact` command's summary.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStats {
    pub layer: usize,
    pub kind: &'static str,
    pub parameters: usize,
    pub zeros: usize,
}

/// Count parameters and exact zeros per parameterized layer.
pub fn parameter_stats(net: &Network) -> Vec<LayerStats> {
    let count = |values: &[f64]| values.iter().filter(|v| **v == 0.0).count();
    net.layers
        .iter()
        .enumerate()
        .filter_map(|(layer, l)| match l {
            Layer::Dense { weights, bias, .. } => Some(LayerStats {
                layer,
                kind: "dense",
                parameters: weights.len() + bias.len(),
                zeros: count(weights) + count(bias),
            }),
            Layer::Conv2d { kernel, bias, .. } => Some(LayerStats {
                layer,
                kind: "conv2d",
                parameters: kernel.len() + bias.len(),
                zeros: count(kernel) + count(bias),
            }),
            _ => None,
        })
        .collect()
}
