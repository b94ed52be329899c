//! Network compression by post-training uniform quantization, and identity
//! padding so a pair of networks has matching depth and layer kinds.
//!
//! Quantization snaps every fully connected weight/bias tensor to a per-tensor
//! symmetric grid and dequantizes back to f64, so reachability downstream
//! operates on the exact deployed values.


use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Layer, LayerKind, Network};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct QuantSpec {
    /// Grid resolution in bits, 2..=16.
    pub bits: u8,
}

impl Default for QuantSpec {
    fn default() -> Self {
        QuantSpec { bits: 8 }
    }
}

impl QuantSpec {
    pub fn new(bits: u8) -> Result<Self> {
        if !(2..=16).contains(&bits) {
            return Err(Error::Validation(format!("bits must be in 2..=16, got {bits}")));
        }
        Ok(QuantSpec { bits })
    }

    fn max_level(&self) -> f64 {
        ((1u32 << (self.bits - 1)) - 1) as f64
    }
}

/// Snap the scale to a fixed point of `s -> (k*s)/k` so that requantizing an
/// already-quantized tensor reproduces it bit-exactly (the division does not
/// always invert the multiplication in floating point).
fn fixed_point_scale(mut scale: f64, k: f64) -> f64 {
    for _ in 0..8 {
        let next = (k * scale) / k;
        if next == scale {
            return scale;
        }
        scale = next;
    }
    scale
}

fn quantize_slice(values: &mut [f64], spec: &QuantSpec) {
    let k = spec.max_level();
    let max_abs = values.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if max_abs == 0.0 {
        return; // all-zero tensor: scale would be 0, leave unchanged
    }
    let scale = fixed_point_scale(max_abs / k, k);
    for v in values.iter_mut() {
        let q = (*v / scale).round_ties_even().clamp(-k, k);
        *v = q * scale;
    }
}

/// Quantize every fully connected tensor of the network (round-to-nearest-even
/// onto the symmetric grid with `scale = max|v| / (2^(bits-1) - 1)`), then
/// dequantize. Layer structure is unchanged.
pub fn quantize(net: &Network, spec: &QuantSpec) -> Network {
    let layers = net
        .layers()
        .iter()
        .map(|layer| match layer {
            Layer::FullyConnected { weight, bias } => {
                let mut w = weight.clone();
                let mut b = bias.clone();
                quantize_slice(w.as_slice_mut().expect("standard layout"), spec);
                quantize_slice(b.as_slice_mut().expect("standard layout"), spec);
                Layer::FullyConnected { weight: w, bias: b }
            }
            relu => relu.clone(),
        })
        .collect();
    Network::new(layers).expect("quantization preserves the layer chain")
}

/// Simulated deployed size: 32-bit parameters.
pub fn original_size_bytes(net: &Network) -> u64 {
    net.parameter_count() as u64 * 4
}

/// Simulated deployed size after quantization: `bits` per parameter plus one
/// 32-bit scale per tensor.
pub fn quantized_size_bytes(net: &Network, spec: &QuantSpec) -> u64 {
    let param_bits = net.parameter_count() as u64 * spec.bits as u64;
    let tensors = net
        .layers()
        .iter()
        .filter(|l| matches!(l, Layer::FullyConnected { .. }))
        .count() as u64
        * 2;
    param_bits.div_ceil(8) + tensors * 4
}

/// Pad `net` with identity layers until its kind sequence equals `kinds`
/// (the partner network's sequence), satisfying the merge preconditions.
///
/// Padding inserts fully connected layers with identity weight and zero bias.
/// A ReLU may only be inserted where the running value is guaranteed
/// non-negative, i.e. directly after an original ReLU output passed through
/// inserted identity layers; anywhere else it would change the network
/// function and the call is rejected.
pub fn pad_to_depth(net: &Network, depth: usize, kinds: &[LayerKind]) -> Result<Network> {
    if kinds.len() != depth {
        return Err(Error::Validation(format!(
            "target depth {depth} but {} layer kinds given",
            kinds.len()
        )));
    }
    if depth < net.depth() {
        return Err(Error::Validation(format!(
            "target depth {depth} below current depth {}",
            net.depth()
        )));
    }

    let original = net.layers();
    let mut next_original = 0;
    let mut out: Vec<Layer> = Vec::with_capacity(depth);
    // Tracks whether the running value is provably non-negative: true right
    // after a ReLU (original or inserted) and preserved by inserted identity
    // layers only.
    let mut nonneg = false;

    for &target in kinds {
        let width = if out.is_empty() {
            net.input_dim()
        } else {
            out.last().unwrap().output_width()
        };
        if next_original < original.len() && original[next_original].kind() == target {
            let layer = original[next_original].clone();
            nonneg = matches!(layer.kind(), LayerKind::Relu);
            out.push(layer);
            next_original += 1;
        } else {
            match target {
                LayerKind::FullyConnected => {
                    out.push(Layer::identity(width));
                    // identity keeps sign information as-is; nonneg unchanged
                }
                LayerKind::Relu => {
                    if !nonneg {
                        return Err(Error::Validation(format!(
                            "cannot insert a ReLU at padded position {}: the running \
                             activation is not guaranteed non-negative there, so padding \
                             would change the network function",
                            out.len()
                        )));
                    }
                    out.push(Layer::Relu { width });
                }
            }
        }
    }
    if next_original != original.len() {
        return Err(Error::Validation(format!(
            "layer kinds of the network do not embed into the target sequence \
             ({} of {} layers placed)",
            next_original,
            original.len()
        )));
    }
    Network::new(out)
}

/// Pad the shallower of the two networks to the deeper one's kind sequence.
pub fn pad_pair(n1: &Network, n2: &Network) -> Result<(Network, Network)> {
    if n1.depth() == n2.depth() {
        return Ok((n1.clone(), n2.clone()));
    }
    if n1.depth() < n2.depth() {
        Ok((pad_to_depth(n1, n2.depth(), &n2.kinds())?, n2.clone()))
    } else {
        Ok((n1.clone(), pad_to_depth(n2, n1.depth(), &n1.kinds())?))
    }
}
