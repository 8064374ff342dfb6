//! Weight compression on top of activation sparsity: symmetric 8-bit
//! per-layer quantization and per-layer fc magnitude pruning.

use crate::error::{Error, Result};
use crate::nn::checkpoint::Int8Weights;
use crate::nn::network::Network;
use crate::wta::partial_select_top_k;

/// Codes and scale of one layer; weight = code * scale, zero point 0.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub codes: Vec<i8>,
    pub scale: f32,
}

impl QuantizedLayer {
    pub fn quantize(weights: &[f32]) -> Result<Self> {
        let max = weights.iter().fold(0.0f32, |m, &w| m.max(w.abs()));
        if !max.is_finite() {
            return Err(Error::Numeric("non-finite weight".into()));
        }
        if max == 0.0 {
            return Err(Error::Degenerate("all weights are zero; the quantization scale is undefined".into()));
        }
        let scale = max / 127.0;
        let codes = weights
            .iter()
            .map(|&w| (w / scale).round().clamp(-127.0, 127.0) as i8)
            .collect();
        Ok(Self { codes, scale })
    }

    pub fn dequantize(&self) -> Vec<f32> {
        self.codes.iter().map(|&c| c as f32 * self.scale).collect()
    }
}

impl From<QuantizedLayer> for Int8Weights {
    fn from(q: QuantizedLayer) -> Self {
        Int8Weights {
            codes: q.codes,
            scale: q.scale,
        }
    }
}

/// Quantizes every layer's weights (biases stay `f32`). Returns the network
/// with dequantized weights, which is what inference runs on, plus the codes.
pub fn quantize_weights_linear8(net: &Network) -> Result<(Network, Vec<QuantizedLayer>)> {
    let mut out = net.clone();
    let mut layers = Vec::with_capacity(net.num_layers());
    for (i, p) in out.params_mut().iter_mut().enumerate() {
        let q = QuantizedLayer::quantize(p.weights.data())
            .map_err(|e| match e {
                Error::Degenerate(m) => Error::Degenerate(format!("layer {i}: {m}")),
                other => other,
            })?;
        p.weights.data_mut().copy_from_slice(&q.dequantize());
        layers.push(q);
    }
    Ok((out, layers))
}

/// Keeps the `floor(density * n)` largest-magnitude weights of every fc
/// layer (at least one), zeroes the rest and pins them for later training.
pub fn magnitude_prune_fc(net: &mut Network, density: f64) -> Result<()> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::Argument(format!("density {density} outside (0, 1]")));
    }
    if density == 1.0 {
        return Ok(());
    }
    for i in 0..net.num_layers() {
        if net.layer(i).kind.is_conv() {
            continue;
        }
        let w = net.params()[i].weights.data();
        let keep_n = ((density * w.len() as f64).floor() as usize).max(1);
        let mut keep = vec![false; w.len()];
        for j in partial_select_top_k(w, keep_n)? {
            keep[j] = true;
        }
        net.set_weight_mask(i, keep)?;
    }
    Ok(())
}

/// Fraction of fc weights that are nonzero.
pub fn fc_weight_density(net: &Network) -> f64 {
    let (nz, total) = (0..net.num_layers())
        .filter(|&i| !net.layer(i).kind.is_conv())
        .map(|i| {
            let w = net.params()[i].weights.data();
            (w.iter().filter(|&&v| v != 0.0).count(), w.len())
        })
        .fold((0, 0), |(a, b), (c, d)| (a + c, b + d));
    nz as f64 / total as f64
}
