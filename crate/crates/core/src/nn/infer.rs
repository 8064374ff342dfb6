//! Single-sample inference on the slice kernels.
//!
//! [`KernelPath::Dense`] multiplies masked (zeroed) activations through the
//! full weight matrices; [`KernelPath::Condensed`] touches only the weight
//! rows/columns of the previous layer's winners. Both use the same row-update
//! order, so their logits agree exactly.

use super::network::{LayerKind, Network};
use crate::error::{Error, Result};
use crate::kernels::{
    compact_gemm_into, condensed_gemm_into, dense_gemm_into, im2col_channels_into, winner_filter_columns,
};
use crate::wta::{conv_mask_from_slice, fc_mask_from_slice, mask_slices, WtaMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelPath {
    Dense,
    Condensed,
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub logits: Vec<f32>,
    /// Output mask of each layer, `None` where the layer is unmasked.
    pub masks: Vec<Option<WtaMask>>,
}

impl Inference {
    pub fn predicted_class(&self) -> usize {
        argmax(&self.logits)
    }
}

pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn pool(data: &[f32], (h, w, c): (usize, usize, usize)) -> Vec<f32> {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(ph * pw * c);
    for py in 0..ph {
        for px in 0..pw {
            for ch in 0..c {
                let mut best = f32::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        best = best.max(data[((2 * py + dy) * w + 2 * px + dx) * c + ch]);
                    }
                }
                out.push(best);
            }
        }
    }
    out
}

/// Runs one sample. With `use_masks` every layer carrying a winner rate
/// ranks its own output.
pub fn infer(net: &Network, x: &[f32], use_masks: bool, path: KernelPath) -> Result<Inference> {
    if x.len() != net.input_len() {
        return Err(Error::Shape(format!(
            "sample has {} values, network expects {}",
            x.len(),
            net.input_len()
        )));
    }
    let mut current = x.to_vec();
    // Mask on `current`, expressed over its channel axis.
    let mut input_mask: Option<WtaMask> = None;
    let mut masks = Vec::with_capacity(net.num_layers());
    for (li, (spec, shape)) in net.layers().iter().zip(net.shapes()).enumerate() {
        let params = &net.params()[li];
        let w = params.weights.data();
        let out_c = shape.activation[2];
        let mut act = match spec.kind {
            LayerKind::Conv { out_channels: n, .. } => {
                let geom = spec.kind.conv_geometry().unwrap();
                let [h, wd, c] = shape.input;
                let k = c * geom.window();
                let m = shape.activation[0] * shape.activation[1];
                let mut out = vec![0.0f32; n * m];
                match (&input_mask, path) {
                    (Some(mask), KernelPath::Condensed) => {
                        let rows = mask.winner_count() * geom.window();
                        let mut cols = vec![0.0f32; rows * m];
                        im2col_channels_into(&current, (h, wd, c), geom, mask.winners().iter().copied(), &mut cols)?;
                        let a_cols = winner_filter_columns(mask, geom.window());
                        compact_gemm_into(w, n, k, &cols, m, &a_cols, &mut out);
                    }
                    _ => {
                        let mut cols = vec![0.0f32; k * m];
                        im2col_channels_into(&current, (h, wd, c), geom, 0..c, &mut cols)?;
                        dense_gemm_into(w, n, k, &cols, m, &mut out);
                    }
                }
                // N x M -> channel-last M x N
                let mut t = vec![0.0f32; m * n];
                for (ch, row) in out.chunks_exact(m).enumerate() {
                    for (px, &v) in row.iter().enumerate() {
                        t[px * n + ch] = v;
                    }
                }
                t
            }
            LayerKind::Fc { inputs: k, outputs: o } => {
                let mut out = vec![0.0f32; o];
                match (&input_mask, path) {
                    (Some(mask), KernelPath::Condensed) => {
                        let flat = if mask.total() == k {
                            mask.clone()
                        } else {
                            mask.expand_over_pixels(k / mask.total())
                        };
                        condensed_gemm_into(&current, 1, k, w, o, flat.winners(), &mut out);
                    }
                    _ => dense_gemm_into(&current, 1, k, w, o, &mut out),
                }
                out
            }
        };
        for px in act.chunks_exact_mut(out_c) {
            for (v, &b) in px.iter_mut().zip(params.bias.data()) {
                *v += b;
                if spec.relu && *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        let mask = match spec.wta {
            Some(rate) if use_masks => {
                let m = if spec.kind.is_conv() {
                    conv_mask_from_slice(li, &act, out_c, rate, net.fv_mode())?
                } else {
                    fc_mask_from_slice(li, &act, rate)?
                };
                mask_slices(&mut act, &m.keep_flags(), 1);
                Some(m)
            }
            _ => None,
        };
        current = if spec.pool {
            pool(&act, (shape.activation[0], shape.activation[1], out_c))
        } else {
            act
        };
        input_mask = mask.clone();
        masks.push(mask);
    }
    Ok(Inference { logits: current, masks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::forward::{forward, Masking};
    use crate::nn::network::{build_network, LayerSpec, NetName};
    use rand_chacha::ChaCha8Rng;

    fn sample(len: usize, seed: usize) -> Vec<f32> {
        (0..len).map(|i| ((i * 31 + seed * 17) % 97) as f32 / 97.0).collect()
    }

    #[test]
    fn condensed_equals_zeroed_dense() {
        let layers = vec![
            LayerSpec::conv("c1", 3, 3, 8, 1),
            LayerSpec::conv("c2", 3, 8, 6, 1),
            LayerSpec::fc("f1", 2 * 2 * 6, 12, true),
            LayerSpec::fc("f2", 12, 4, false),
        ];
        let mut net = Network::new("t", [8, 8, 3], layers, 9).unwrap();
        net.set_winner_rates(&[Some(0.5), Some(0.34), Some(0.25), None]).unwrap();
        for s in 0..5 {
            let x = sample(net.input_len(), s);
            let d = infer(&net, &x, true, KernelPath::Dense).unwrap();
            let c = infer(&net, &x, true, KernelPath::Condensed).unwrap();
            assert_eq!(d.logits, c.logits);
            assert_eq!(d.masks, c.masks);
            assert_eq!(c.masks[0].as_ref().unwrap().winner_count(), 4);
        }
    }

    #[test]
    fn agrees_with_batched_forward() {
        let mut net = build_network(NetName::Mlp3, 3);
        net.set_winner_rates(&[Some(0.3), Some(0.2), None]).unwrap();
        let x: Vec<f32> = (0..2).flat_map(|s| sample(784, s)).collect();
        let batched = forward::<ChaCha8Rng>(&net, &x, 2, Masking::Dynamic, None).unwrap();
        for s in 0..2 {
            let one = infer(&net, &x[s * 784..(s + 1) * 784], true, KernelPath::Condensed).unwrap();
            for (a, b) in one.logits.iter().zip(&batched.logits[s * 10..(s + 1) * 10]) {
                assert!((a - b).abs() < 1e-4, "{a} vs {b}");
            }
            assert_eq!(one.masks[0].as_ref().unwrap(), &batched.layers[0].masks[s]);
        }
    }

    #[test]
    fn lenet_condensed_path_runs() {
        let mut net = build_network(NetName::LeNet4, 1);
        net.set_winner_rates(&[Some(0.5), Some(0.5), Some(0.2), None]).unwrap();
        let x = sample(784, 4);
        let d = infer(&net, &x, true, KernelPath::Dense).unwrap();
        let c = infer(&net, &x, true, KernelPath::Condensed).unwrap();
        assert_eq!(d.logits, c.logits);
    }
}
