//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use dasnet_core::nn::{ForwardCache, LayerKind, Network};

/// Plain triple loop in `f64`.
pub fn naive_gemm(a: &[f32], m: usize, k: usize, b: &[f32], n: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|t| a[i * k + t] as f64 * b[t * n + j] as f64).sum();
        }
    }
    out
}

/// Sum of absolute products per output entry, the scale for relative error.
pub fn naive_gemm_abs(a: &[f32], m: usize, k: usize, b: &[f32], n: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|t| (a[i * k + t] as f64 * b[t * n + j] as f64).abs()).sum();
        }
    }
    out
}

/// Full stable sort by `(|v| desc, index asc)`, first `k`, returned ascending.
pub fn sort_top_k(values: &[f32], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
    let mut top = idx[..k].to_vec();
    top.sort_unstable();
    top
}

/// Minimal k whose largest energies reach `theta` of the total: sort by
/// magnitude, then walk the prefix sums.
pub fn brute_energy_count(values: &[f32], theta: f64) -> usize {
    let mut mags: Vec<f32> = values.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let e: Vec<f64> = mags.iter().map(|&v| v as f64 * v as f64).collect();
    let total: f64 = e.iter().sum();
    let nonzero = e.iter().filter(|&&v| v > 0.0).count();
    if theta >= 1.0 {
        return nonzero;
    }
    let mut prefix = 0.0;
    for (k, v) in e.iter().enumerate() {
        prefix += v;
        if prefix >= theta * total {
            return k + 1;
        }
    }
    e.len()
}

/// Offset added to one parameter inside [`reference_loss`], in `f64`.
#[derive(Debug, Clone, Copy)]
pub struct Perturb {
    pub layer: usize,
    pub bias: bool,
    pub index: usize,
    pub delta: f64,
}

/// Mean softmax cross-entropy of `net` in `f64`, direct convolution loops,
/// with the WTA masks recorded in `frozen` held fixed.
pub fn reference_loss(
    net: &Network,
    x: &[f32],
    labels: &[usize],
    frozen: &ForwardCache,
    perturb: Option<Perturb>,
) -> f64 {
    let batch = labels.len();
    let in_len = net.input_len();
    let mut total = 0.0;
    for b in 0..batch {
        let mut cur: Vec<f64> = x[b * in_len..(b + 1) * in_len].iter().map(|&v| v as f64).collect();
        for (li, (spec, shape)) in net.layers().iter().zip(net.shapes()).enumerate() {
            let mut w: Vec<f64> = net.params()[li].weights.data().iter().map(|&v| v as f64).collect();
            let mut bias: Vec<f64> = net.params()[li].bias.data().iter().map(|&v| v as f64).collect();
            if let Some(p) = perturb.filter(|p| p.layer == li) {
                if p.bias {
                    bias[p.index] += p.delta;
                } else {
                    w[p.index] += p.delta;
                }
            }
            let mut act = match spec.kind {
                LayerKind::Conv {
                    kernel: f,
                    in_channels: c,
                    out_channels: n,
                    stride,
                    pad,
                } => {
                    let [h, wd, _] = shape.input;
                    let [oh, ow, _] = shape.activation;
                    let mut out = vec![0.0f64; oh * ow * n];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            for o in 0..n {
                                let mut s = bias[o];
                                for ch in 0..c {
                                    for ky in 0..f {
                                        for kx in 0..f {
                                            let iy = (oy * stride + ky) as isize - pad as isize;
                                            let ix = (ox * stride + kx) as isize - pad as isize;
                                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                                continue;
                                            }
                                            let wv = w[o * c * f * f + ch * f * f + ky * f + kx];
                                            s += wv * cur[(iy as usize * wd + ix as usize) * c + ch];
                                        }
                                    }
                                }
                                out[(oy * ow + ox) * n + o] = s;
                            }
                        }
                    }
                    out
                }
                LayerKind::Fc { inputs, outputs } => (0..outputs)
                    .map(|o| bias[o] + (0..inputs).map(|k| cur[k] * w[k * outputs + o]).sum::<f64>())
                    .collect(),
            };
            if spec.relu {
                for v in &mut act {
                    *v = v.max(0.0);
                }
            }
            if let Some(mask) = frozen.layers[li].masks.get(b) {
                let keep = mask.keep_flags();
                let c = keep.len();
                for (i, v) in act.iter_mut().enumerate() {
                    if !keep[i % c] {
                        *v = 0.0;
                    }
                }
            }
            cur = if spec.pool {
                let [h, wd, c] = shape.activation;
                let mut out = Vec::with_capacity(shape.output_len());
                for py in 0..h / 2 {
                    for px in 0..wd / 2 {
                        for ch in 0..c {
                            let mut m = f64::NEG_INFINITY;
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    m = m.max(act[((2 * py + dy) * wd + 2 * px + dx) * c + ch]);
                                }
                            }
                            out.push(m);
                        }
                    }
                }
                out
            } else {
                act
            };
        }
        let max = cur.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + cur.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - cur[labels[b]];
    }
    total / batch as f64
}
