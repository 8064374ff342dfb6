//! Batched training forward/backward pass.
//!
//! Activations are kept as flat `batch x len` buffers, channel-last per
//! sample. Products go through `matrixmultiply`'s sgemm; the masked sparse
//! kernels are only used by the single-sample inference path in
//! [`super::infer`].

use rand::Rng;

use super::network::{LayerKind, Network};
use crate::error::{Error, Result};
use crate::kernels::im2col_channels_into;
use crate::wta::{conv_mask_from_slice, fc_mask_from_slice, mask_slices, WtaMask};

/// `c (m x n) = beta * c + a (m x k) · b (k x n)` with explicit strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() >= m * n);
    // SAFETY: the debug assertions above spell out the bounds; every caller
    // passes buffers sized from the same layer geometry.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// How WTA masks are produced during a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum Masking<'a> {
    /// Ignore the winner rates stored on the network.
    Off,
    /// Rank every sample's activations.
    Dynamic,
    /// Reuse the masks recorded in an earlier cache over the same batch.
    Frozen(&'a ForwardCache),
}

/// Inverted dropout on hidden fc outputs.
pub struct Dropout<'r, R: Rng> {
    pub rate: f32,
    pub rng: &'r mut R,
}

#[derive(Debug, Clone, Default)]
pub struct LayerCache {
    /// Layer input, `batch x input_len`.
    pub input: Vec<f32>,
    /// Conv only: im2col of each sample, `batch x (K x M)`.
    pub cols: Vec<f32>,
    /// Post-activation output before masking, `batch x activation_len`.
    pub a_o: Vec<f32>,
    /// `a_o` with non-winners zeroed.
    pub a_w: Vec<f32>,
    /// One mask per sample, empty when the layer is unmasked.
    pub masks: Vec<WtaMask>,
    /// Pooled layers: flat index into the sample's `a_w` of each pooled maximum.
    pub pool_argmax: Vec<u32>,
    /// Dropout multipliers on the layer output, when dropout was active.
    pub dropout: Option<Vec<f32>>,
}

#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    pub batch: usize,
    pub layers: Vec<LayerCache>,
    /// `batch x classes`.
    pub logits: Vec<f32>,
}

fn max_pool(data: &[f32], (h, w, c): (usize, usize, usize), out: &mut Vec<f32>, argmax: &mut Vec<u32>) {
    let (ph, pw) = (h / 2, w / 2);
    for py in 0..ph {
        for px in 0..pw {
            for ch in 0..c {
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = 0usize;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = ((2 * py + dy) * w + 2 * px + dx) * c + ch;
                        if data[idx] > best {
                            best = data[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx as u32);
            }
        }
    }
}

/// Runs `batch` samples (`inputs` is `batch x input_len`) through `net`.
pub fn forward<R: Rng>(
    net: &Network,
    inputs: &[f32],
    batch: usize,
    masking: Masking<'_>,
    mut dropout: Option<Dropout<'_, R>>,
) -> Result<ForwardCache> {
    if batch == 0 || inputs.len() != batch * net.input_len() {
        return Err(Error::Shape(format!(
            "expected {batch} inputs of {} values, got {} values",
            net.input_len(),
            inputs.len()
        )));
    }
    if let Masking::Frozen(c) = masking {
        if c.batch != batch || c.layers.len() != net.num_layers() {
            return Err(Error::State("frozen masks come from a different batch or network".into()));
        }
    }
    let mut x = inputs.to_vec();
    let mut layers = Vec::with_capacity(net.num_layers());
    for (li, (spec, shape)) in net.layers().iter().zip(net.shapes()).enumerate() {
        let params = &net.params()[li];
        let w = params.weights.data();
        let bias = params.bias.data();
        let act_len = shape.activation_len();
        let in_len = shape.input_len();
        let mut cache = LayerCache::default();
        let mut z = vec![0.0f32; batch * act_len];
        match spec.kind {
            LayerKind::Conv { out_channels: n, .. } => {
                let geom = spec.kind.conv_geometry().unwrap();
                let [h, wd, c] = shape.input;
                let k = c * geom.window();
                let m = shape.activation[0] * shape.activation[1];
                let mut cols = vec![0.0f32; batch * k * m];
                for b in 0..batch {
                    let col = &mut cols[b * k * m..(b + 1) * k * m];
                    im2col_channels_into(&x[b * in_len..(b + 1) * in_len], (h, wd, c), geom, 0..c, col)?;
                    // z_b (M x N) = cols_b^T (M x K) · W^T (K x N)
                    sgemm(m, k, n, col, (1, m), w, (1, k), 0.0, &mut z[b * act_len..(b + 1) * act_len]);
                }
                cache.cols = cols;
            }
            LayerKind::Fc { inputs: k, outputs: o } => {
                sgemm(batch, k, o, &x, (k, 1), w, (o, 1), 0.0, &mut z);
            }
        }
        let out_c = shape.activation[2];
        for row in z.chunks_exact_mut(out_c) {
            for (v, &bv) in row.iter_mut().zip(bias) {
                *v += bv;
                if spec.relu && *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        cache.input = std::mem::take(&mut x);
        if net.is_output_layer(li) {
            cache.a_w = z.clone();
            cache.a_o = z;
            layers.push(cache);
            break;
        }

        let mut a_w = z.clone();
        let rate = match masking {
            Masking::Off => None,
            _ => spec.wta,
        };
        if let Some(rate) = rate {
            for b in 0..batch {
                let sample = &mut a_w[b * act_len..(b + 1) * act_len];
                let mask = match masking {
                    Masking::Frozen(c) => {
                        let m = c.layers[li].masks.get(b).cloned().ok_or_else(|| {
                            Error::State(format!("no frozen mask for layer {li} sample {b}"))
                        })?;
                        if m.total() != out_c {
                            return Err(Error::Shape(format!(
                                "frozen mask covers {}, layer has {out_c}",
                                m.total()
                            )));
                        }
                        m
                    }
                    _ if spec.kind.is_conv() => {
                        conv_mask_from_slice(li, sample, out_c, rate, net.fv_mode())?
                    }
                    _ => fc_mask_from_slice(li, sample, rate)?,
                };
                if !mask.is_full() {
                    mask_slices(sample, &mask.keep_flags(), 1);
                }
                cache.masks.push(mask);
            }
        }

        x = if spec.pool {
            let [h, wd, c] = shape.activation;
            let out_len = shape.output_len();
            let mut pooled = Vec::with_capacity(batch * out_len);
            cache.pool_argmax.reserve(batch * out_len);
            for b in 0..batch {
                max_pool(&a_w[b * act_len..(b + 1) * act_len], (h, wd, c), &mut pooled, &mut cache.pool_argmax);
            }
            pooled
        } else {
            a_w.clone()
        };
        if let Some(d) = dropout.as_mut() {
            if !spec.kind.is_conv() && d.rate > 0.0 {
                let keep = 1.0 - d.rate;
                let mult: Vec<f32> = (0..x.len())
                    .map(|_| if d.rng.random::<f32>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                for (v, &m) in x.iter_mut().zip(&mult) {
                    *v *= m;
                }
                cache.dropout = Some(mult);
            }
        }
        cache.a_o = z;
        cache.a_w = a_w;
        layers.push(cache);
    }
    let logits = layers.last().unwrap().a_o.clone();
    Ok(ForwardCache { batch, layers, logits })
}

/// Mean softmax cross-entropy over the batch, plus `d loss / d logits`.
pub fn softmax_cross_entropy(logits: &[f32], labels: &[usize], classes: usize) -> Result<(f64, Vec<f32>)> {
    if logits.len() != labels.len() * classes || labels.is_empty() {
        return Err(Error::Shape(format!(
            "{} logits for {} labels of {classes} classes",
            logits.len(),
            labels.len()
        )));
    }
    let batch = labels.len();
    let mut grad = vec![0.0f32; logits.len()];
    let mut loss = 0.0f64;
    for ((row, g), &y) in logits.chunks_exact(classes).zip(grad.chunks_exact_mut(classes)).zip(labels) {
        if y >= classes {
            return Err(Error::Index { index: y, len: classes });
        }
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        loss += sum.ln() - (row[y] as f64 - max);
        for (j, (gj, e)) in g.iter_mut().zip(&exps).enumerate() {
            let p = e / sum;
            *gj = ((p - if j == y { 1.0 } else { 0.0 }) / batch as f64) as f32;
        }
    }
    Ok((loss / batch as f64, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Back-propagates `d loss / d logits` through the cached pass. Non-winners
/// get zero gradient: the same masks gate the backward pass.
pub fn backward(net: &Network, cache: &ForwardCache, dlogits: &[f32]) -> Result<Vec<LayerGrads>> {
    let batch = cache.batch;
    if dlogits.len() != cache.logits.len() || cache.layers.len() != net.num_layers() {
        return Err(Error::Shape("gradient does not match the cached forward pass".into()));
    }
    let mut grads: Vec<LayerGrads> = net
        .params()
        .iter()
        .map(|p| LayerGrads {
            weights: vec![0.0; p.weights.len()],
            bias: vec![0.0; p.bias.len()],
        })
        .collect();
    // Gradient w.r.t. the current layer's output (what the next layer consumed).
    let mut d_out = dlogits.to_vec();
    for li in (0..net.num_layers()).rev() {
        let spec = net.layer(li);
        let shape = net.shapes()[li];
        let lc = &cache.layers[li];
        let act_len = shape.activation_len();
        let in_len = shape.input_len();

        let mut dz = if net.is_output_layer(li) {
            d_out
        } else {
            if let Some(mult) = &lc.dropout {
                for (g, &m) in d_out.iter_mut().zip(mult) {
                    *g *= m;
                }
            }
            let mut d_act = if spec.pool {
                let mut d = vec![0.0f32; batch * act_len];
                let out_len = shape.output_len();
                for b in 0..batch {
                    let dst = &mut d[b * act_len..(b + 1) * act_len];
                    let src = &d_out[b * out_len..(b + 1) * out_len];
                    let idx = &lc.pool_argmax[b * out_len..(b + 1) * out_len];
                    for (&g, &i) in src.iter().zip(idx) {
                        dst[i as usize] += g;
                    }
                }
                d
            } else {
                d_out
            };
            if !lc.masks.is_empty() {
                for (b, mask) in lc.masks.iter().enumerate() {
                    if !mask.is_full() {
                        mask_slices(&mut d_act[b * act_len..(b + 1) * act_len], &mask.keep_flags(), 1);
                    }
                }
            }
            d_act
        };
        if spec.relu {
            for (g, &a) in dz.iter_mut().zip(&lc.a_o) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
        }

        let out_c = shape.activation[2];
        let g = &mut grads[li];
        for row in dz.chunks_exact(out_c) {
            for (gb, &v) in g.bias.iter_mut().zip(row) {
                *gb += v;
            }
        }
        let w = net.params()[li].weights.data();
        let need_dx = li > 0;
        let mut dx = if need_dx { vec![0.0f32; batch * in_len] } else { Vec::new() };
        match spec.kind {
            LayerKind::Conv { out_channels: n, .. } => {
                let geom = spec.kind.conv_geometry().unwrap();
                let [h, wd, c] = shape.input;
                let f = geom.kernel;
                let k = c * geom.window();
                let (oh, ow) = (shape.activation[0], shape.activation[1]);
                let m = oh * ow;
                let mut dcols = vec![0.0f32; k * m];
                for b in 0..batch {
                    let col = &lc.cols[b * k * m..(b + 1) * k * m];
                    let dzb = &dz[b * act_len..(b + 1) * act_len];
                    // dW (N x K) += dz_b^T (N x M) · cols_b^T (M x K)
                    sgemm(n, m, k, dzb, (1, n), col, (1, m), 1.0, &mut g.weights);
                    if !need_dx {
                        continue;
                    }
                    // dcols (K x M) = W^T (K x N) · dz_b^T (N x M)
                    sgemm(k, n, m, w, (1, k), dzb, (1, n), 0.0, &mut dcols);
                    let dxb = &mut dx[b * in_len..(b + 1) * in_len];
                    let mut rows = dcols.chunks_exact(m);
                    for ch in 0..c {
                        for ky in 0..f {
                            for kx in 0..f {
                                let row = rows.next().unwrap();
                                for oy in 0..oh {
                                    let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for ox in 0..ow {
                                        let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                                        if ix < 0 || ix >= wd as isize {
                                            continue;
                                        }
                                        dxb[(iy as usize * wd + ix as usize) * c + ch] += row[oy * ow + ox];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            LayerKind::Fc { inputs: k, outputs: o } => {
                // dWt (K x O) = x^T (K x B) · dz (B x O)
                sgemm(k, batch, o, &lc.input, (1, k), &dz, (o, 1), 0.0, &mut g.weights);
                if need_dx {
                    // dx (B x K) = dz (B x O) · Wt^T (O x K)
                    sgemm(batch, o, k, &dz, (o, 1), w, (1, o), 0.0, &mut dx);
                }
            }
        }
        d_out = dx;
    }
    Ok(grads)
}

/// Plain SGD. Weights pinned by a weight mask stay at zero.
pub fn sgd_step(net: &mut Network, grads: &[LayerGrads], lr: f32) -> Result<()> {
    if grads.len() != net.num_layers() {
        return Err(Error::Shape(format!("{} gradients for {} layers", grads.len(), net.num_layers())));
    }
    let masks: Vec<Option<Vec<bool>>> = (0..net.num_layers()).map(|i| net.weight_mask(i).map(<[bool]>::to_vec)).collect();
    for ((p, g), mask) in net.params_mut().iter_mut().zip(grads).zip(masks) {
        if g.weights.len() != p.weights.len() || g.bias.len() != p.bias.len() {
            return Err(Error::Shape("gradient shape differs from parameters".into()));
        }
        for (w, &d) in p.weights.data_mut().iter_mut().zip(&g.weights) {
            *w -= lr * d;
        }
        for (b, &d) in p.bias.data_mut().iter_mut().zip(&g.bias) {
            *b -= lr * d;
        }
        if let Some(keep) = mask {
            for (w, k) in p.weights.data_mut().iter_mut().zip(keep) {
                if !k {
                    *w = 0.0;
                }
            }
        }
    }
    Ok(())
}
