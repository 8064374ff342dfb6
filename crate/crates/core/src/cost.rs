//! MAC accounting, ranking-overhead ratios and layer micro-benchmarks.
//!
//! Savings are charged to the layer that consumes a masked activation: its
//! inner dimension shrinks to the winners of the previous layer's mask. The
//! ranking that produced the mask is charged to the same layer.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{
    compact_gemm_into, condensed_gemm_into, dense_gemm_into, im2col_channels_into, winner_filter_columns,
    ConvGeometry,
};
use crate::nn::network::{LayerKind, LayerKindTag, Network};
use crate::rng::{stream_rng, Stream};
use crate::wta::{channel_scores_into, partial_select_top_k_into, selection_comparisons, winner_count, FvMode, WtaMask};

fn check_savings(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Argument(format!(
            "winner rate {p} leaves nothing to save; the ratio needs 0 < p < 1"
        )));
    }
    Ok(())
}

/// Ranking cost over saved MACs for an fc layer: `log2(K) / ((1 - p) O)`.
pub fn ranking_cost_ratio_fc(k: usize, o: usize, p: f64) -> Result<f64> {
    check_savings(p)?;
    if k == 0 || o == 0 {
        return Err(Error::Argument("layer dimensions must be positive".into()));
    }
    Ok((k as f64).log2() / ((1.0 - p) * o as f64))
}

/// Ranking cost over saved MACs for a conv layer reading an `H x W x C` map
/// with `N` filters of `F x F`: `(HWC + C log2 C) / ((1 - p) F^2 HWCN)`.
/// The second value is the large-layer approximation `1 / ((1 - p) F^2 N)`.
pub fn ranking_cost_ratio_conv(h: usize, w: usize, c: usize, f: usize, n: usize, p: f64) -> Result<(f64, f64)> {
    check_savings(p)?;
    if [h, w, c, f, n].contains(&0) {
        return Err(Error::Argument("layer dimensions must be positive".into()));
    }
    let (h, w, c, f, n) = (h as f64, w as f64, c as f64, f as f64, n as f64);
    let exact = (h * w * c + c * c.log2()) / ((1.0 - p) * f * f * h * w * c * n);
    let approx = 1.0 / ((1.0 - p) * f * f * n);
    Ok((exact, approx))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub layer_id: usize,
    pub name: String,
    pub kind: LayerKindTag,
    /// Winner rate of the mask on this layer's input (1 when unmasked).
    pub input_rate: f64,
    pub dense_macs: u64,
    pub condensed_macs: u64,
    pub input_bytes_dense: u64,
    pub input_bytes_condensed: u64,
    /// Comparisons the ratio formulas assume for ranking this layer's input.
    pub ranking_comparisons_model: Option<f64>,
    /// Comparisons actually made ranking a seeded random input of the same size.
    pub ranking_comparisons_measured: Option<u64>,
    pub ranking_ratio: Option<f64>,
    /// conv only: `1 / ((1 - p) F^2 N)`.
    pub ranking_ratio_approx: Option<f64>,
    pub wall_time_dense: Option<f64>,
    pub wall_time_condensed: Option<f64>,
    pub wall_time_ranking: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub network: String,
    pub layers: Vec<LayerCost>,
    pub dense_macs: u64,
    pub condensed_macs: u64,
    pub mac_reduction_percent: f64,
}

impl CostReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "layer,kind,input_rate,dense_macs,condensed_macs,input_bytes_dense,input_bytes_condensed,\
             ranking_comparisons_model,ranking_comparisons_measured,ranking_ratio,ranking_ratio_approx,\
             wall_time_dense,wall_time_condensed,wall_time_ranking\n",
        );
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                l.name,
                match l.kind {
                    LayerKindTag::Conv => "conv",
                    LayerKindTag::Fc => "fc",
                },
                l.input_rate,
                l.dense_macs,
                l.condensed_macs,
                l.input_bytes_dense,
                l.input_bytes_condensed,
                opt(l.ranking_comparisons_model),
                l.ranking_comparisons_measured.map(|v| v.to_string()).unwrap_or_default(),
                opt(l.ranking_ratio),
                opt(l.ranking_ratio_approx),
                opt(l.wall_time_dense),
                opt(l.wall_time_condensed),
                opt(l.wall_time_ranking),
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Winner rate on each layer's input: the output rate of the layer before it.
fn input_rates(net: &Network, rates: &[Option<f64>]) -> Vec<Option<f64>> {
    (0..net.num_layers())
        .map(|i| if i == 0 { None } else { rates.get(i - 1).copied().flatten() })
        .collect()
}

/// MAC and traffic accounting at minibatch size 1 for the given per-layer
/// output winner rates.
pub fn count_macs(net: &Network, rates: &[Option<f64>]) -> Result<CostReport> {
    if rates.len() != net.num_layers() {
        return Err(Error::Shape(format!("{} rates for {} layers", rates.len(), net.num_layers())));
    }
    let mut rng = stream_rng(0, Stream::Bench);
    let mut layers = Vec::with_capacity(net.num_layers());
    for (i, (spec, shape)) in net.layers().iter().zip(net.shapes()).enumerate() {
        let rate = input_rates(net, rates)[i];
        let [h, w, c] = shape.input;
        let kept_channels = rate.map_or(c, |p| winner_count(p, c)) as u64;
        let (dense, condensed, bytes_dense, bytes_condensed) = match spec.kind {
            LayerKind::Conv { kernel, out_channels, .. } => {
                let m = (shape.activation[0] * shape.activation[1]) as u64;
                let f2 = (kernel * kernel) as u64;
                let n = out_channels as u64;
                (f2 * m * c as u64 * n, f2 * m * kept_channels * n, 4 * f2 * c as u64 * m, 4 * f2 * kept_channels * m)
            }
            LayerKind::Fc { inputs, outputs } => {
                // An fc layer after a conv sees the channel mask repeated over every pixel.
                let pixels = (inputs / c) as u64;
                let kept = pixels * kept_channels;
                (
                    inputs as u64 * outputs as u64,
                    kept * outputs as u64,
                    4 * inputs as u64,
                    4 * kept,
                )
            }
        };
        let mut cost = LayerCost {
            layer_id: i,
            name: spec.name.clone(),
            kind: spec.kind.tag(),
            input_rate: kept_channels as f64 / c as f64,
            dense_macs: dense,
            condensed_macs: condensed,
            input_bytes_dense: bytes_dense,
            input_bytes_condensed: bytes_condensed,
            ranking_comparisons_model: None,
            ranking_comparisons_measured: None,
            ranking_ratio: None,
            ranking_ratio_approx: None,
            wall_time_dense: None,
            wall_time_condensed: None,
            wall_time_ranking: None,
        };
        if let Some(p) = rate.filter(|&p| p < 1.0) {
            let prev_conv = net.layer(i - 1).kind.is_conv();
            if prev_conv {
                // Ranking reads the producing layer's pre-pool map.
                let [ph, pw, pc] = net.shapes()[i - 1].activation;
                let (exact, approx) = match spec.kind {
                    LayerKind::Conv { kernel, out_channels, .. } => {
                        let (e, a) = ranking_cost_ratio_conv(h, w, c, kernel, out_channels, p)?;
                        (e, Some(a))
                    }
                    // A conv-ranked mask feeding an fc layer: K = pixels * C inputs.
                    LayerKind::Fc { inputs, outputs } => (ranking_cost_ratio_fc(inputs, outputs, p)?, None),
                };
                let values: Vec<f32> = (0..pc).map(|_| rng.random::<f32>()).collect();
                cost.ranking_comparisons_model = Some((ph * pw * pc) as f64 + pc as f64 * (pc as f64).log2());
                cost.ranking_comparisons_measured =
                    Some((ph * pw * pc) as u64 + selection_comparisons(&values, winner_count(p, pc))?);
                cost.ranking_ratio = Some(exact);
                cost.ranking_ratio_approx = approx;
            } else {
                let k = shape.input_len();
                let o = shape.activation_len();
                let values: Vec<f32> = (0..k).map(|_| rng.random::<f32>()).collect();
                cost.ranking_comparisons_model = Some(k as f64 * (k as f64).log2());
                cost.ranking_comparisons_measured = Some(selection_comparisons(&values, winner_count(p, k))?);
                cost.ranking_ratio = Some(ranking_cost_ratio_fc(k, o, p)?);
            }
        }
        layers.push(cost);
    }
    let dense: u64 = layers.iter().map(|l| l.dense_macs).sum();
    let condensed: u64 = layers.iter().map(|l| l.condensed_macs).sum();
    Ok(CostReport {
        network: net.name().to_string(),
        layers,
        dense_macs: dense,
        condensed_macs: condensed,
        mac_reduction_percent: 100.0 * (1.0 - condensed as f64 / dense as f64),
    })
}

/// Geometry of a benchmarked layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerGeometry {
    Fc {
        inputs: usize,
        outputs: usize,
    },
    /// Input map `height x width x channels`, `filters` outputs.
    Conv {
        height: usize,
        width: usize,
        channels: usize,
        kernel: usize,
        filters: usize,
        stride: usize,
        pad: usize,
    },
}

impl LayerGeometry {
    /// Geometry of layer `i` of `net`.
    pub fn of_layer(net: &Network, i: usize) -> Self {
        let shape = net.shapes()[i];
        match net.layer(i).kind {
            LayerKind::Fc { inputs, outputs } => LayerGeometry::Fc { inputs, outputs },
            LayerKind::Conv {
                kernel,
                out_channels,
                stride,
                pad,
                ..
            } => LayerGeometry::Conv {
                height: shape.input[0],
                width: shape.input[1],
                channels: shape.input[2],
                kernel,
                filters: out_channels,
                stride,
                pad,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub geometry: LayerGeometry,
    pub p: f64,
    pub repetitions: usize,
    /// Median seconds of each phase.
    pub dense: f64,
    pub ranking: f64,
    pub condensed: f64,
    /// `dense / (ranking + condensed)`.
    pub speedup: f64,
    /// `ranking / (ranking + condensed)`.
    pub ranking_share: f64,
    /// `ranking / dense`.
    pub ranking_over_dense: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn time<T>(f: &mut impl FnMut() -> T) -> f64 {
    let start = Instant::now();
    black_box(f());
    start.elapsed().as_secs_f64()
}

/// Each phase runs `inner` times per sample so short phases stay above timer resolution.
fn measure<T>(repetitions: usize, inner: usize, mut f: impl FnMut() -> T) -> f64 {
    black_box(f());
    let samples = (0..repetitions)
        .map(|_| {
            let mut total = 0.0;
            for _ in 0..inner {
                total += time(&mut f);
            }
            total / inner as f64
        })
        .collect();
    median(samples)
}

/// Times one layer dense against ranking plus condensed execution at winner
/// rate `p`, on seeded random nonnegative inputs. Each phase is warmed up
/// once and reported as the median of `repetitions` runs.
pub fn bench_layer(geometry: LayerGeometry, p: f64, repetitions: usize, seed: u64) -> Result<BenchRecord> {
    if repetitions < 3 {
        return Err(Error::Argument(format!("need at least 3 repetitions, got {repetitions}")));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Argument(format!("winner rate {p} outside (0, 1]")));
    }
    let mut rng = stream_rng(seed, Stream::Bench);
    let (dense, ranking, condensed) = match geometry {
        LayerGeometry::Fc { inputs: k, outputs: o } => {
            let wt: Vec<f32> = (0..k * o).map(|_| rng.random_range(-0.05f32..0.05)).collect();
            let x: Vec<f32> = (0..k).map(|_| rng.random::<f32>()).collect();
            let kk = winner_count(p, k);
            let mut out = vec![0.0f32; o];
            let mut keys = Vec::with_capacity(k);
            let mut winners = Vec::with_capacity(k);
            let inner = (2_000_000 / (k * o)).clamp(1, 1000);
            let dense = measure(repetitions, inner, || {
                dense_gemm_into(&x, 1, k, &wt, o, &mut out);
                out[0]
            });
            let ranking = measure(repetitions, inner.max(50), || {
                partial_select_top_k_into(&x, kk, &mut keys, &mut winners).map(|_| winners.len())
            });
            partial_select_top_k_into(&x, kk, &mut keys, &mut winners)?;
            let condensed = measure(repetitions, inner, || {
                condensed_gemm_into(&x, 1, k, &wt, o, &winners, &mut out);
                out[0]
            });
            (dense, ranking, condensed)
        }
        LayerGeometry::Conv {
            height: h,
            width: w,
            channels: c,
            kernel,
            filters: n,
            stride,
            pad,
        } => {
            let geom = ConvGeometry::new(kernel, stride, pad);
            let (oh, ow) = geom.output_dims(h, w)?;
            let m = oh * ow;
            let kdim = c * geom.window();
            let filters: Vec<f32> = (0..n * kdim).map(|_| rng.random_range(-0.05f32..0.05)).collect();
            let fm: Vec<f32> = (0..h * w * c).map(|_| rng.random::<f32>()).collect();
            let kc = winner_count(p, c);
            let mut cols = vec![0.0f32; kdim * m];
            let mut out = vec![0.0f32; n * m];
            let mut scores = Vec::with_capacity(c);
            let mut keys = Vec::with_capacity(c);
            let mut winners = Vec::with_capacity(c);
            let inner = (2_000_000 / (n * kdim * m)).clamp(1, 1000);
            let dense = measure(repetitions, inner, || {
                im2col_channels_into(&fm, (h, w, c), geom, 0..c, &mut cols).map(|_| {
                    dense_gemm_into(&filters, n, kdim, &cols, m, &mut out);
                    out[0]
                })
            });
            let ranking = measure(repetitions, inner.max(50), || {
                channel_scores_into(&fm, c, FvMode::Max, &mut scores);
                partial_select_top_k_into(&scores, kc, &mut keys, &mut winners).map(|_| winners.len())
            });
            channel_scores_into(&fm, c, FvMode::Max, &mut scores);
            partial_select_top_k_into(&scores, kc, &mut keys, &mut winners)?;
            let mask = WtaMask::from_indices(0, winners.clone(), c)?;
            let condensed = measure(repetitions, inner, || {
                let rows = kc * geom.window();
                im2col_channels_into(&fm, (h, w, c), geom, winners.iter().copied(), &mut cols[..rows * m]).map(|_| {
                    let a_cols = winner_filter_columns(&mask, geom.window());
                    compact_gemm_into(&filters, n, kdim, &cols[..rows * m], m, &a_cols, &mut out);
                    out[0]
                })
            });
            (dense, ranking, condensed)
        }
    };
    Ok(BenchRecord {
        geometry,
        p,
        repetitions,
        dense,
        ranking,
        condensed,
        speedup: dense / (ranking + condensed),
        ranking_share: ranking / (ranking + condensed),
        ranking_over_dense: ranking / dense,
    })
}
