//! Mapping an energy threshold θ to per-layer winner rates.
//!
//! fc layers: each calibration sample's post-ReLU activations give a minimal
//! winner count reaching θ of their squared energy; the layer rate is the
//! mean count rounded up, over the layer width.
//!
//! conv layers: every pixel of every calibration feature map is one row of an
//! `S x C` matrix. Its squared singular values (eigenvalues of the `C x C`
//! Gram matrix) play the role of per-channel energies, and the effective
//! rank at θ over `C` is the rate.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::nn::forward::{forward, Masking};
use crate::nn::network::{LayerKindTag, Network};
use crate::nn::train::gather;
use crate::rng::{stream_rng, Stream};
use crate::tensor::FeatureMap;
use crate::wta::{check_theta, count_for_energy, sorted_energies};

pub const DEFAULT_SAMPLES: usize = 1000;
pub const DEFAULT_THETA_CONV: f64 = 0.99;
pub const DEFAULT_THETA_FC: f64 = 0.95;
/// θ values at which every report samples the θ -> p curve.
pub const CURVE_THETAS: [f64; 6] = [0.80, 0.85, 0.90, 0.95, 0.99, 1.0];

const BATCH: usize = 100;

/// Nonnegative energies sorted descending, with their sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySpectrum {
    energies: Vec<f64>,
    total: f64,
}

impl EnergySpectrum {
    pub fn new(energies: Vec<f64>) -> Result<Self> {
        if energies.is_empty() {
            return Err(Error::Argument("empty spectrum".into()));
        }
        if energies.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return Err(Error::Numeric("spectrum energies must be finite and nonnegative".into()));
        }
        if energies.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Argument("spectrum energies must be sorted descending".into()));
        }
        let total = energies.iter().sum();
        Ok(Self { energies, total })
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    /// Minimal number of leading energies reaching `theta` of the total.
    pub fn effective_rank(&self, theta: f64) -> Result<usize> {
        check_theta(theta)?;
        if self.total <= 0.0 {
            return Err(Error::Degenerate("spectrum has zero total energy".into()));
        }
        Ok(count_for_energy(&self.energies, theta))
    }
}

/// Stacks every pixel's channel vector into one row, maps in order, pixels
/// row-major within a map. Returns the data and `(rows, channels)`.
pub fn reshape_fm_to_matrix(fms: &[FeatureMap]) -> Result<(Vec<f32>, usize, usize)> {
    let first = fms
        .first()
        .ok_or_else(|| Error::Argument("no feature maps to reshape".into()))?;
    let c = first.channels();
    let mut data = Vec::with_capacity(fms.iter().map(|f| f.data().len()).sum());
    for fm in fms {
        if fm.channels() != c {
            return Err(Error::Shape(format!(
                "feature maps have {} and {c} channels",
                fm.channels()
            )));
        }
        data.extend_from_slice(fm.data());
    }
    let rows = data.len() / c;
    Ok((data, rows, c))
}

/// Running `MᵀM` over rows of `M`, in `f64`.
#[derive(Debug, Clone)]
pub struct GramAccumulator {
    c: usize,
    gram: Vec<f64>,
    rows: usize,
}

impl GramAccumulator {
    pub fn new(channels: usize) -> Self {
        Self {
            c: channels,
            gram: vec![0.0; channels * channels],
            rows: 0,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Adds the rows of a row-major `? x C` block.
    pub fn add_rows(&mut self, data: &[f32]) -> Result<()> {
        if data.len() % self.c != 0 {
            return Err(Error::Shape(format!("{} values are not rows of {}", data.len(), self.c)));
        }
        let mut row = vec![0.0f64; self.c];
        for r in data.chunks_exact(self.c) {
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("non-finite matrix entry".into()));
            }
            for (d, &v) in row.iter_mut().zip(r) {
                *d = v as f64;
            }
            for i in 0..self.c {
                let ri = row[i];
                if ri == 0.0 {
                    continue;
                }
                let g = &mut self.gram[i * self.c..(i + 1) * self.c];
                for j in i..self.c {
                    g[j] += ri * row[j];
                }
            }
            self.rows += 1;
        }
        Ok(())
    }

    /// Eigenvalues of the Gram matrix, i.e. squared singular values of `M`.
    pub fn spectrum(&self) -> Result<EnergySpectrum> {
        if self.rows == 0 {
            return Err(Error::Argument("no rows accumulated".into()));
        }
        let mut full = self.gram.clone();
        for i in 0..self.c {
            for j in 0..i {
                full[i * self.c + j] = full[j * self.c + i];
            }
        }
        let mut eig = symmetric_eigenvalues(&mut full, self.c);
        for e in &mut eig {
            *e = e.max(0.0);
        }
        eig.sort_unstable_by(|a, b| b.total_cmp(a));
        EnergySpectrum::new(eig)
    }
}

/// Eigenvalues of a symmetric `n x n` matrix by cyclic Jacobi rotations.
/// `a` is destroyed.
pub fn symmetric_eigenvalues(a: &mut [f64], n: usize) -> Vec<f64> {
    assert_eq!(a.len(), n * n);
    let frob: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    if frob == 0.0 {
        return vec![0.0; n];
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * frob {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let t = if tau == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

/// Squared singular values of a row-major `rows x cols` matrix, descending.
pub fn singular_spectrum(m: &[f32], rows: usize, cols: usize) -> Result<EnergySpectrum> {
    if rows == 0 || cols == 0 || m.len() != rows * cols {
        return Err(Error::Shape(format!("{} values for a {rows}x{cols} matrix", m.len())));
    }
    let mut acc = GramAccumulator::new(cols);
    acc.add_rows(m)?;
    acc.spectrum()
}

/// `k / C` for the effective rank `k` of the spectrum at `theta`.
pub fn winner_rate_from_spectrum(spectrum: &EnergySpectrum, theta: f64) -> Result<f64> {
    Ok(spectrum.effective_rank(theta)? as f64 / spectrum.len() as f64)
}

/// `ceil(mean k) / n` over per-sample winner counts.
fn rate_from_counts(counts: &[usize], n: usize) -> f64 {
    let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    let k = ((mean - 1e-9).ceil() as usize).clamp(1, n);
    k as f64 / n as f64
}

/// Activation statistics of one layer over the calibration samples.
#[derive(Debug, Clone)]
pub enum LayerStats {
    /// Sorted squared activations of every sample with nonzero energy.
    Fc { neurons: usize, samples: Vec<Vec<f64>> },
    Conv { spectrum: EnergySpectrum },
}

impl LayerStats {
    pub fn neurons(&self) -> usize {
        match self {
            LayerStats::Fc { neurons, .. } => *neurons,
            LayerStats::Conv { spectrum } => spectrum.len(),
        }
    }

    pub fn rate(&self, theta: f64) -> Result<f64> {
        check_theta(theta)?;
        if theta >= 1.0 {
            // Full energy keeps every neuron, including ones that never fired
            // on the calibration set.
            return Ok(1.0);
        }
        match self {
            LayerStats::Fc { neurons, samples } => {
                if samples.is_empty() {
                    return Err(Error::Degenerate("layer output is zero on every calibration sample".into()));
                }
                let counts: Vec<usize> = samples.iter().map(|e| count_for_energy(e, theta)).collect();
                Ok(rate_from_counts(&counts, *neurons))
            }
            LayerStats::Conv { spectrum } => winner_rate_from_spectrum(spectrum, theta),
        }
    }
}

/// Per-layer statistics for every maskable layer of a network.
#[derive(Debug, Clone)]
pub struct CalibrationStats {
    pub sample_count: usize,
    pub layers: Vec<(usize, LayerStats)>,
}

/// `n` distinct training-split indices drawn from the calibration stream.
pub fn calibration_indices(dataset: &Dataset, n: usize, seed: u64) -> Vec<usize> {
    let train = dataset.indices(Split::Train);
    let n = n.min(train.len());
    let mut rng = stream_rng(seed, Stream::Calibration);
    let mut picked: Vec<usize> = sample(&mut rng, train.len(), n).into_iter().map(|i| train[i]).collect();
    picked.sort_unstable();
    picked
}

impl CalibrationStats {
    /// Runs `inputs` (`count x input_len`) unmasked through `net` and
    /// accumulates statistics of the listed layers.
    pub fn from_inputs(net: &Network, inputs: &[f32], count: usize, layers: &[usize]) -> Result<Self> {
        if count == 0 {
            return Err(Error::Argument("no calibration samples".into()));
        }
        if inputs.len() != count * net.input_len() {
            return Err(Error::Shape(format!(
                "{} values for {count} samples of {}",
                inputs.len(),
                net.input_len()
            )));
        }
        for &l in layers {
            if l >= net.num_layers() || net.is_output_layer(l) {
                return Err(Error::Argument(format!("layer {l} cannot be calibrated")));
            }
        }
        let mut fc: Vec<Vec<Vec<f64>>> = vec![Vec::new(); layers.len()];
        let mut grams: Vec<Option<GramAccumulator>> = layers
            .iter()
            .map(|&l| net.layer(l).kind.is_conv().then(|| GramAccumulator::new(net.shapes()[l].activation[2])))
            .collect();
        let len = net.input_len();
        for start in (0..count).step_by(BATCH) {
            let end = (start + BATCH).min(count);
            let cache = forward::<ChaCha8Rng>(net, &inputs[start * len..end * len], end - start, Masking::Off, None)?;
            for (slot, &l) in layers.iter().enumerate() {
                let a_o = &cache.layers[l].a_o;
                match &mut grams[slot] {
                    Some(g) => g.add_rows(a_o)?,
                    None => {
                        let n = net.shapes()[l].activation_len();
                        for s in a_o.chunks_exact(n) {
                            let e = sorted_energies(s);
                            if e[0] > 0.0 {
                                fc[slot].push(e);
                            }
                        }
                    }
                }
            }
        }
        let layers = layers
            .iter()
            .zip(fc)
            .zip(grams)
            .map(|((&l, samples), gram)| {
                Ok((
                    l,
                    match gram {
                        Some(g) => LayerStats::Conv { spectrum: g.spectrum()? },
                        None => LayerStats::Fc {
                            neurons: net.shapes()[l].activation_len(),
                            samples,
                        },
                    },
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            sample_count: count,
            layers,
        })
    }

    /// Statistics of every maskable layer over `samples` training inputs.
    pub fn collect(net: &Network, dataset: &Dataset, samples: usize, seed: u64) -> Result<Self> {
        if !net.is_trained() {
            return Err(Error::State(format!(
                "network {} is untrained; calibrate a trained baseline",
                net.name()
            )));
        }
        let idx = calibration_indices(dataset, samples, seed);
        let mut buf = Vec::new();
        gather(dataset, &idx, &mut buf);
        Self::from_inputs(net, &buf, idx.len(), &net.maskable_layers())
    }

    pub fn get(&self, layer: usize) -> Option<&LayerStats> {
        self.layers.iter().find(|(l, _)| *l == layer).map(|(_, s)| s)
    }

    /// Builds a report choosing `theta_conv` / `theta_fc` per layer kind.
    pub fn report(&self, net: &Network, theta_conv: f64, theta_fc: f64) -> Result<CalibrationReport> {
        check_theta(theta_conv)?;
        check_theta(theta_fc)?;
        let layers = self
            .layers
            .iter()
            .map(|(l, stats)| {
                let spec = net.layer(*l);
                let theta = if spec.kind.is_conv() { theta_conv } else { theta_fc };
                let curve = CURVE_THETAS
                    .iter()
                    .map(|&t| Ok(CurvePoint { theta: t, p: stats.rate(t)? }))
                    .collect::<Result<Vec<_>>>()?;
                let (spectrum, active_samples) = match stats {
                    LayerStats::Conv { spectrum } => (Some(spectrum.energies().to_vec()), None),
                    LayerStats::Fc { samples, .. } => (None, Some(samples.len())),
                };
                Ok(LayerCalibration {
                    layer_id: *l,
                    name: spec.name.clone(),
                    kind: spec.kind.tag(),
                    neurons: stats.neurons(),
                    curve,
                    theta,
                    p: stats.rate(theta)?,
                    spectrum,
                    active_samples,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CalibrationReport {
            network: net.name().to_string(),
            sample_count: self.sample_count,
            theta_conv,
            theta_fc,
            layers,
        })
    }

    /// Largest θ on a 0.0025 grid in `[0.5, 1]` whose fc rates prune at least
    /// `target` of all fc-hidden neurons. `None` if even θ = 0.5 falls short.
    pub fn max_theta_for_pruning(&self, net: &Network, kind: LayerKindTag, target: f64) -> Result<Option<f64>> {
        let mut best = None;
        for step in 0..=200 {
            let theta = 0.5 + step as f64 * 0.0025;
            let mut pruned = 0.0;
            let mut total = 0.0;
            for (l, stats) in &self.layers {
                if net.layer(*l).kind.tag() != kind {
                    continue;
                }
                let n = stats.neurons() as f64;
                pruned += n * (1.0 - stats.rate(theta)?);
                total += n;
            }
            if total > 0.0 && pruned / total >= target {
                best = Some(theta);
            }
        }
        Ok(best)
    }
}

/// One θ -> winner-rate sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub theta: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCalibration {
    pub layer_id: usize,
    pub name: String,
    pub kind: LayerKindTag,
    pub neurons: usize,
    pub curve: Vec<CurvePoint>,
    pub theta: f64,
    pub p: f64,
    /// conv: squared singular values of the reshaped feature maps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<Vec<f64>>,
    /// fc: samples with nonzero output energy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub network: String,
    pub sample_count: usize,
    pub theta_conv: f64,
    pub theta_fc: f64,
    pub layers: Vec<LayerCalibration>,
}

impl CalibrationReport {
    /// Winner rates aligned with the network's layers.
    pub fn winner_rates(&self, net: &Network) -> Result<Vec<Option<f64>>> {
        if self.network != net.name() {
            return Err(Error::Argument(format!(
                "calibration was made for {}, not {}",
                self.network,
                net.name()
            )));
        }
        let mut rates = vec![None; net.num_layers()];
        for l in &self.layers {
            if l.layer_id >= rates.len() || net.is_output_layer(l.layer_id) {
                return Err(Error::Argument(format!("calibrated layer {} does not exist", l.layer_id)));
            }
            rates[l.layer_id] = Some(l.p);
        }
        Ok(rates)
    }

    /// `layer,theta,p` rows of every sampled curve.
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("layer,theta,p\n");
        for l in &self.layers {
            for pt in &l.curve {
                let _ = writeln!(s, "{},{},{}", l.name, pt.theta, pt.p);
            }
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.into(),
            source,
        })
    }
}

/// Calibrates every maskable layer of `net` on `samples` training inputs.
pub fn calibrate_network(
    net: &Network,
    dataset: &Dataset,
    theta_conv: f64,
    theta_fc: f64,
    samples: usize,
    seed: u64,
) -> Result<CalibrationReport> {
    CalibrationStats::collect(net, dataset, samples, seed)?.report(net, theta_conv, theta_fc)
}

/// Rate of one fc layer at `theta` over a batch of inputs.
pub fn fc_winner_rate_profile(net: &Network, layer: usize, inputs: &[f32], count: usize, theta: f64) -> Result<f64> {
    if layer >= net.num_layers() || net.layer(layer).kind.is_conv() {
        return Err(Error::Argument(format!("layer {layer} is not an fc layer")));
    }
    CalibrationStats::from_inputs(net, inputs, count, &[layer])?.layers[0].1.rate(theta)
}

/// Fraction of neurons removed by a set of winner rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruningSummary {
    /// Over fc hidden neurons.
    pub fc_pruned: f64,
    /// Over conv channels.
    pub conv_channels_pruned: f64,
    /// Over every maskable activation (conv channels weighted by their pixels).
    pub activations_pruned: f64,
}

pub fn pruning_summary(net: &Network, rates: &[Option<f64>]) -> PruningSummary {
    let mut fc = (0.0, 0.0);
    let mut conv = (0.0, 0.0);
    let mut all = (0.0, 0.0);
    for l in net.maskable_layers() {
        let shape = net.shapes()[l];
        let c = shape.activation[2] as f64;
        let pruned = rates.get(l).copied().flatten().map_or(0.0, |p| {
            let k = crate::wta::winner_count(p, shape.activation[2]) as f64;
            (c - k) / c
        });
        let target = if net.layer(l).kind.is_conv() { &mut conv } else { &mut fc };
        target.0 += pruned * c;
        target.1 += c;
        let len = shape.activation_len() as f64;
        all.0 += pruned * len;
        all.1 += len;
    }
    let frac = |(a, b): (f64, f64)| if b > 0.0 { a / b } else { 0.0 };
    PruningSummary {
        fc_pruned: frac(fc),
        conv_channels_pruned: frac(conv),
        activations_pruned: frac(all),
    }
}
