//! Run-time winners-take-all selection.
//!
//! Fully-connected layers rank their activations directly. Convolution layers
//! first reduce each channel of the feature map to one score (the feature
//! vector) and rank the scores, so a mask always names whole channels.
//!
//! Ranking uses a strict total order: larger magnitude first, lower index on
//! ties. Both are packed into one `u64` key so selection runs on plain integer
//! comparisons.

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Tensor};

/// The winner set of one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WtaMask {
    layer_id: usize,
    winners: Vec<usize>,
    total: usize,
}

impl WtaMask {
    /// Builds a mask from explicit winner indices, which must be strictly
    /// increasing, non-empty and below `total`.
    pub fn from_indices(layer_id: usize, winners: Vec<usize>, total: usize) -> Result<Self> {
        if winners.is_empty() {
            return Err(Error::Argument("a mask needs at least one winner".into()));
        }
        if let Some(w) = winners.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Argument(format!(
                "winner indices must be strictly increasing, found {} then {}",
                w[0], w[1]
            )));
        }
        let last = *winners.last().unwrap();
        if last >= total {
            return Err(Error::Index {
                index: last,
                len: total,
            });
        }
        Ok(Self {
            layer_id,
            winners,
            total,
        })
    }

    /// Mask keeping every index.
    pub fn full(layer_id: usize, total: usize) -> Self {
        Self {
            layer_id,
            winners: (0..total).collect(),
            total,
        }
    }

    pub fn layer_id(&self) -> usize {
        self.layer_id
    }

    pub fn winners(&self) -> &[usize] {
        &self.winners
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn winner_count(&self) -> usize {
        self.winners.len()
    }

    /// `|winners| / total`.
    pub fn winner_rate(&self) -> f64 {
        self.winners.len() as f64 / self.total as f64
    }

    pub fn is_full(&self) -> bool {
        self.winners.len() == self.total
    }

    /// Dense keep/drop flags, one per index.
    pub fn keep_flags(&self) -> Vec<bool> {
        let mut keep = vec![false; self.total];
        for &w in &self.winners {
            keep[w] = true;
        }
        keep
    }

    /// Lifts a channel mask to the flattened `pixels x channels` index space
    /// of a channel-last feature map.
    pub fn expand_over_pixels(&self, pixels: usize) -> WtaMask {
        let c = self.total;
        let mut winners = Vec::with_capacity(pixels * self.winners.len());
        for p in 0..pixels {
            winners.extend(self.winners.iter().map(|&w| p * c + w));
        }
        WtaMask {
            layer_id: self.layer_id,
            winners,
            total: pixels * c,
        }
    }
}

/// Number of winners for rate `p` over `total` neurons: `ceil(p * total)`,
/// at least one.
pub fn winner_count(rate: f64, total: usize) -> usize {
    // The slack absorbs representation error when `rate` was itself k / total.
    let k = (rate * total as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(total)
}

fn check_rate(rate: f64) -> Result<()> {
    if rate.is_nan() || rate <= 0.0 || rate > 1.0 {
        return Err(Error::Argument(format!(
            "winner rate must lie in (0, 1], got {rate}"
        )));
    }
    Ok(())
}

/// Magnitude as an order-preserving integer (NaN ranks above infinity).
#[inline]
fn magnitude_key(value: f32) -> u32 {
    value.to_bits() & 0x7fff_ffff
}

const RADIX_BITS: u32 = 11;
const RADIX_MIN_LEN: usize = 512;

/// The k-th largest magnitude key (`0 < k < n`) and how many keys are
/// strictly above it. Long inputs are first bucketed on their top key bits
/// so introselect only sees the bucket holding the threshold.
fn kth_magnitude(values: &[f32], k: usize, keys: &mut Vec<u32>) -> (u32, usize) {
    keys.clear();
    let mut above = 0;
    if values.len() >= RADIX_MIN_LEN {
        let shift = 31 - RADIX_BITS;
        let mut hist = [0u32; 1 << RADIX_BITS];
        for &v in values {
            hist[(magnitude_key(v) >> shift) as usize] += 1;
        }
        let mut bucket = hist.len() - 1;
        while above + (hist[bucket] as usize) < k {
            above += hist[bucket] as usize;
            bucket -= 1;
        }
        keys.extend(
            values
                .iter()
                .map(|&v| magnitude_key(v))
                .filter(|&key| (key >> shift) as usize == bucket),
        );
    } else {
        keys.extend(values.iter().map(|&v| magnitude_key(v)));
    }
    let need = k - above;
    let n = keys.len();
    let (_, &mut threshold, upper) = keys.select_nth_unstable(n - need);
    above += upper.iter().filter(|&&key| key > threshold).count();
    (threshold, above)
}

fn check_selection(n: usize, k: usize) -> Result<()> {
    if k > n {
        return Err(Error::Argument(format!(
            "cannot select {k} winners out of {n} values"
        )));
    }
    if n > u32::MAX as usize {
        return Err(Error::Argument(format!("{n} values exceed the 32-bit index range")));
    }
    Ok(())
}

/// Indices of the `k` largest-magnitude values, ascending.
///
/// Ties go to the lower index. Runs in expected linear time: one
/// introselect pass finds the k-th magnitude, one scan collects everything
/// above it plus the lowest-index values equal to it.
pub fn partial_select_top_k(values: &[f32], k: usize) -> Result<Vec<usize>> {
    let mut keys = Vec::new();
    let mut out = Vec::new();
    partial_select_top_k_into(values, k, &mut keys, &mut out)?;
    Ok(out)
}

/// Allocation-reusing form of [`partial_select_top_k`].
pub fn partial_select_top_k_into(
    values: &[f32],
    k: usize,
    keys: &mut Vec<u32>,
    out: &mut Vec<usize>,
) -> Result<()> {
    let n = values.len();
    check_selection(n, k)?;
    out.clear();
    if k == 0 {
        return Ok(());
    }
    if k == n {
        out.extend(0..n);
        return Ok(());
    }
    let (threshold, above) = kth_magnitude(values, k, keys);
    let mut ties = k - above;
    out.extend(
        values
            .iter()
            .enumerate()
            .filter(|&(_, &v)| {
                let key = magnitude_key(v);
                if key > threshold {
                    true
                } else if key == threshold && ties > 0 {
                    ties -= 1;
                    true
                } else {
                    false
                }
            })
            .map(|(i, _)| i),
    );
    debug_assert_eq!(out.len(), k);
    Ok(())
}

/// Key comparisons an introselect pass makes choosing the top `k` of this
/// input; the unit of the ranking cost model.
pub fn selection_comparisons(values: &[f32], k: usize) -> Result<u64> {
    let n = values.len();
    check_selection(n, k)?;
    if k == 0 || k == n {
        return Ok(0);
    }
    let mut keys: Vec<u32> = values.iter().map(|&v| magnitude_key(v)).collect();
    let count = Cell::new(0u64);
    keys.select_nth_unstable_by(n - k, |a, b| {
        count.set(count.get() + 1);
        a.cmp(b)
    });
    Ok(count.get())
}

/// Minimal `k` whose top-k energies (descending, nonnegative) reach
/// `theta` of the total. With `theta >= 1` every nonzero energy is kept.
pub(crate) fn count_for_energy(desc_energies: &[f64], theta: f64) -> usize {
    let nonzero = desc_energies.iter().take_while(|&&e| e > 0.0).count();
    if theta >= 1.0 {
        return nonzero;
    }
    let total: f64 = desc_energies[..nonzero].iter().sum();
    let target = theta * total;
    let mut cumulative = 0.0;
    for (i, &e) in desc_energies[..nonzero].iter().enumerate() {
        cumulative += e;
        if cumulative >= target {
            return i + 1;
        }
    }
    nonzero
}

pub(crate) fn check_theta(theta: f64) -> Result<()> {
    if theta.is_nan() || theta <= 0.0 || theta > 1.0 {
        return Err(Error::Argument(format!(
            "energy threshold must lie in (0, 1], got {theta}"
        )));
    }
    Ok(())
}

/// Squared magnitudes sorted descending, accumulated in `f64`.
pub(crate) fn sorted_energies(values: &[f32]) -> Vec<f64> {
    let mut e: Vec<f64> = values.iter().map(|&v| (v as f64) * (v as f64)).collect();
    e.sort_unstable_by(|a, b| b.total_cmp(a));
    e
}

/// Smallest winner count whose cumulative squared-activation energy is at
/// least `theta` of the layer total.
pub fn winner_count_by_energy(values: &[f32], theta: f64) -> Result<usize> {
    check_theta(theta)?;
    let energies = sorted_energies(values);
    if energies.first().is_none_or(|&e| e <= 0.0) {
        return Err(Error::Degenerate(
            "all activations are zero; cumulative energy is undefined".into(),
        ));
    }
    Ok(count_for_energy(&energies, theta))
}

/// Per-channel reduction used to rank feature-map channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FvMode {
    #[default]
    Max,
    Mean,
}

impl fmt::Display for FvMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FvMode::Max => "max",
            FvMode::Mean => "mean",
        })
    }
}

impl FromStr for FvMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "max" => Ok(FvMode::Max),
            "mean" => Ok(FvMode::Mean),
            other => Err(Error::Argument(format!(
                "feature-vector mode must be max or mean, got {other:?}"
            ))),
        }
    }
}

/// One importance score per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub scores: Vec<f32>,
    pub mode: FvMode,
}

/// Per-channel scores of channel-last `data` with `channels` channels.
pub(crate) fn channel_scores_into(data: &[f32], channels: usize, mode: FvMode, out: &mut Vec<f32>) {
    out.clear();
    match mode {
        FvMode::Max => {
            out.resize(channels, f32::NEG_INFINITY);
            for pixel in data.chunks_exact(channels) {
                for (m, &v) in out.iter_mut().zip(pixel) {
                    if v > *m {
                        *m = v;
                    }
                }
            }
        }
        FvMode::Mean => {
            let mut sums = vec![0.0f64; channels];
            for pixel in data.chunks_exact(channels) {
                for (s, &v) in sums.iter_mut().zip(pixel) {
                    *s += v as f64;
                }
            }
            let pixels = (data.len() / channels) as f64;
            out.extend(sums.iter().map(|&s| (s / pixels) as f32));
        }
    }
}

pub fn feature_vector(fm: &FeatureMap, mode: FvMode) -> FeatureVector {
    let mut scores = Vec::with_capacity(fm.channels());
    channel_scores_into(fm.data(), fm.channels(), mode, &mut scores);
    FeatureVector { scores, mode }
}

/// Keeps the `ceil(p * N)` largest-magnitude activations of a rank-1 layer output.
pub fn make_fc_mask(layer_id: usize, activations: &Tensor, rate: f64) -> Result<WtaMask> {
    if activations.rank() != 1 {
        return Err(Error::Shape(format!(
            "fc activations must be rank 1, got shape {:?}",
            activations.shape()
        )));
    }
    fc_mask_from_slice(layer_id, activations.data(), rate)
}

pub(crate) fn fc_mask_from_slice(layer_id: usize, activations: &[f32], rate: f64) -> Result<WtaMask> {
    check_rate(rate)?;
    let k = winner_count(rate, activations.len());
    let winners = partial_select_top_k(activations, k)?;
    Ok(WtaMask {
        layer_id,
        winners,
        total: activations.len(),
    })
}

/// Two-step conv ranking: reduce each channel to a score, then keep the
/// `ceil(p * C)` best channels.
pub fn make_conv_mask(layer_id: usize, fm: &FeatureMap, rate: f64, mode: FvMode) -> Result<WtaMask> {
    conv_mask_from_slice(layer_id, fm.data(), fm.channels(), rate, mode)
}

pub(crate) fn conv_mask_from_slice(
    layer_id: usize,
    data: &[f32],
    channels: usize,
    rate: f64,
    mode: FvMode,
) -> Result<WtaMask> {
    check_rate(rate)?;
    let mut scores = Vec::with_capacity(channels);
    channel_scores_into(data, channels, mode, &mut scores);
    let k = winner_count(rate, channels);
    let winners = partial_select_top_k(&scores, k)?;
    Ok(WtaMask {
        layer_id,
        winners,
        total: channels,
    })
}

/// Zeroes every slice along `axis` whose index is not a winner.
pub fn apply_mask(t: &Tensor, mask: &WtaMask, axis: usize) -> Result<Tensor> {
    let mut out = t.clone();
    apply_mask_in_place(&mut out, mask, axis)?;
    Ok(out)
}

pub fn apply_mask_in_place(t: &mut Tensor, mask: &WtaMask, axis: usize) -> Result<()> {
    let shape = t.shape().to_vec();
    if axis >= shape.len() {
        return Err(Error::Shape(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    if shape[axis] != mask.total {
        return Err(Error::Shape(format!(
            "axis {axis} has size {} but the mask covers {}",
            shape[axis], mask.total
        )));
    }
    let inner: usize = shape[axis + 1..].iter().product();
    mask_slices(t.data_mut(), &mask.keep_flags(), inner);
    Ok(())
}

/// Zeroes the `inner`-length blocks of `data` whose position along the masked
/// axis has `keep == false`. `data` is viewed as `outer x keep.len() x inner`.
pub(crate) fn mask_slices(data: &mut [f32], keep: &[bool], inner: usize) {
    let n = keep.len();
    for outer in data.chunks_exact_mut(n * inner) {
        for (block, &k) in outer.chunks_exact_mut(inner).zip(keep) {
            if !k {
                block.fill(0.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Full stable sort by (|v| desc, index asc), truncated to k.
    fn sort_oracle(values: &[f32], k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..values.len()).collect();
        idx.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
        let mut top = idx[..k].to_vec();
        top.sort_unstable();
        top
    }

    /// Linear scan over every k of the cumulative energy ratio.
    fn energy_scan_oracle(values: &[f32], theta: f64) -> usize {
        let mut e: Vec<f64> = values.iter().map(|&v| (v as f64).powi(2)).collect();
        e.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let total: f64 = e.iter().sum();
        if theta >= 1.0 {
            return e.iter().filter(|&&x| x > 0.0).count();
        }
        (1..=e.len())
            .find(|&k| e[..k].iter().sum::<f64>() >= theta * total)
            .unwrap()
    }

    #[test]
    fn top_k_examples() {
        assert_eq!(partial_select_top_k(&[5.0, -7.0, 2.0, 0.0], 2).unwrap(), vec![0, 1]);
        assert!(partial_select_top_k(&[1.0, 2.0], 0).unwrap().is_empty());
        assert_eq!(partial_select_top_k(&[3.0, 1.0, 2.0], 3).unwrap(), vec![0, 1, 2]);
        assert!(partial_select_top_k(&[1.0], 2).is_err());
    }

    #[test]
    fn ties_prefer_lower_index() {
        assert_eq!(partial_select_top_k(&[1.0, 2.0, 2.0, -2.0], 2).unwrap(), vec![1, 2]);
        assert_eq!(partial_select_top_k(&[0.0, -0.0, 0.0], 1).unwrap(), vec![0]);
    }

    #[test]
    fn energy_count_examples() {
        // [2,1,1]: energies 4,1,1 of 6; 4/6 = 0.667 >= 0.66, then 5/6, 6/6.
        assert_eq!(winner_count_by_energy(&[2.0, 1.0, 1.0], 0.66).unwrap(), 1);
        assert_eq!(winner_count_by_energy(&[2.0, 1.0, 1.0], 0.95).unwrap(), 3);
        assert_eq!(winner_count_by_energy(&[3.0, 0.0, 4.0], 1.0).unwrap(), 2);
        assert!(matches!(
            winner_count_by_energy(&[0.0, 0.0], 0.5),
            Err(Error::Degenerate(_))
        ));
        assert!(winner_count_by_energy(&[1.0], 0.0).is_err());
        assert!(winner_count_by_energy(&[1.0], 1.5).is_err());
    }

    #[test]
    fn winner_count_rounds_up() {
        assert_eq!(winner_count(0.7, 64), 45);
        assert_eq!(winner_count(0.5, 1), 1);
        assert_eq!(winner_count(1e-6, 10), 1);
        assert_eq!(winner_count(1.0, 300), 300);
        for total in 1..500 {
            for k in 1..=total {
                assert_eq!(winner_count(k as f64 / total as f64, total), k);
            }
        }
    }

    #[test]
    fn fc_mask_examples() {
        let a = Tensor::from_vec(vec![0.9, 0.1, 0.5, 0.2]).unwrap();
        let m = make_fc_mask(3, &a, 0.5).unwrap();
        assert_eq!(m.winners(), &[0, 2]);
        assert_eq!(m.layer_id(), 3);
        assert_eq!(m.winner_rate(), 0.5);
        assert!(make_fc_mask(0, &a, 1.0).unwrap().is_full());
        let single = Tensor::from_vec(vec![0.3]).unwrap();
        assert_eq!(make_fc_mask(0, &single, 0.01).unwrap().winners(), &[0]);
        assert!(make_fc_mask(0, &a, 0.0).is_err());
        assert!(make_fc_mask(0, &a, 1.01).is_err());
    }

    fn sample_fm() -> FeatureMap {
        // channel 0 = [[1,2],[3,4]], channel 1 = [[0,0],[0,9]]
        FeatureMap::new(2, 2, 2, vec![1.0, 0.0, 2.0, 0.0, 3.0, 0.0, 4.0, 9.0]).unwrap()
    }

    #[test]
    fn feature_vector_examples() {
        let fm = sample_fm();
        assert_eq!(feature_vector(&fm, FvMode::Max).scores, vec![4.0, 9.0]);
        assert_eq!(feature_vector(&fm, FvMode::Mean).scores, vec![2.5, 2.25]);
        let zero = FeatureMap::zeros(3, 2, 4).unwrap();
        for mode in [FvMode::Max, FvMode::Mean] {
            assert_eq!(feature_vector(&zero, mode).scores, vec![0.0; 4]);
        }
    }

    #[test]
    fn conv_mask_examples() {
        let fm = sample_fm();
        assert_eq!(make_conv_mask(0, &fm, 0.5, FvMode::Max).unwrap().winners(), &[1]);
        assert_eq!(make_conv_mask(0, &fm, 1.0, FvMode::Max).unwrap().winners(), &[0, 1]);
        let wide = FeatureMap::new(1, 1, 64, (0..64).map(|i| i as f32).collect()).unwrap();
        assert_eq!(make_conv_mask(0, &wide, 0.7, FvMode::Max).unwrap().winner_count(), 45);
    }

    #[test]
    fn apply_mask_examples() {
        let t = Tensor::from_vec(vec![5.0, 7.0, 9.0]).unwrap();
        let m = WtaMask::from_indices(0, vec![2], 3).unwrap();
        assert_eq!(apply_mask(&t, &m, 0).unwrap().data(), &[0.0, 0.0, 9.0]);
        let full = WtaMask::full(0, 3);
        assert_eq!(apply_mask(&t, &full, 0).unwrap(), t);

        let fm = sample_fm();
        let ch1 = WtaMask::from_indices(0, vec![1], 2).unwrap();
        let masked = FeatureMap::from_tensor(apply_mask(fm.as_tensor(), &ch1, 2).unwrap()).unwrap();
        assert_eq!(masked.channel_slice(0).unwrap().data(), &[0.0; 4]);
        assert_eq!(masked.channel_slice(1).unwrap(), fm.channel_slice(1).unwrap());

        assert!(matches!(apply_mask(&t, &ch1, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn mask_constructor_validates() {
        assert!(WtaMask::from_indices(0, vec![], 3).is_err());
        assert!(WtaMask::from_indices(0, vec![1, 1], 3).is_err());
        assert!(WtaMask::from_indices(0, vec![2, 1], 3).is_err());
        assert!(WtaMask::from_indices(0, vec![3], 3).is_err());
    }

    #[test]
    fn expanded_channel_mask_covers_flattened_map() {
        let m = WtaMask::from_indices(0, vec![0, 2], 3).unwrap();
        let e = m.expand_over_pixels(2);
        assert_eq!(e.winners(), &[0, 2, 3, 5]);
        assert_eq!(e.total(), 6);
    }

    #[test]
    fn comparison_count_is_reported() {
        let v: Vec<f32> = (0..1000).map(|i| ((i * 7919) % 1000) as f32).collect();
        let c = selection_comparisons(&v, 100).unwrap();
        assert!(c >= 900, "selection must look at every element, got {c}");
        assert_eq!(selection_comparisons(&v, 0).unwrap(), 0);
    }

    proptest! {
        #[test]
        fn top_k_matches_sort_oracle(
            v in prop::collection::vec(prop_oneof![-100.0f32..100.0, Just(0.0f32), Just(1.5f32), Just(-1.5f32)], 1..400),
            frac in 0.0f64..=1.0,
        ) {
            let k = ((v.len() as f64) * frac) as usize;
            prop_assert_eq!(partial_select_top_k(&v, k).unwrap(), sort_oracle(&v, k));
        }

        #[test]
        fn energy_count_matches_scan_and_is_monotone(
            v in prop::collection::vec(prop_oneof![-10.0f32..10.0, Just(0.0f32)], 1..200),
            t1 in 0.01f64..=1.0,
            t2 in 0.01f64..=1.0,
        ) {
            prop_assume!(v.iter().any(|&x| x != 0.0));
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let k_lo = winner_count_by_energy(&v, lo).unwrap();
            let k_hi = winner_count_by_energy(&v, hi).unwrap();
            prop_assert_eq!(k_lo, energy_scan_oracle(&v, lo));
            prop_assert!(k_lo <= k_hi);
            let nonzero = v.iter().filter(|&&x| x != 0.0).count();
            prop_assert_eq!(winner_count_by_energy(&v, 1.0).unwrap(), nonzero);
        }

        #[test]
        fn masks_are_scale_invariant(
            v in prop::collection::vec(0.0f32..50.0, 1..300),
            c in prop_oneof![Just(2.0f32), Just(0.5f32), Just(4.0f32), Just(0.25f32)],
            p in 0.01f64..=1.0,
        ) {
            // Power-of-two scales are exact in binary floating point, so the
            // ranking keys keep their order.
            let a = Tensor::from_vec(v.clone()).unwrap();
            let b = Tensor::from_vec(v.iter().map(|x| x * c).collect()).unwrap();
            prop_assert_eq!(make_fc_mask(0, &a, p).unwrap(), make_fc_mask(0, &b, p).unwrap());
        }

        #[test]
        fn apply_mask_is_idempotent(v in prop::collection::vec(-5.0f32..5.0, 2..60), p in 0.05f64..=1.0) {
            let t = Tensor::from_vec(v).unwrap();
            let m = make_fc_mask(0, &t, p).unwrap();
            let once = apply_mask(&t, &m, 0).unwrap();
            prop_assert_eq!(apply_mask(&once, &m, 0).unwrap(), once.clone());
            for (i, (&a, &b)) in t.data().iter().zip(once.data()).enumerate() {
                if m.winners().binary_search(&i).is_ok() {
                    prop_assert_eq!(a.to_bits(), b.to_bits());
                } else {
                    prop_assert_eq!(b, 0.0);
                }
            }
        }

        #[test]
        fn conv_max_mask_agrees_with_brute_force_channel_ranking(
            h in 1usize..5, w in 1usize..5, c in 1usize..12,
            seed in any::<u32>(), p in 0.05f64..=1.0,
        ) {
            let data: Vec<f32> = (0..h * w * c)
                .map(|i| ((i as u32).wrapping_mul(2654435761).wrapping_add(seed) % 97) as f32)
                .collect();
            let fm = FeatureMap::new(h, w, c, data).unwrap();
            let maxima: Vec<f32> = (0..c)
                .map(|j| fm.channel_slice(j).unwrap().data().iter().cloned().fold(f32::MIN, f32::max))
                .collect();
            let k = winner_count(p, c);
            let mask = make_conv_mask(0, &fm, p, FvMode::Max).unwrap();
            prop_assert_eq!(mask.winners().to_vec(), sort_oracle(&maxima, k));
        }
    }
}
