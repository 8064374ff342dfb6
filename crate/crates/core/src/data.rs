//! Dataset ingestion: MNIST IDX files, CIFAR-10 binary batches and a seeded
//! synthetic fallback.
//!
//! Pixels are stored channel-last and scaled by 1/255, nothing else.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

pub const DATA_DIR_ENV: &str = "DASNET_DATA_DIR";

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_IMAGES_MAGIC_4D: u32 = 0x0000_0804;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;
const VALIDATION_SIZE: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Labelled images, normalized to [0, 1], with disjoint train/validation/test index lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<u8>,
    classes: usize,
    splits: Splits,
    source: String,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<u8>, classes: usize, splits: Splits, source: String) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::Shape(format!(
                "image batch must be (N, H, W, C), got {:?}",
                images.shape()
            )));
        }
        let n = images.shape()[0];
        if labels.len() != n {
            return Err(Error::Shape(format!("{n} images but {} labels", labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::Argument(format!("label {bad} outside {classes} classes")));
        }
        let mut seen = vec![false; n];
        for &i in splits.train.iter().chain(&splits.validation).chain(&splits.test) {
            if i >= n {
                return Err(Error::Index { index: i, len: n });
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Argument(format!("sample {i} appears in more than one split")));
            }
        }
        Ok(Self {
            images,
            labels,
            classes,
            splits,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// `[H, W, C]` of one image.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn image_len(&self) -> usize {
        self.image_shape().iter().product()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let len = self.image_len();
        &self.images.data()[i * len..(i + 1) * len]
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.splits.train,
            Split::Validation => &self.splits.validation,
            Split::Test => &self.splits.test,
        }
    }

    /// Same data with all samples in the training split.
    fn all_train(mut self) -> Self {
        self.splits = Splits {
            train: (0..self.len()).collect(),
            ..Splits::default()
        };
        self
    }

    /// Concatenates a training and a test set. The last 5000 training
    /// samples (a tenth when the set is small) become the validation split.
    pub fn from_train_test(train: Dataset, test: Dataset) -> Result<Self> {
        if train.image_shape() != test.image_shape() || train.classes != test.classes {
            return Err(Error::Shape("train and test sets differ in image shape or classes".into()));
        }
        let n_train = train.len();
        let n_test = test.len();
        let n_val = if n_train >= 2 * VALIDATION_SIZE {
            VALIDATION_SIZE
        } else {
            n_train / 10
        };
        let [h, w, c] = train.image_shape();
        let mut data = train.images.into_data();
        data.extend_from_slice(test.images.data());
        let mut labels = train.labels;
        labels.extend_from_slice(&test.labels);
        let splits = Splits {
            train: (0..n_train - n_val).collect(),
            validation: (n_train - n_val..n_train).collect(),
            test: (n_train..n_train + n_test).collect(),
        };
        Dataset::new(
            Tensor::new(vec![n_train + n_test, h, w, c], data)?,
            labels,
            train.classes,
            splits,
            format!("{}+{}", train.source, test.source),
        )
    }

    /// Central `size x size` crop of every image; splits are kept.
    pub fn center_crop(&self, size: usize) -> Result<Self> {
        let [h, w, c] = self.image_shape();
        if size > h || size > w {
            return Err(Error::Argument(format!("cannot crop {h}x{w} images to {size}x{size}")));
        }
        let (top, left) = ((h - size) / 2, (w - size) / 2);
        let mut data = Vec::with_capacity(self.len() * size * size * c);
        for i in 0..self.len() {
            let img = self.image(i);
            for y in top..top + size {
                data.extend_from_slice(&img[(y * w + left) * c..(y * w + left + size) * c]);
            }
        }
        Dataset::new(
            Tensor::new(vec![self.len(), size, size, c], data)?,
            self.labels.clone(),
            self.classes,
            self.splits.clone(),
            format!("{} (center {size}x{size})", self.source),
        )
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            Error::format(
                path,
                bytes.len() as u64,
                format!("header truncated: expected at least {} bytes, found {}", offset + 4, bytes.len()),
            )
        })
}

fn scale_pixels(bytes: &[u8]) -> Vec<f32> {
    bytes.iter().map(|&b| b as f32 / 255.0).collect()
}

/// Parses an IDX image file and its IDX label file.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img = read_file(images_path)?;
    let magic = be_u32(&img, 0, images_path)?;
    let dims = match magic {
        IDX_IMAGES_MAGIC => 3,
        IDX_IMAGES_MAGIC_4D => 4,
        other => {
            return Err(Error::format(
                images_path,
                0,
                format!("bad magic 0x{other:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"),
            ))
        }
    };
    let n = be_u32(&img, 4, images_path)? as usize;
    let h = be_u32(&img, 8, images_path)? as usize;
    let w = be_u32(&img, 12, images_path)? as usize;
    let c = if dims == 4 { be_u32(&img, 16, images_path)? as usize } else { 1 };
    let header = 4 + 4 * dims;
    let expected = n * h * w * c;
    let payload = &img[header..];
    if payload.len() != expected {
        return Err(Error::format(
            images_path,
            img.len() as u64,
            format!(
                "expected {expected} bytes of pixel data for {n} images of {h}x{w}x{c}, found {}",
                payload.len()
            ),
        ));
    }

    let lab = read_file(labels_path)?;
    let magic = be_u32(&lab, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            labels_path,
            0,
            format!("bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"),
        ));
    }
    let n_labels = be_u32(&lab, 4, labels_path)? as usize;
    let labels = lab[8..].to_vec();
    if labels.len() != n_labels {
        return Err(Error::format(
            labels_path,
            lab.len() as u64,
            format!("expected {n_labels} label bytes, found {}", labels.len()),
        ));
    }
    if n_labels != n {
        return Err(Error::format(
            labels_path,
            4,
            format!("{n_labels} labels for {n} images"),
        ));
    }
    if let Some(pos) = labels.iter().position(|&l| l >= 10) {
        return Err(Error::format(
            labels_path,
            (8 + pos) as u64,
            format!("label {} is not a digit class", labels[pos]),
        ));
    }
    Dataset::new(
        Tensor::new(vec![n, h, w, c], scale_pixels(payload))?,
        labels,
        10,
        Splits::default(),
        images_path.display().to_string(),
    )
    .map(Dataset::all_train)
}

/// Writes a dataset as an IDX image/label pair (pixels requantized to bytes).
pub fn save_idx(dataset: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let [h, w, c] = dataset.image_shape();
    let mut img = Vec::with_capacity(20 + dataset.images.len());
    if c == 1 {
        img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    } else {
        img.extend_from_slice(&IDX_IMAGES_MAGIC_4D.to_be_bytes());
    }
    img.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    img.extend_from_slice(&(h as u32).to_be_bytes());
    img.extend_from_slice(&(w as u32).to_be_bytes());
    if c != 1 {
        img.extend_from_slice(&(c as u32).to_be_bytes());
    }
    img.extend(dataset.images.data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;

    let mut lab = Vec::with_capacity(8 + dataset.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    lab.extend_from_slice(&dataset.labels);
    fs::write(labels_path, lab).map_err(|e| Error::io(labels_path, e))
}

/// Parses CIFAR-10 binary batches: 3073-byte records of one label byte
/// followed by channel-planar 32x32 RGB, reordered to channel-last.
pub fn load_cifar10(batch_paths: &[PathBuf]) -> Result<Dataset> {
    if batch_paths.is_empty() {
        return Err(Error::Argument("no CIFAR-10 batch files given".into()));
    }
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in batch_paths {
        let bytes = read_file(path)?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::format(
                path,
                (bytes.len() - bytes.len() % CIFAR_RECORD) as u64,
                format!("size {} is not a multiple of the {CIFAR_RECORD}-byte record", bytes.len()),
            ));
        }
        for (r, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
            if rec[0] >= 10 {
                return Err(Error::format(
                    path,
                    (r * CIFAR_RECORD) as u64,
                    format!("label {} outside 10 classes", rec[0]),
                ));
            }
            labels.push(rec[0]);
            let planes = &rec[1..];
            for p in 0..1024 {
                for ch in 0..3 {
                    pixels.push(planes[ch * 1024 + p] as f32 / 255.0);
                }
            }
        }
    }
    let n = labels.len();
    Dataset::new(
        Tensor::new(vec![n, 32, 32, 3], pixels)?,
        labels,
        10,
        Splits::default(),
        batch_paths[0].display().to_string(),
    )
    .map(Dataset::all_train)
}

/// Deterministic class-conditional Gaussian blobs, quantized to bytes so the
/// set survives an IDX round trip unchanged. Labels cycle through the
/// classes; a seeded permutation assigns 80/10/10 train/validation/test.
pub fn synthetic_dataset(seed: u64, n: usize, shape: [usize; 3], classes: usize) -> Result<Dataset> {
    if classes == 0 || classes > 256 || n < classes {
        return Err(Error::Argument(format!(
            "need 1..=256 classes and at least one sample per class, got n={n}, classes={classes}"
        )));
    }
    let dim: usize = shape.iter().product();
    let mut rng = stream_rng(seed, Stream::Synthetic);
    let means: Vec<Vec<f32>> = (0..classes)
        .map(|_| (0..dim).map(|_| rng.random_range(0.15f32..0.85)).collect())
        .collect();
    let noise = Normal::new(0.0f32, 0.1).expect("valid normal");
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        labels.push(class as u8);
        for &mu in &means[class] {
            let v = (mu + noise.sample(&mut rng)).clamp(0.0, 1.0);
            data.push((v * 255.0).round() / 255.0);
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_hold = n / 10;
    let test = order[n - n_hold..].to_vec();
    let validation = order[n - 2 * n_hold..n - n_hold].to_vec();
    let mut train = order[..n - 2 * n_hold].to_vec();
    train.sort_unstable();
    Dataset::new(
        Tensor::new(vec![n, shape[0], shape[1], shape[2]], data)?,
        labels,
        classes,
        Splits {
            train,
            validation,
            test,
        },
        format!("synthetic(seed={seed}, n={n})"),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Mnist,
    Cifar10,
    Synthetic,
}

impl fmt::Display for DataKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataKind::Mnist => "mnist",
            DataKind::Cifar10 => "cifar10",
            DataKind::Synthetic => "synthetic",
        })
    }
}

impl FromStr for DataKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(DataKind::Mnist),
            "cifar10" | "cifar-10" => Ok(DataKind::Cifar10),
            "synthetic" => Ok(DataKind::Synthetic),
            other => Err(Error::Argument(format!(
                "data kind must be mnist, cifar10 or synthetic, got {other:?}"
            ))),
        }
    }
}

/// Dataset root: the explicit path if given, else `$DASNET_DATA_DIR`.
pub fn resolve_data_root(explicit: Option<&Path>) -> Result<PathBuf> {
    let root = match explicit {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).ok_or_else(|| {
            Error::State(format!("no dataset directory: pass --data or set {DATA_DIR_ENV}"))
        })?,
    };
    if !root.is_dir() {
        return Err(Error::State(format!(
            "dataset directory {} does not exist (set --data or {DATA_DIR_ENV})",
            root.display()
        )));
    }
    Ok(root)
}

fn first_existing(candidates: &[PathBuf], what: &str) -> Result<PathBuf> {
    candidates.iter().find(|p| p.is_file()).cloned().ok_or_else(|| {
        Error::State(format!(
            "{what} not found; looked for {} (check {DATA_DIR_ENV})",
            candidates.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
        ))
    })
}

/// MNIST from `root` or `root/mnist`, using the standard file names.
pub fn load_mnist_dir(root: &Path) -> Result<Dataset> {
    let find = |name: &str| {
        first_existing(&[root.join(name), root.join("mnist").join(name)], name)
    };
    let train = load_idx(&find("train-images-idx3-ubyte")?, &find("train-labels-idx1-ubyte")?)?;
    let test = load_idx(&find("t10k-images-idx3-ubyte")?, &find("t10k-labels-idx1-ubyte")?)?;
    Dataset::from_train_test(train, test)
}

/// CIFAR-10 from `root` or `root/cifar-10-batches-bin`.
pub fn load_cifar10_dir(root: &Path) -> Result<Dataset> {
    let find = |name: &str| {
        first_existing(
            &[root.join(name), root.join("cifar-10-batches-bin").join(name)],
            name,
        )
    };
    let batches = (1..=5)
        .map(|i| find(&format!("data_batch_{i}.bin")))
        .collect::<Result<Vec<_>>>()?;
    let train = load_cifar10(&batches)?;
    let test = load_cifar10(&[find("test_batch.bin")?])?;
    Dataset::from_train_test(train, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_idx_images(path: &Path, n: u32, h: u32, w: u32, payload: &[u8]) {
        let mut b = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
        for d in [n, h, w] {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b.extend_from_slice(payload);
        fs::write(path, b).unwrap();
    }

    fn write_idx_labels(path: &Path, labels: &[u8]) {
        let mut b = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        fs::write(path, b).unwrap();
    }

    #[test]
    fn idx_parses_and_scales() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        write_idx_images(&ip, 2, 2, 2, &[0, 255, 51, 102, 1, 2, 3, 4]);
        write_idx_labels(&lp, &[7, 3]);
        let d = load_idx(&ip, &lp).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.image_shape(), [2, 2, 1]);
        assert_eq!(d.image(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(d.label(1), 3);
        assert_eq!(d.indices(Split::Train).len(), 2);
    }

    #[test]
    fn idx_rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        write_idx_labels(&lp, &[0; 10]);
        // A label file where an image file is expected.
        let err = load_idx(&lp, &lp).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");

        write_idx_images(&ip, 10, 28, 28, &vec![0u8; 9 * 784]);
        let err = load_idx(&ip, &lp).unwrap_err().to_string();
        assert!(err.contains("expected 7840 bytes") && err.contains("found 7056"), "{err}");
    }

    #[test]
    fn cifar_records_are_reordered_channel_last() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        let mut rec = vec![6u8];
        rec.extend(std::iter::repeat_n(10u8, 1024));
        rec.extend(std::iter::repeat_n(20u8, 1024));
        rec.extend(std::iter::repeat_n(30u8, 1024));
        let mut bytes = rec.clone();
        bytes.extend_from_slice(&rec);
        bytes[CIFAR_RECORD] = 2;
        fs::write(&p, &bytes).unwrap();
        let d = load_cifar10(std::slice::from_ref(&p)).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.label(0), 6);
        assert_eq!(d.label(1), 2);
        assert_eq!(d.image_shape(), [32, 32, 3]);
        assert_eq!(&d.image(0)[..3], &[10.0 / 255.0, 20.0 / 255.0, 30.0 / 255.0]);

        bytes.push(0);
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_cifar10(&[p]), Err(Error::Format { .. })));
    }

    #[test]
    fn synthetic_is_deterministic_and_bounded() {
        let a = synthetic_dataset(3, 200, [4, 4, 1], 10).unwrap();
        let b = synthetic_dataset(3, 200, [4, 4, 1], 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synthetic_dataset(4, 200, [4, 4, 1], 10).unwrap());
        assert!(a.images().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let s = a.splits();
        assert_eq!(s.train.len() + s.validation.len() + s.test.len(), 200);

        let tiny = synthetic_dataset(1, 10, [2, 2, 1], 10).unwrap();
        let mut labels = tiny.labels().to_vec();
        labels.sort_unstable();
        assert_eq!(labels, (0..10).collect::<Vec<u8>>());
        assert!(synthetic_dataset(1, 9, [2, 2, 1], 10).is_err());
    }

    #[test]
    fn synthetic_round_trips_through_idx() {
        let dir = tempfile::tempdir().unwrap();
        let d = synthetic_dataset(11, 50, [5, 3, 1], 5).unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        save_idx(&d, &ip, &lp).unwrap();
        let back = load_idx(&ip, &lp).unwrap();
        assert_eq!(back.images(), d.images());
        assert_eq!(back.labels(), d.labels());
        let (ip2, lp2) = (dir.path().join("i2"), dir.path().join("l2"));
        save_idx(&back, &ip2, &lp2).unwrap();
        assert_eq!(fs::read(&ip).unwrap(), fs::read(&ip2).unwrap());
        assert_eq!(fs::read(&lp).unwrap(), fs::read(&lp2).unwrap());
    }

    #[test]
    fn train_test_concatenation_reserves_validation() {
        let train = synthetic_dataset(1, 100, [2, 2, 1], 10).unwrap();
        let test = synthetic_dataset(2, 20, [2, 2, 1], 10).unwrap();
        let d = Dataset::from_train_test(train, test).unwrap();
        assert_eq!(d.indices(Split::Validation), &(90..100).collect::<Vec<_>>()[..]);
        assert_eq!(d.indices(Split::Test).len(), 20);
    }

    #[test]
    fn center_crop_takes_the_middle() {
        let d = synthetic_dataset(1, 10, [4, 4, 2], 10).unwrap();
        let c = d.center_crop(2).unwrap();
        assert_eq!(c.image_shape(), [2, 2, 2]);
        let src = d.image(0);
        assert_eq!(&c.image(0)[..4], &src[(4 + 1) * 2..(4 + 3) * 2]);
    }

    #[test]
    fn missing_root_names_the_env_var() {
        let err = resolve_data_root(Some(Path::new("/definitely/not/here"))).unwrap_err();
        assert!(err.to_string().contains(DATA_DIR_ENV));
    }
}
