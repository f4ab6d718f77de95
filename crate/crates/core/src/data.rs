//! MNIST/FMNIST (IDX) and CIFAR-10 (binary batch) ingestion, one-class splits,
//! normalization and resizing to the 32x32 network input.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use crate::model::IMAGE_SIZE;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD_LEN: usize = 1 + 3 * 32 * 32;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: bad IDX magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },
    #[error("{path}: truncated payload, expected {expected} bytes, found {found}")]
    Truncated { path: PathBuf, expected: usize, found: usize },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: {len} bytes is not a whole number of {CIFAR_RECORD_LEN}-byte records")]
    RecordSize { path: PathBuf, len: usize },
    #[error("label {label} at index {index} is outside 0..=9")]
    LabelOutOfRange { index: usize, label: u8 },
    #[error("class {0} does not occur in the training set")]
    ClassAbsent(u8),
    #[error("datasets have different image shapes: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize, usize), (usize, usize, usize)),
    #[error("{0}")]
    Invalid(String),
}

/// Decoded dataset: `len` images of `height x width x channels` bytes (HWC order).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawDataset {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl RawDataset {
    pub fn new(name: &str, (height, width, channels): (usize, usize, usize), pixels: Vec<u8>, labels: Vec<u8>) -> Result<Self, DataError> {
        let per = height * width * channels;
        if per == 0 || pixels.len() != per * labels.len() {
            return Err(DataError::CountMismatch { images: pixels.len() / per.max(1), labels: labels.len() });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l > 9) {
            return Err(DataError::LabelOutOfRange { index, label });
        }
        Ok(Self { name: name.to_string(), height, width, channels, pixels, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }
}

/// Reads a file, transparently inflating gzip content.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, DataError> {
    let io = |source| DataError::Io { path: path.to_path_buf(), source };
    let bytes = fs::read(path).map_err(io)?;
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(bytes.as_slice()).read_to_end(&mut out).map_err(io)?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Validates an IDX header and returns `(dims, payload)`.
fn parse_idx<'a>(path: &Path, bytes: &'a [u8], magic: u32) -> Result<(Vec<usize>, &'a [u8]), DataError> {
    let rank = (magic & 0xff) as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < 4 {
        return Err(DataError::Truncated { path: path.into(), expected: header, found: bytes.len() });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(DataError::BadMagic { path: path.into(), expected: magic, found });
    }
    if bytes.len() < header {
        return Err(DataError::Truncated { path: path.into(), expected: header, found: bytes.len() });
    }
    let dims: Vec<usize> = (0..rank).map(|i| be_u32(bytes, 4 + 4 * i) as usize).collect();
    let payload_len: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() < payload_len {
        return Err(DataError::Truncated { path: path.into(), expected: header + payload_len, found: bytes.len() });
    }
    Ok((dims, &payload[..payload_len]))
}

/// Loads an IDX image/label file pair (optionally gzip-compressed).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<RawDataset, DataError> {
    let image_bytes = read_maybe_gz(images_path)?;
    let label_bytes = read_maybe_gz(labels_path)?;
    let (dims, pixels) = parse_idx(images_path, &image_bytes, IDX_IMAGES_MAGIC)?;
    let (ldims, labels) = parse_idx(labels_path, &label_bytes, IDX_LABELS_MAGIC)?;
    if dims[0] != ldims[0] {
        return Err(DataError::CountMismatch { images: dims[0], labels: ldims[0] });
    }
    let name = images_path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    RawDataset::new(&name, (dims[1], dims[2], 1), pixels.to_vec(), labels.to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Partition {
    Train,
    Test,
}

/// Parses CIFAR-10 binary records (label byte, then R, G, B planes) into HWC images.
pub fn parse_cifar_records(path: &Path, bytes: &[u8], pixels: &mut Vec<u8>, labels: &mut Vec<u8>) -> Result<(), DataError> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD_LEN != 0 {
        return Err(DataError::RecordSize { path: path.into(), len: bytes.len() });
    }
    const PLANE: usize = 32 * 32;
    for record in bytes.chunks_exact(CIFAR_RECORD_LEN) {
        labels.push(record[0]);
        let planes = &record[1..];
        for i in 0..PLANE {
            pixels.extend_from_slice(&[planes[i], planes[PLANE + i], planes[2 * PLANE + i]]);
        }
    }
    Ok(())
}

/// Loads the five training batches or the test batch from a CIFAR-10 binary directory.
pub fn load_cifar10(dir: &Path, partition: Partition) -> Result<RawDataset, DataError> {
    let files: Vec<String> = match partition {
        Partition::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
        Partition::Test => vec!["test_batch.bin".to_string()],
    };
    let (mut pixels, mut labels) = (Vec::new(), Vec::new());
    for f in files {
        let path = dir.join(f);
        let bytes = fs::read(&path).map_err(|source| DataError::Io { path: path.clone(), source })?;
        parse_cifar_records(&path, &bytes, &mut pixels, &mut labels)?;
    }
    RawDataset::new("cifar10", (32, 32, 3), pixels, labels)
}

/// `v / 127.5 - 1`, mapping 0..=255 onto [-1, 1].
pub fn normalize(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

/// Bilinear resize of an HWC image to 32x32 with half-pixel centers.
///
/// Output pixel `o` samples source coordinate `s = (o + 0.5) * in / out - 0.5`,
/// clamped to `[0, in - 1]`, and blends `floor(s)` and `floor(s) + 1` with
/// weights `1 - frac(s)` and `frac(s)` along each axis.
pub fn resize_bilinear(image: &[f32], height: usize, width: usize, channels: usize) -> Vec<f32> {
    resize_bilinear_to(image, height, width, channels, IMAGE_SIZE, IMAGE_SIZE)
}

pub fn resize_bilinear_to(image: &[f32], height: usize, width: usize, channels: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    assert_eq!(image.len(), height * width * channels);
    assert!(height > 0 && width > 0);
    if (height, width) == (out_h, out_w) {
        return image.to_vec();
    }
    let taps = |out: usize, input: usize| -> Vec<(usize, usize, f32)> {
        let scale = input as f64 / out as f64;
        (0..out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(input - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let rows = taps(out_h, height);
    let cols = taps(out_w, width);
    let px = |r: usize, c: usize, ch: usize| image[(r * width + c) * channels + ch];
    let mut out = Vec::with_capacity(out_h * out_w * channels);
    for &(r0, r1, fr) in &rows {
        for &(c0, c1, fc) in &cols {
            for ch in 0..channels {
                let top = px(r0, c0, ch) * (1.0 - fc) + px(r0, c1, ch) * fc;
                let bottom = px(r1, c0, ch) * (1.0 - fc) + px(r1, c1, ch) * fc;
                out.push(top * (1.0 - fr) + bottom * fr);
            }
        }
    }
    out
}

/// Normalized 32x32 images stored NCHW.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    pub channels: usize,
    data: Vec<f32>,
}

impl ImageSet {
    pub fn image_len(&self) -> usize {
        self.channels * IMAGE_SIZE * IMAGE_SIZE
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.image_len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.data[i * n..(i + 1) * n]
    }

    /// Gathers the given images into a `[batch, C, 32, 32]` tensor.
    pub fn batch(&self, indices: &[usize]) -> ImageBatch {
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        ImageBatch(Tensor::from_vec(&[indices.len(), self.channels, IMAGE_SIZE, IMAGE_SIZE], data).expect("batch shape"))
    }

    pub fn truncate(&mut self, n: usize) {
        let len = n.min(self.len()) * self.image_len();
        self.data.truncate(len);
    }

    /// Normalizes, resizes and transposes the selected raw images.
    pub fn from_raw(raw: &RawDataset, indices: &[usize]) -> Self {
        let (h, w, c) = raw.shape();
        let mut data = Vec::with_capacity(indices.len() * c * IMAGE_SIZE * IMAGE_SIZE);
        for &i in indices {
            let normalized: Vec<f32> = raw.image(i).iter().map(|&v| normalize(v)).collect();
            let resized = resize_bilinear(&normalized, h, w, c);
            for ch in 0..c {
                data.extend(resized.iter().skip(ch).step_by(c));
            }
        }
        Self { channels: c, data }
    }
}

/// Network input batch: `[batch, channels, 32, 32]` with values in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch(pub Tensor<f32>);

impl ImageBatch {
    pub fn new(t: Tensor<f32>) -> Result<Self, DataError> {
        let s = t.shape();
        if s.len() != 4 || s[2] != IMAGE_SIZE || s[3] != IMAGE_SIZE {
            return Err(DataError::Invalid(format!("batch shape {s:?} is not [N, C, 32, 32]")));
        }
        if t.data().iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(DataError::Invalid("batch values outside [-1, 1]".into()));
        }
        Ok(Self(t))
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.0
    }
}

/// Normal-class training images plus the full test partition with binary labels
/// (0 = normal, 1 = novel).
#[derive(Clone, Debug, PartialEq)]
pub struct OneClassSplit {
    pub normal_class: u8,
    pub train: ImageSet,
    pub test: ImageSet,
    pub test_labels: Vec<u8>,
}

impl OneClassSplit {
    /// Keeps only the first `n` training images.
    pub fn with_train_limit(mut self, n: usize) -> Self {
        self.train.truncate(n);
        self
    }

    /// Keeps the first `n` test images. Fails if that drops one of the two labels.
    pub fn with_test_limit(mut self, n: usize) -> Result<Self, DataError> {
        self.test.truncate(n);
        self.test_labels.truncate(n);
        if !self.test_labels.contains(&0) || !self.test_labels.contains(&1) {
            return Err(DataError::Invalid(format!("first {n} test images do not contain both normal and novel samples")));
        }
        Ok(self)
    }
}

pub fn make_one_class_split(train: &RawDataset, test: &RawDataset, normal_class: u8) -> Result<OneClassSplit, DataError> {
    if train.shape() != test.shape() {
        return Err(DataError::ShapeMismatch(train.shape(), test.shape()));
    }
    let normal: Vec<usize> = (0..train.len()).filter(|&i| train.labels[i] == normal_class).collect();
    if normal.is_empty() {
        return Err(DataError::ClassAbsent(normal_class));
    }
    let test_labels: Vec<u8> = test.labels.iter().map(|&l| u8::from(l != normal_class)).collect();
    if test_labels.is_empty() {
        return Err(DataError::Invalid("test partition is empty".into()));
    }
    let all: Vec<usize> = (0..test.len()).collect();
    Ok(OneClassSplit {
        normal_class,
        train: ImageSet::from_raw(train, &normal),
        test: ImageSet::from_raw(test, &all),
        test_labels,
    })
}

/// Which of the three supported datasets a root directory holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Fmnist,
    Cifar10,
}

impl DatasetKind {
    pub fn channels(self) -> usize {
        match self {
            DatasetKind::Cifar10 => 3,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Fmnist => "fmnist",
            DatasetKind::Cifar10 => "cifar10",
        }
    }
}

/// First existing file among `name` and `name.gz`.
fn idx_file(root: &Path, name: &str) -> PathBuf {
    let plain = root.join(name);
    let gz = root.join(format!("{name}.gz"));
    if !plain.exists() && gz.exists() {
        gz
    } else {
        plain
    }
}

/// Loads the default train and test partitions of a dataset directory.
///
/// MNIST/FMNIST directories hold the four standard IDX files (plain or `.gz`);
/// CIFAR-10 directories hold the binary batches, possibly under `cifar-10-batches-bin/`.
pub fn load_partitions(kind: DatasetKind, root: &Path) -> Result<(RawDataset, RawDataset), DataError> {
    match kind {
        DatasetKind::Mnist | DatasetKind::Fmnist => {
            let train = load_idx(&idx_file(root, "train-images-idx3-ubyte"), &idx_file(root, "train-labels-idx1-ubyte"))?;
            let test = load_idx(&idx_file(root, "t10k-images-idx3-ubyte"), &idx_file(root, "t10k-labels-idx1-ubyte"))?;
            Ok((train, test))
        }
        DatasetKind::Cifar10 => {
            let nested = root.join("cifar-10-batches-bin");
            let dir = if nested.is_dir() { nested } else { root.to_path_buf() };
            Ok((load_cifar10(&dir, Partition::Train)?, load_cifar10(&dir, Partition::Test)?))
        }
    }
}
