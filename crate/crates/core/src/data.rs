//! Datasets: IDX image files, CSV tables and seeded synthetic generators.

use std::f32::consts::TAU;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Affine map applied to raw values at load time: `(raw - offset) * scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub offset: f32,
    pub scale: f32,
}

impl Normalization {
    pub const IDENTITY: Normalization = Normalization {
        offset: 0.0,
        scale: 1.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Full,
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[N, ...sample_shape]`.
    features: Tensor,
    labels: Vec<usize>,
    classes: usize,
    pub split: Split,
    pub normalization: Normalization,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.ndim() < 2 {
            return Err(Error::shape(
                "dataset",
                format!("features need a batch axis, got {:?}", features.shape()),
            ));
        }
        if features.shape()[0] != labels.len() {
            return Err(Error::Format(format!(
                "{} feature rows but {} labels",
                features.shape()[0],
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(Self {
            features,
            labels,
            classes,
            split: Split::Full,
            normalization: Normalization::IDENTITY,
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

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let x = self.features.gather_rows(indices)?;
        let y = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((x, y))
    }

    pub fn subset(&self, indices: &[usize], split: Split) -> Result<Dataset> {
        let (features, labels) = self.batch(indices)?;
        Ok(Dataset {
            features,
            labels,
            classes: self.classes,
            split,
            normalization: self.normalization,
        })
    }

    /// First `take` samples (or all, if fewer).
    pub fn head(&self, take: usize) -> Result<Dataset> {
        let idx: Vec<usize> = (0..take.min(self.len())).collect();
        self.subset(&idx, self.split)
    }

    /// Seeded shuffle, then the first `train_fraction` goes to train.
    pub fn split(&self, train_fraction: f32, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(Error::InvalidArgument(format!(
                "train fraction {train_fraction} outside [0, 1]"
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = (self.len() as f32 * train_fraction).round() as usize;
        Ok((
            self.subset(&order[..cut], Split::Train)?,
            self.subset(&order[cut..], Split::Test)?,
        ))
    }
}

fn read_u32_be(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

/// Parses an IDX image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = read_u32_be(bytes, 0, "idx images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "idx images: bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let n = read_u32_be(bytes, 4, "idx images")? as usize;
    let rows = read_u32_be(bytes, 8, "idx images")? as usize;
    let cols = read_u32_be(bytes, 12, "idx images")? as usize;
    let need = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Format("idx images: dimensions overflow".into()))?;
    let payload = &bytes[16..];
    if payload.len() < need {
        return Err(Error::Format(format!(
            "idx images: truncated payload, {} of {need} bytes",
            payload.len()
        )));
    }
    if payload.len() > need {
        return Err(Error::Format(format!(
            "idx images: {} trailing bytes",
            payload.len() - need
        )));
    }
    Ok((n, rows, cols, payload))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = read_u32_be(bytes, 0, "idx labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "idx labels: bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let n = read_u32_be(bytes, 4, "idx labels")? as usize;
    let payload = &bytes[8..];
    if payload.len() != n {
        return Err(Error::Format(format!(
            "idx labels: header says {n}, payload has {}",
            payload.len()
        )));
    }
    Ok(payload)
}

/// Loads an IDX image/label pair as `[N, 1, rows, cols]` with pixels in [0, 1].
/// The class count is one more than the largest label.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let img_bytes = fs::read(images_path)?;
    let lbl_bytes = fs::read(labels_path)?;
    let (n, rows, cols, pixels) = parse_idx_images(&img_bytes)?;
    let labels = parse_idx_labels(&lbl_bytes)?;
    if labels.len() != n {
        return Err(Error::Format(format!(
            "count mismatch: {n} images, {} labels",
            labels.len()
        )));
    }
    let norm = Normalization {
        offset: 0.0,
        scale: 1.0 / 255.0,
    };
    let data = pixels.iter().map(|&p| (p as f32 - norm.offset) * norm.scale).collect();
    let features = Tensor::new(vec![n, 1, rows, cols], data)?;
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut ds = Dataset::new(features, labels, classes)?;
    ds.normalization = norm;
    Ok(ds)
}

/// Loads a numeric CSV where the last column is an integer class label.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Format(e.to_string()))?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        if rec.len() < 2 {
            return Err(Error::Format(format!(
                "row {row}: need at least one feature and a label"
            )));
        }
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(Error::Format(format!("row {row}: {} columns, expected {w}", rec.len())));
            }
            _ => {}
        }
        let (label, feats) = rec
            .iter()
            .collect::<Vec<_>>()
            .split_last()
            .map(|(l, f)| (*l, f.to_vec()))
            .unwrap();
        for f in feats {
            data.push(
                f.parse::<f32>()
                    .map_err(|e| Error::Format(format!("row {row}: {f:?}: {e}")))?,
            );
        }
        labels.push(
            label
                .parse::<usize>()
                .map_err(|e| Error::Format(format!("row {row}: label {label:?}: {e}")))?,
        );
    }
    let w = width.ok_or_else(|| Error::Format("csv has no rows".into()))? - 1;
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    Dataset::new(Tensor::new(vec![labels.len(), w], data)?, labels, classes)
}

/// Gaussian blobs in 2-D with centers spaced evenly on a circle of radius 5
/// and unit-half standard deviation. Sample `i` belongs to class `i % classes`.
pub fn synth_blobs(n: usize, classes: usize, seed: u64) -> Result<Dataset> {
    if classes == 0 || n < classes {
        return Err(Error::InvalidArgument(format!(
            "need n >= classes >= 1, got n={n}, classes={classes}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, 0.5).expect("valid std");
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let angle = TAU * c as f32 / classes as f32;
        data.push(5.0 * angle.cos() + noise.sample(&mut rng));
        data.push(5.0 * angle.sin() + noise.sample(&mut rng));
        labels.push(c);
    }
    Dataset::new(Tensor::new(vec![n, 2], data)?, labels, classes)
}

/// Two concentric noisy rings (radii 1 and 3); not linearly separable.
pub fn synth_two_rings(n: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need n >= 2, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, 0.2).expect("valid std");
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        let r = if c == 0 { 1.0 } else { 3.0 } + noise.sample(&mut rng);
        let angle = rng.gen_range(0.0..TAU);
        data.push(r * angle.cos());
        data.push(r * angle.sin());
        labels.push(c);
    }
    Dataset::new(Tensor::new(vec![n, 2], data)?, labels, 2)
}
