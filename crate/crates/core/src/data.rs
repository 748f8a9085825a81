//! Datasets: IDX ingestion, a synthetic Gaussian-blob generator and the
//! train/validation/test split.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Row-per-example features in `[0, 1]` with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Array2<f32>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(features: Array2<f32>, labels: Vec<usize>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::format(
                "labels",
                format!("{} labels for {} examples", labels.len(), features.nrows()),
            ));
        }
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    pub fn view(&self) -> ArrayView2<'_, f32> {
        self.features.view()
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    file: &'a str,
}

impl Reader<'_> {
    fn u32(&mut self, field: &str) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::format(format!("{}: {field}", self.file), "truncated header"))?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
    }

    fn rest(&self, expected: usize) -> Result<&[u8]> {
        let rest = &self.bytes[self.pos..];
        if rest.len() < expected {
            return Err(Error::format(
                format!("{}: payload", self.file),
                format!("truncated payload: expected {expected} bytes, found {}", rest.len()),
            ));
        }
        Ok(&rest[..expected])
    }
}

/// Parses an IDX image/label pair (big-endian, magic `0x803` / `0x801`).
/// Pixels are scaled by `1/255`.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let mut img = Reader {
        bytes: images,
        pos: 0,
        file: "images",
    };
    let magic = img.u32("magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            "images: magic",
            format!("expected 0x00000803, found {magic:#010x}"),
        ));
    }
    let n = img.u32("count")? as usize;
    let rows = img.u32("rows")? as usize;
    let cols = img.u32("cols")? as usize;
    let dim = rows * cols;
    let pixels = img.rest(n * dim)?;

    let mut lab = Reader {
        bytes: labels,
        pos: 0,
        file: "labels",
    };
    let magic = lab.u32("magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            "labels: magic",
            format!("expected 0x00000801, found {magic:#010x}"),
        ));
    }
    let n_labels = lab.u32("count")? as usize;
    if n_labels != n {
        return Err(Error::format(
            "labels: count",
            format!("count mismatch: {n} images but {n_labels} labels"),
        ));
    }
    let label_bytes = lab.rest(n)?;

    let features =
        Array2::from_shape_vec((n, dim), pixels.iter().map(|&p| p as f32 / 255.0).collect()).expect("shape checked");
    Dataset::new(features, label_bytes.iter().map(|&l| l as usize).collect())
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    parse_idx(&images, &labels)
}

/// Serializes `u8` images `[n, rows, cols]` and labels as an IDX pair.
pub fn encode_idx(pixels: &[u8], labels: &[u8], rows: usize, cols: usize) -> (Vec<u8>, Vec<u8>) {
    let n = labels.len();
    assert_eq!(pixels.len(), n * rows * cols, "pixel buffer does not match shape");
    let mut images = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    images.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + n);
    for v in [IDX_LABELS_MAGIC, n as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(labels);
    (images, lab)
}

/// Gaussian-blob classification problem: every class owns `clusters`
/// centres drawn from `N(0, spread^2)`; examples add unit-variance noise.
/// Features are squashed into `[0, 1]` and quantized to bytes so that the
/// IDX export and the in-memory set are identical.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub n: usize,
    pub side: usize,
    pub clusters: usize,
    pub spread: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            n: 3000,
            side: 6,
            clusters: 3,
            spread: 1.0,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn dim(&self) -> usize {
        self.side * self.side
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > 256 || self.n == 0 || self.side == 0 || self.clusters == 0 {
            return Err(Error::InvalidArgs(format!(
                "invalid synthetic dataset parameters {self:?}"
            )));
        }
        if !(self.spread > 0.0) {
            return Err(Error::InvalidArgs("synthetic spread must be > 0".into()));
        }
        Ok(())
    }

    /// Raw bytes: `(pixels, labels)`, row-major `[n, side, side]`.
    pub fn generate_bytes(&self) -> Result<(Vec<u8>, Vec<u8>)> {
        self.validate()?;
        let dim = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let centre = Normal::new(0.0, self.spread).expect("spread > 0");
        let noise = Normal::new(0.0, 1.0).expect("unit noise");
        let centres: Vec<Vec<f64>> = (0..self.classes * self.clusters)
            .map(|_| (0..dim).map(|_| centre.sample(&mut rng)).collect())
            .collect();
        let mut pixels = Vec::with_capacity(self.n * dim);
        let mut labels = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let class = i % self.classes;
            let cluster = (i / self.classes) % self.clusters;
            let c = &centres[class * self.clusters + cluster];
            for &mu in c {
                let v = mu + noise.sample(&mut rng);
                // 4 standard units either side of zero map onto the byte range
                let scaled = ((v + 4.0) / 8.0).clamp(0.0, 1.0);
                pixels.push((scaled * 255.0).round() as u8);
            }
            labels.push(class as u8);
        }
        Ok((pixels, labels))
    }

    pub fn generate(&self) -> Result<Dataset> {
        let (pixels, labels) = self.generate_bytes()?;
        let features = Array2::from_shape_vec((self.n, self.dim()), pixels.iter().map(|&p| p as f32 / 255.0).collect())
            .expect("shape");
        let mut ds = Dataset::new(features, labels.iter().map(|&l| l as usize).collect())?;
        ds.classes = self.classes;
        Ok(ds)
    }

    pub fn to_idx(&self) -> Result<(Vec<u8>, Vec<u8>)> {
        let (pixels, labels) = self.generate_bytes()?;
        Ok(encode_idx(&pixels, &labels, self.side, self.side))
    }
}

/// Disjoint index partition of a shuffled dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// 60/20/20 split with floor rounding for validation and test; the
/// remainder goes to training.
pub fn split_indices(n: usize, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val_len = n / 5;
    let test_len = n / 5;
    let test = idx.split_off(n - test_len);
    let val = idx.split_off(n - test_len - val_len);
    Split { train: idx, val, test }
}

#[derive(Clone, Debug)]
pub struct SplitDataset {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub fn split_dataset(data: &Dataset, seed: u64) -> SplitDataset {
    let split = split_indices(data.len(), seed);
    SplitDataset {
        train: data.select(&split.train),
        val: data.select(&split.val),
        test: data.select(&split.test),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_header_and_scaling() {
        let pixels: Vec<u8> = (0..2 * 2 * 3).map(|i| if i == 5 { 255 } else { i as u8 }).collect();
        let (images, labels) = encode_idx(&pixels, &[3, 1], 2, 3);
        assert_eq!(&images[..4], &[0, 0, 8, 3]);
        assert_eq!(&labels[..4], &[0, 0, 8, 1]);
        let ds = parse_idx(&images, &labels).unwrap();
        assert_eq!(ds.features.dim(), (2, 6));
        assert_eq!(ds.features[[0, 5]], 1.0);
        assert_eq!(ds.labels, vec![3, 1]);
    }

    #[test]
    fn idx_60000_images_of_28_by_28() {
        let n = 60_000;
        let pixels = vec![0u8; n * 784];
        let labels = vec![0u8; n];
        let (images, labels) = encode_idx(&pixels, &labels, 28, 28);
        assert_eq!(&images[4..16], &[0, 0, 0xEA, 0x60, 0, 0, 0, 28, 0, 0, 0, 28]);
        let ds = parse_idx(&images, &labels).unwrap();
        assert_eq!(ds.features.dim(), (60_000, 784));
    }

    #[test]
    fn idx_errors_name_the_field() {
        let (images, labels) = encode_idx(&[1, 2, 3, 4], &[0, 1], 1, 2);
        let (_, short_labels) = encode_idx(&[1, 2], &[0], 1, 2);

        let err = parse_idx(&images, &short_labels).unwrap_err().to_string();
        assert!(err.contains("count"), "{err}");

        let mut bad = images.clone();
        bad[3] = 0x04;
        let err = parse_idx(&bad, &labels).unwrap_err().to_string();
        assert!(err.contains("images: magic"), "{err}");

        let err = parse_idx(&images[..images.len() - 1], &labels).unwrap_err().to_string();
        assert!(err.contains("payload"), "{err}");

        let err = parse_idx(&images[..6], &labels).unwrap_err().to_string();
        assert!(err.contains("truncated header"), "{err}");

        let err = parse_idx(&images, &images).unwrap_err().to_string();
        assert!(err.contains("labels: magic"), "{err}");
    }

    #[test]
    fn split_proportions() {
        let s = split_indices(70_000, 1);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (42_000, 14_000, 14_000));
        let s = split_indices(10, 1);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 2));
        let s = split_indices(13, 4);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (9, 2, 2));
    }

    #[test]
    fn split_is_a_deterministic_partition() {
        let a = split_indices(1000, 42);
        assert_eq!(a, split_indices(1000, 42));
        assert_ne!(a, split_indices(1000, 43));
        let mut all: Vec<usize> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let spec = SyntheticSpec {
            classes: 4,
            n: 400,
            ..Default::default()
        };
        let a = spec.to_idx().unwrap();
        assert_eq!(a, spec.to_idx().unwrap());
        let ds = spec.generate().unwrap();
        assert_eq!(ds.classes, 4);
        assert_eq!(ds.dim(), 36);
        for c in 0..4 {
            assert_eq!(ds.labels.iter().filter(|&&l| l == c).count(), 100);
        }
        assert_eq!(parse_idx(&a.0, &a.1).unwrap(), ds);
    }
}
