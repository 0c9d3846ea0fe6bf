//! IDX image/label loading and deterministic minibatching.
//!
//! Files with a `.gz` extension are decompressed transparently. Pixels are
//! scaled from `0..=255` into `[0, 1]`; labels must lie in `0..=9`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Which split a dataset came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// A labeled image set: one flattened image per row, pixels in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct ImageDataset {
    pub images: Array2<f64>,
    pub labels: Vec<u8>,
    pub split: Split,
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut file = File::open(path).map_err(Error::io(path))?;
    let mut raw = Vec::new();
    if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(file).read_to_end(&mut raw).map_err(Error::io(path))?;
    } else {
        file.read_to_end(&mut raw).map_err(Error::io(path))?;
    }
    Ok(raw)
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::IdxPayloadSize {
            path: path.to_path_buf(),
            expected: end,
            found: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

fn parse_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let raw = read_maybe_gz(path)?;
    let magic = be_u32(&raw, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::IdxMagic {
            path: path.to_path_buf(),
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let n = be_u32(&raw, 4, path)? as usize;
    let rows = be_u32(&raw, 8, path)? as usize;
    let cols = be_u32(&raw, 12, path)? as usize;
    let expected = 16 + n * rows * cols;
    if raw.len() != expected {
        return Err(Error::IdxPayloadSize {
            path: path.to_path_buf(),
            expected,
            found: raw.len(),
        });
    }
    Ok((n, rows, cols, raw[16..].to_vec()))
}

fn parse_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let raw = read_maybe_gz(path)?;
    let magic = be_u32(&raw, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(Error::IdxMagic {
            path: path.to_path_buf(),
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let n = be_u32(&raw, 4, path)? as usize;
    let expected = 8 + n;
    if raw.len() != expected {
        return Err(Error::IdxPayloadSize {
            path: path.to_path_buf(),
            expected,
            found: raw.len(),
        });
    }
    Ok(raw[8..].to_vec())
}

impl ImageDataset {
    /// Loads an IDX image file and its matching label file.
    pub fn load_idx_pair(
        images_path: impl AsRef<Path>,
        labels_path: impl AsRef<Path>,
        split: Split,
    ) -> Result<Self> {
        let (n, rows, cols, pixels) = parse_idx_images(images_path.as_ref())?;
        let labels = parse_idx_labels(labels_path.as_ref())?;
        if labels.len() != n {
            return Err(Error::IdxCountMismatch {
                images: n,
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
            return Err(Error::LabelRange { value: bad });
        }
        let dim = rows * cols;
        let values: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
        let images = Array2::from_shape_vec((n, dim), values)
            .expect("length checked against header");
        Ok(ImageDataset { images, labels, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Flattened image dimension (784 for MNIST).
    pub fn dim(&self) -> usize {
        self.images.ncols()
    }

    /// A new dataset holding the listed rows, in the order given.
    pub fn subset(&self, indices: &[usize]) -> Self {
        ImageDataset {
            images: self.images.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            split: self.split,
        }
    }

    /// The first `n` rows of a seeded shuffle; the whole set if `n >= len`.
    pub fn seeded_subset(&self, n: usize, seed: u64) -> Self {
        if n >= self.len() {
            return self.clone();
        }
        let mut indices: Vec<usize> = (0..self.len()).collect();
        indices.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        indices.truncate(n);
        self.subset(&indices)
    }
}

/// Deterministic shuffled minibatches: one seeded permutation, consumed in
/// chunks of `batch_size` (the final batch may be smaller).
pub fn batches(dataset: &ImageDataset, batch_size: usize, seed: u64) -> Batches<'_> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Batches {
        dataset,
        order,
        batch_size,
        next: 0,
    }
}

/// Iterator over `(images, labels)` minibatches from [`batches`].
pub struct Batches<'a> {
    dataset: &'a ImageDataset,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

impl Iterator for Batches<'_> {
    type Item = (Array2<f64>, Vec<u8>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.order.len() {
            return None;
        }
        let end = (self.next + self.batch_size).min(self.order.len());
        let idx = &self.order[self.next..end];
        self.next = end;
        let images = self.dataset.images.select(Axis(0), idx);
        let labels = idx.iter().map(|&i| self.dataset.labels[i]).collect();
        Some((images, labels))
    }
}

/// Writes a plain (uncompressed) IDX image file.
pub fn write_idx_images(
    path: impl AsRef<Path>,
    pixels: &[u8],
    count: usize,
    rows: usize,
    cols: usize,
) -> Result<()> {
    let path = path.as_ref();
    if pixels.len() != count * rows * cols {
        return Err(Error::IdxPayloadSize {
            path: path.to_path_buf(),
            expected: count * rows * cols,
            found: pixels.len(),
        });
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(count as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    out.extend_from_slice(pixels);
    write_file(path, &out)
}

/// Writes a plain (uncompressed) IDX label file.
pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    write_file(path, &out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = File::create(path).map_err(Error::io(path))?;
    f.write_all(bytes).map_err(Error::io(path))?;
    Ok(())
}

/// Conventional MNIST file paths under `dir`, preferring `.gz` when present.
pub fn mnist_paths(dir: impl AsRef<Path>, split: Split) -> (PathBuf, PathBuf) {
    let dir = dir.as_ref();
    let (images, labels) = match split {
        Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    };
    let pick = |stem: &str| {
        let gz = dir.join(format!("{stem}.gz"));
        if gz.exists() {
            gz
        } else {
            dir.join(stem)
        }
    };
    (pick(images), pick(labels))
}

/// Loads the MNIST split stored under `dir` using the conventional filenames.
pub fn load_mnist(dir: impl AsRef<Path>, split: Split) -> Result<ImageDataset> {
    let (images, labels) = mnist_paths(dir, split);
    ImageDataset::load_idx_pair(images, labels, split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn synthetic(n: usize) -> (tempfile::TempDir, ImageDataset) {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..n * 4).map(|i| (i * 13 % 256) as u8).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let ip = dir.path().join("imgs");
        let lp = dir.path().join("labs");
        write_idx_images(&ip, &pixels, n, 2, 2).unwrap();
        write_idx_labels(&lp, &labels).unwrap();
        let ds = ImageDataset::load_idx_pair(&ip, &lp, Split::Train).unwrap();
        (dir, ds)
    }

    #[test]
    fn round_trip_preserves_pixels_and_labels() {
        let (_dir, ds) = synthetic(10);
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.labels[3], 3);
        // 13 * 5 = 65 -> pixel (1, 1) of image 1
        assert!((ds.images[(1, 1)] - 65.0 / 255.0).abs() < 1e-15);
        assert!(ds.images.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn bad_magic_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("imgs");
        write_idx_labels(&ip, &[1, 2, 3]).unwrap();
        let lp = dir.path().join("labs");
        write_idx_labels(&lp, &[1, 2, 3]).unwrap();
        assert!(matches!(
            ImageDataset::load_idx_pair(&ip, &lp, Split::Train),
            Err(Error::IdxMagic { .. })
        ));
    }

    #[test]
    fn count_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("imgs");
        let lp = dir.path().join("labs");
        write_idx_images(&ip, &[0; 8], 2, 2, 2).unwrap();
        write_idx_labels(&lp, &[0, 1, 2]).unwrap();
        assert!(matches!(
            ImageDataset::load_idx_pair(&ip, &lp, Split::Train),
            Err(Error::IdxCountMismatch { images: 2, labels: 3 })
        ));
    }

    #[test]
    fn truncated_payload_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("imgs");
        write_idx_images(&ip, &[0; 8], 2, 2, 2).unwrap();
        let mut bytes = std::fs::read(&ip).unwrap();
        bytes.pop();
        std::fs::write(&ip, &bytes).unwrap();
        let lp = dir.path().join("labs");
        write_idx_labels(&lp, &[0, 1]).unwrap();
        assert!(matches!(
            ImageDataset::load_idx_pair(&ip, &lp, Split::Train),
            Err(Error::IdxPayloadSize { .. })
        ));
    }

    #[test]
    fn label_out_of_range_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("imgs");
        let lp = dir.path().join("labs");
        write_idx_images(&ip, &[0; 4], 1, 2, 2).unwrap();
        write_idx_labels(&lp, &[10]).unwrap();
        assert!(matches!(
            ImageDataset::load_idx_pair(&ip, &lp, Split::Train),
            Err(Error::LabelRange { value: 10 })
        ));
    }

    #[test]
    fn missing_file_error_names_the_path() {
        let err = ImageDataset::load_idx_pair("/no/such/images", "/no/such/labels", Split::Test)
            .unwrap_err();
        assert!(err.to_string().contains("/no/such/images"));
    }

    #[test]
    fn batch_sizes_follow_the_remainder_rule() {
        let (_dir, ds) = synthetic(10);
        let sizes: Vec<usize> = batches(&ds, 4, 0).map(|(x, _)| x.nrows()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn batches_are_deterministic_and_cover_everything_once() {
        let (_dir, ds) = synthetic(23);
        let run = |seed: u64| -> Vec<Vec<u8>> {
            batches(&ds, 5, seed).map(|(_, y)| y).collect()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));

        let mut seen: HashMap<u64, usize> = HashMap::new();
        for (x, y) in batches(&ds, 5, 7) {
            for (row, &label) in x.axis_iter(Axis(0)).zip(&y) {
                let key = (row.sum() * 1e6).round() as u64 * 16 + label as u64;
                *seen.entry(key).or_default() += 1;
            }
        }
        let mut expected: HashMap<u64, usize> = HashMap::new();
        for i in 0..ds.len() {
            let key = (ds.images.row(i).sum() * 1e6).round() as u64 * 16 + ds.labels[i] as u64;
            *expected.entry(key).or_default() += 1;
        }
        assert_eq!(seen, expected);
    }

    #[test]
    fn seeded_subset_is_deterministic() {
        let (_dir, ds) = synthetic(20);
        let a = ds.seeded_subset(5, 3);
        let b = ds.seeded_subset(5, 3);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.len(), 5);
        assert_eq!(ds.seeded_subset(25, 3).len(), 20);
    }

    #[test]
    fn gz_and_plain_files_load_identically() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..16).collect();
        let ip = dir.path().join("imgs");
        let lp = dir.path().join("labs");
        write_idx_images(&ip, &pixels, 4, 2, 2).unwrap();
        write_idx_labels(&lp, &[0, 1, 2, 3]).unwrap();

        let gz = |src: &Path, dst: &Path| {
            let bytes = std::fs::read(src).unwrap();
            let f = File::create(dst).unwrap();
            let mut enc = flate2::write::GzEncoder::new(f, flate2::Compression::default());
            enc.write_all(&bytes).unwrap();
            enc.finish().unwrap();
        };
        let ipz = dir.path().join("imgs.gz");
        let lpz = dir.path().join("labs.gz");
        gz(&ip, &ipz);
        gz(&lp, &lpz);

        let plain = ImageDataset::load_idx_pair(&ip, &lp, Split::Test).unwrap();
        let zipped = ImageDataset::load_idx_pair(&ipz, &lpz, Split::Test).unwrap();
        assert_eq!(plain.images, zipped.images);
        assert_eq!(plain.labels, zipped.labels);
    }
}
