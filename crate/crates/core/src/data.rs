//! Datasets: IDX ingestion, a synthetic Gaussian fixture, Dirichlet non-IID
//! partitioning and label shuffling.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Feature rows in `[0, 1]` with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if n_classes == 0 {
            return Err(Error::Validation("class count must be positive".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::Validation(format!(
                "label {bad} outside [0, {n_classes})"
            )));
        }
        Ok(Self {
            features,
            labels,
            n_classes,
        })
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows selected by `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }

    /// Count of samples per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.n_classes];
        for &y in &self.labels {
            hist[y] += 1;
        }
        hist
    }

    /// Random `(train, test)` split with `test_fraction` of the rows held out.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::Config(format!(
                "test fraction must lie in [0, 1), got {test_fraction}"
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = (self.len() as f64 * test_fraction).round() as usize;
        let (test, train) = order.split_at(n_test);
        Ok((self.subset(train), self.subset(test)))
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path, format!("gzip stream is corrupt: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Parses an IDX header; returns the dimension list and the payload slice.
fn parse_idx<'a>(
    path: &Path,
    bytes: &'a [u8],
    magic: u32,
    n_dims: usize,
) -> Result<(Vec<usize>, &'a [u8])> {
    let header_len = 4 + 4 * n_dims;
    if bytes.len() < 4 {
        return Err(Error::format(path, "truncated header"));
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    let found = word(0);
    if found != magic {
        return Err(Error::format(
            path,
            format!("bad magic number {found:#010x}, expected {magic:#010x}"),
        ));
    }
    if bytes.len() < header_len {
        return Err(Error::format(path, "truncated header"));
    }
    let dims: Vec<usize> = (1..=n_dims).map(|i| word(i) as usize).collect();
    let expected: usize = dims.iter().product();
    let payload = &bytes[header_len..];
    if payload.len() < expected {
        return Err(Error::format(
            path,
            format!(
                "truncated payload: {} bytes, header promises {expected}",
                payload.len()
            ),
        ));
    }
    if payload.len() > expected {
        return Err(Error::format(
            path,
            format!("{} trailing bytes after payload", payload.len() - expected),
        ));
    }
    Ok((dims, payload))
}

/// Loads an IDX image/label pair (plain or gzip-compressed). Pixels are scaled by 1/255;
/// the class count is one past the largest label.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let image_bytes = read_maybe_gz(images_path)?;
    let label_bytes = read_maybe_gz(labels_path)?;
    let (image_dims, pixels) = parse_idx(images_path, &image_bytes, IDX_IMAGES_MAGIC, 3)?;
    let (label_dims, labels) = parse_idx(labels_path, &label_bytes, IDX_LABELS_MAGIC, 1)?;
    let (n_images, n_labels) = (image_dims[0], label_dims[0]);
    if n_images != n_labels {
        return Err(Error::format(
            labels_path,
            format!(
                "holds {n_labels} labels but {} holds {n_images} images",
                images_path.display()
            ),
        ));
    }
    if n_images == 0 {
        return Err(Error::format(images_path, "contains no samples"));
    }
    let n_features = image_dims[1] * image_dims[2];
    let features = Array2::from_shape_vec(
        (n_images, n_features),
        pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
    )
    .expect("payload length checked");
    let labels: Vec<usize> = labels.iter().map(|&y| usize::from(y)).collect();
    let n_classes = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(features, labels, n_classes)
}

/// Writes `dataset` as an IDX image/label pair; gzip-compressed when a path ends in `.gz`.
///
/// Rows must have `rows * cols` features; values are re-quantized to bytes.
pub fn write_idx(
    dataset: &Dataset,
    rows: usize,
    cols: usize,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    if rows * cols != dataset.n_features() {
        return Err(Error::Shape(format!(
            "{rows}x{cols} images need {} features, dataset has {}",
            rows * cols,
            dataset.n_features()
        )));
    }
    if dataset.n_classes() > 256 {
        return Err(Error::Validation("IDX labels are single bytes".into()));
    }
    let n = dataset.len() as u32;
    let mut images = Vec::with_capacity(16 + dataset.len() * rows * cols);
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [n, rows as u32, cols as u32] {
        images.extend_from_slice(&d.to_be_bytes());
    }
    images.extend(
        dataset
            .features()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    let mut labels = Vec::with_capacity(8 + dataset.len());
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&n.to_be_bytes());
    labels.extend(dataset.labels().iter().map(|&y| y as u8));
    write_bytes(images_path.as_ref(), &images)?;
    write_bytes(labels_path.as_ref(), &labels)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let payload = if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        bytes.to_vec()
    };
    fs::write(path, payload).map_err(|e| Error::io(path, e))
}

/// Gaussian class-conditional clusters in `[0, 1]^n_features`.
///
/// Class means are drawn uniformly from `[0.2, 0.8]^d`, samples add isotropic
/// noise with standard deviation 0.15 and are clipped to the unit cube.
/// Labels cycle through the classes so every class is represented.
pub fn make_synthetic(
    n_samples: usize,
    n_features: usize,
    n_classes: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_samples == 0 || n_features == 0 || n_classes == 0 {
        return Err(Error::Config(
            "synthetic dataset dimensions must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| {
            (0..n_features)
                .map(|_| rng.random_range(0.2..0.8))
                .collect()
        })
        .collect();
    let noise = Normal::new(0.0, 0.15).expect("valid std");
    let mut labels: Vec<usize> = (0..n_samples).map(|i| i % n_classes).collect();
    labels.shuffle(&mut rng);
    let mut features = Array2::zeros((n_samples, n_features));
    for (mut row, &y) in features.outer_iter_mut().zip(&labels) {
        for (v, &m) in row.iter_mut().zip(&means[y]) {
            *v = (m + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    Dataset::new(features, labels, n_classes)
}

/// Dirichlet non-IID split settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub n_clients: usize,
    pub alpha: f64,
    pub seed: u64,
    pub min_samples_per_client: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            n_clients: 10,
            alpha: 0.5,
            seed: 0,
            min_samples_per_client: 32,
        }
    }
}

/// Splits sample indices across clients, drawing each class's allocation from
/// `Dir(alpha, ..., alpha)`.
///
/// Clients left below `min_samples_per_client` are topped up by moving samples
/// from whichever client currently holds the most. The result is a set
/// partition of `0..ds.len()`, each list sorted ascending.
pub fn partition_dirichlet(ds: &Dataset, cfg: &PartitionConfig) -> Result<Vec<Vec<usize>>> {
    if cfg.n_clients < 2 {
        return Err(Error::Config(format!(
            "need at least 2 clients, got {}",
            cfg.n_clients
        )));
    }
    if !(cfg.alpha.is_finite() && cfg.alpha > 0.0) {
        return Err(Error::Config(format!(
            "Dirichlet concentration must be positive, got {}",
            cfg.alpha
        )));
    }
    if cfg.min_samples_per_client == 0 || ds.len() < cfg.n_clients * cfg.min_samples_per_client {
        return Err(Error::Config(format!(
            "{} samples cannot give {} clients at least {} each",
            ds.len(),
            cfg.n_clients,
            cfg.min_samples_per_client
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gamma = Gamma::new(cfg.alpha, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    let mut by_class = vec![Vec::new(); ds.n_classes()];
    for (i, &y) in ds.labels().iter().enumerate() {
        by_class[y].push(i);
    }

    let mut parts = vec![Vec::new(); cfg.n_clients];
    for mut members in by_class {
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let mut weights: Vec<f64> = (0..cfg.n_clients).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = weights.iter().sum();
        if total > 0.0 && total.is_finite() {
            weights.iter_mut().for_each(|w| *w /= total);
        } else {
            // Every gamma draw underflowed (tiny alpha): the mass goes to one client.
            weights.iter_mut().for_each(|w| *w = 0.0);
            weights[rng.random_range(0..cfg.n_clients)] = 1.0;
        }
        let n = members.len();
        let mut start = 0;
        let mut cumulative = 0.0;
        for (client, w) in weights.iter().enumerate() {
            cumulative += w;
            let end = if client + 1 == cfg.n_clients {
                n
            } else {
                ((cumulative * n as f64).round() as usize).clamp(start, n)
            };
            parts[client].extend_from_slice(&members[start..end]);
            start = end;
        }
    }

    while let Some(needy) =
        (0..cfg.n_clients).find(|&c| parts[c].len() < cfg.min_samples_per_client)
    {
        let donor = (0..cfg.n_clients)
            .max_by_key(|&c| (parts[c].len(), std::cmp::Reverse(c)))
            .expect("at least two clients");
        let moved = parts[donor]
            .pop()
            .expect("donor holds more than the minimum");
        parts[needy].push(moved);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

/// Mean total-variation distance between each part's class distribution and the
/// pooled one; 0 for perfectly IID splits.
pub fn heterogeneity(ds: &Dataset, parts: &[Vec<usize>]) -> f64 {
    let global = normalized(&ds.class_histogram());
    let per_part: f64 = parts
        .iter()
        .map(|p| {
            let mut hist = vec![0usize; ds.n_classes()];
            for &i in p {
                hist[ds.labels()[i]] += 1;
            }
            let local = normalized(&hist);
            0.5 * local
                .iter()
                .zip(&global)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
        })
        .sum();
    per_part / parts.len() as f64
}

fn normalized(hist: &[usize]) -> Vec<f64> {
    let total: usize = hist.iter().sum();
    hist.iter()
        .map(|&c| {
            if total == 0 {
                0.0
            } else {
                c as f64 / total as f64
            }
        })
        .collect()
}

/// Label-shuffle poisoning: labels are permuted uniformly at random, features untouched.
pub fn shuffle_labels(ds: &Dataset, seed: u64) -> Dataset {
    let mut labels = ds.labels.clone();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Dataset {
        features: ds.features.clone(),
        labels,
        n_classes: ds.n_classes,
    }
}
