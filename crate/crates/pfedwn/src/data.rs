//! Non-IID, unbalanced client datasets.
//!
//! Synthetic class-conditional Gaussian mixtures stand in for full-scale
//! image corpora at desk scale; label-skew Dirichlet partitioning spreads
//! them across clients, and IDX ingestion covers real handwritten-digit
//! files when available.

use std::io::Read;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::substream;

/// Radius of the circle on which synthetic class means are placed.
const CLASS_MEAN_RADIUS: f64 = 3.0;

/// A labeled feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// One row per sample.
    pub features: Array2<f64>,
    /// Class index per row, each in `[0, n_classes)`.
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows vs {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|l| **l >= n_classes) {
            return Err(Error::Parameter(format!("label {bad} outside [0, {n_classes})")));
        }
        Ok(Dataset { features, labels, n_classes })
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

    /// Rows at the given indices, in order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Array2::zeros((indices.len(), self.dim()));
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            features.row_mut(row).assign(&self.features.row(i));
            labels.push(self.labels[i]);
        }
        Dataset { features, labels, n_classes: self.n_classes }
    }

    /// Writes the dataset as CSV with header `f0..fd,label`.
    pub fn to_csv<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        let header: Vec<String> = (0..self.dim()).map(|j| format!("f{j}")).collect();
        writeln!(w, "{},label", header.join(","))?;
        for (row, label) in self.features.rows().into_iter().zip(&self.labels) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{},{}", cells.join(","), label)?;
        }
        Ok(())
    }
}

/// A client's train/test portion of the data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: u32,
    pub train: Dataset,
    pub test: Dataset,
}

/// Dirichlet label-skew partition specification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    pub n_clients: usize,
    /// Concentration of the per-class client proportions; small values give
    /// strong label skew.
    pub dirichlet_alpha: f64,
    pub seed: u64,
}

/// Synthetic class-conditional mixture: class `c` is an isotropic Gaussian
/// around a distinct mean (evenly spaced on a circle of radius 3 in the
/// first two feature dimensions, or along a line when `dim == 1`).
pub fn gen_synthetic(
    n_classes: usize,
    dim: usize,
    per_class_count: usize,
    cluster_spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if dim < 1 {
        return Err(Error::Parameter("feature dimension must be at least 1".into()));
    }
    if n_classes < 1 {
        return Err(Error::Parameter("n_classes must be at least 1".into()));
    }
    if cluster_spread < 0.0 {
        return Err(Error::Parameter("cluster_spread must be non-negative".into()));
    }
    let mut rng = substream(seed, "synthetic", 0);
    let n = n_classes * per_class_count;
    let mut features = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for c in 0..n_classes {
        let mean = class_mean(c, n_classes, dim);
        for i in 0..per_class_count {
            let row = c * per_class_count + i;
            for j in 0..dim {
                let noise: f64 = StandardNormal.sample(&mut rng);
                features[[row, j]] = mean[j] + cluster_spread * noise;
            }
            labels.push(c);
        }
    }
    Dataset::new(features, labels, n_classes)
}

/// Mean of synthetic class `c`.
pub fn class_mean(c: usize, n_classes: usize, dim: usize) -> Vec<f64> {
    let mut mean = vec![0.0; dim];
    if dim == 1 {
        let span = if n_classes > 1 { 2.0 * CLASS_MEAN_RADIUS / (n_classes as f64 - 1.0) } else { 0.0 };
        mean[0] = -CLASS_MEAN_RADIUS + span * c as f64;
    } else {
        let angle = 2.0 * std::f64::consts::PI * c as f64 / n_classes as f64;
        mean[0] = CLASS_MEAN_RADIUS * angle.cos();
        mean[1] = CLASS_MEAN_RADIUS * angle.sin();
    }
    mean
}

/// Partitions sample indices across clients with per-class Dirichlet
/// proportions. Every client is guaranteed at least one sample; draws that
/// leave a client empty are retried up to 100 times.
pub fn dirichlet_partition(dataset: &Dataset, spec: &PartitionSpec) -> Result<Vec<Vec<usize>>> {
    if dataset.is_empty() {
        return Err(Error::Parameter("cannot partition an empty dataset".into()));
    }
    if spec.n_clients == 0 {
        return Err(Error::Parameter("n_clients must be at least 1".into()));
    }
    if !(spec.dirichlet_alpha > 0.0) {
        return Err(Error::Parameter(format!(
            "dirichlet_alpha must be positive, got {}",
            spec.dirichlet_alpha
        )));
    }
    let mut rng = substream(spec.seed, "partition", 0);
    let by_class: Vec<Vec<usize>> = (0..dataset.n_classes)
        .map(|c| (0..dataset.len()).filter(|&i| dataset.labels[i] == c).collect())
        .collect();

    for _attempt in 0..100 {
        let assignment = draw_partition(&by_class, spec, &mut rng)?;
        if assignment.iter().all(|a| !a.is_empty()) {
            return Ok(assignment);
        }
    }
    Err(Error::Partition(format!(
        "could not give each of {} clients at least one sample after 100 draws",
        spec.n_clients
    )))
}

fn draw_partition<R: Rng>(
    by_class: &[Vec<usize>],
    spec: &PartitionSpec,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    let mut assignment: Vec<Vec<usize>> = vec![Vec::new(); spec.n_clients];
    if spec.n_clients == 1 {
        for idxs in by_class {
            assignment[0].extend_from_slice(idxs);
        }
        return Ok(assignment);
    }
    for idxs in by_class {
        if idxs.is_empty() {
            continue;
        }
        let mut shuffled = idxs.clone();
        shuffled.shuffle(rng);
        let proportions = sample_dirichlet(spec.dirichlet_alpha, spec.n_clients, rng)?;
        let counts = largest_remainder(&proportions, shuffled.len());
        let mut offset = 0;
        for (client, count) in counts.into_iter().enumerate() {
            assignment[client].extend_from_slice(&shuffled[offset..offset + count]);
            offset += count;
        }
    }
    for a in &mut assignment {
        a.sort_unstable();
    }
    Ok(assignment)
}

/// Symmetric Dirichlet draw via normalized Gamma variates. Tiny
/// concentrations can underflow every coordinate to zero; such draws are
/// rejected and retried.
fn sample_dirichlet<R: Rng>(alpha: f64, k: usize, rng: &mut R) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| Error::Parameter(format!("invalid Dirichlet concentration {alpha}: {e}")))?;
    for _ in 0..100 {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return Ok(draws.into_iter().map(|d| d / total).collect());
        }
    }
    Err(Error::Partition("Dirichlet sampling underflowed repeatedly".into()))
}

/// Rounds fractional allocations to integers that sum exactly to `total`,
/// assigning leftovers by largest fractional part (ties to lower index).
fn largest_remainder(proportions: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Random disjoint train/test split. The train side receives
/// `round(fraction * n)` samples, clamped so both sides are non-empty.
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = dataset.len();
    if n < 2 {
        return Err(Error::Split(format!("need at least 2 samples to split, got {n}")));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = substream(seed, "split", 0);
    indices.shuffle(&mut rng);
    let train_size = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let (train_idx, test_idx) = indices.split_at(train_size);
    let mut train_idx = train_idx.to_vec();
    let mut test_idx = test_idx.to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((dataset.subset(&train_idx), dataset.subset(&test_idx)))
}

/// Standardizes features to zero mean and unit variance using statistics
/// from the train split only; the same transform is applied to the others.
pub fn standardize(train: &mut Dataset, others: &mut [&mut Dataset]) {
    let n = train.len() as f64;
    if n == 0.0 {
        return;
    }
    let means = train.features.mean_axis(Axis(0)).expect("non-empty train");
    let mut stds = vec![0.0; train.dim()];
    for j in 0..train.dim() {
        let var = train.features.column(j).iter().map(|v| (v - means[j]).powi(2)).sum::<f64>() / n;
        stds[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let apply = |d: &mut Dataset| {
        for mut row in d.features.rows_mut() {
            for j in 0..row.len() {
                row[j] = (row[j] - means[j]) / stds[j];
            }
        }
    };
    apply(train);
    for d in others {
        apply(d);
    }
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Loads a big-endian IDX image/label file pair. Pixels are scaled to
/// `[0, 1]`; the class count is the largest label plus one.
pub fn load_idx<P: AsRef<Path>>(images_path: P, labels_path: P) -> Result<Dataset> {
    let images = std::fs::read(&images_path)?;
    let labels = std::fs::read(&labels_path)?;
    let image_file = images_path.as_ref().display().to_string();
    let label_file = labels_path.as_ref().display().to_string();

    let img_magic = read_be_u32(&images, 0, &image_file)?;
    if img_magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            file: image_file,
            reason: format!("bad magic {img_magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let n_images = read_be_u32(&images, 4, &image_file)? as usize;
    let rows = read_be_u32(&images, 8, &image_file)? as usize;
    let cols = read_be_u32(&images, 12, &image_file)? as usize;
    let pixel_count = n_images * rows * cols;
    if images.len() != 16 + pixel_count {
        return Err(Error::Format {
            file: image_file,
            reason: format!("expected {} pixel bytes, found {}", pixel_count, images.len() - 16),
        });
    }

    let lbl_magic = read_be_u32(&labels, 0, &label_file)?;
    if lbl_magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            file: label_file,
            reason: format!("bad magic {lbl_magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let n_labels = read_be_u32(&labels, 4, &label_file)? as usize;
    if labels.len() != 8 + n_labels {
        return Err(Error::Format {
            file: label_file,
            reason: format!("expected {} label bytes, found {}", n_labels, labels.len() - 8),
        });
    }
    if n_images != n_labels {
        return Err(Error::Format {
            file: image_file,
            reason: format!("{n_images} images but {n_labels} labels"),
        });
    }

    let dim = rows * cols;
    let mut features = Array2::zeros((n_images, dim));
    for i in 0..n_images {
        for j in 0..dim {
            features[[i, j]] = f64::from(images[16 + i * dim + j]) / 255.0;
        }
    }
    let label_values: Vec<usize> = labels[8..].iter().map(|b| *b as usize).collect();
    let n_classes = label_values.iter().max().map_or(1, |m| m + 1);
    Dataset::new(features, label_values, n_classes)
}

fn read_be_u32(bytes: &[u8], offset: usize, file: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Format { file: file.into(), reason: "truncated header".into() });
    }
    let mut buf = [0u8; 4];
    (&bytes[offset..end]).read_exact(&mut buf)?;
    Ok(u32::from_be_bytes(buf))
}
