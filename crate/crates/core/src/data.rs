//! Deterministic synthetic datasets, CSV I/O, stratified splits and seeded batching.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{CkdError, Result};
use crate::matrix::{LabelVector, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: LabelVector,
    class_count: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: LabelVector, class_count: usize) -> Result<Self> {
        if features.rows() == 0 {
            return Err(CkdError::invalid("dataset must contain at least one sample"));
        }
        if labels.len() != features.rows() {
            return Err(CkdError::ShapeMismatch {
                context: "Dataset::new",
                expected: format!("{} labels", features.rows()),
                actual: format!("{} labels", labels.len()),
            });
        }
        if let Some(&bad) = labels.as_slice().iter().find(|&&l| l >= class_count) {
            return Err(CkdError::invalid(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        if !features.is_finite() {
            return Err(CkdError::invalid("dataset features must be finite"));
        }
        Ok(Dataset {
            features,
            labels,
            class_count,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &LabelVector {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.features.select_rows(indices),
            self.labels.select(indices),
            self.class_count,
        )
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in self.labels.as_slice() {
            counts[l] += 1;
        }
        counts
    }
}

/// Train and test halves of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTest {
    pub train: Dataset,
    pub test: Dataset,
}

fn require_positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(CkdError::invalid(format!("{name} must be at least 1")));
    }
    Ok(())
}

/// Isotropic Gaussian clusters, one per class, `samples_per_class` points each.
///
/// Centers are drawn uniformly from `[-4, 4]^dim` with a minimum pairwise separation
/// (relaxed if the box gets crowded), so they are distinct and depend only on `seed`.
pub fn generate_blobs(
    class_count: usize,
    samples_per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    require_positive("class_count", class_count)?;
    require_positive("samples_per_class", samples_per_class)?;
    require_positive("dim", dim)?;
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(CkdError::invalid(format!("spread must be positive, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = blob_centers(&mut rng, class_count, dim, 4.0);
    let noise = Normal::new(0.0, spread).expect("spread validated above");

    let mut data = Vec::with_capacity(class_count * samples_per_class * dim);
    let mut labels = Vec::with_capacity(class_count * samples_per_class);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..samples_per_class {
            data.extend(center.iter().map(|c| c + noise.sample(&mut rng)));
            labels.push(class);
        }
    }
    Dataset::new(Matrix::from_vec(labels.len(), dim, data)?, labels.into(), class_count)
}

fn blob_centers(rng: &mut ChaCha8Rng, count: usize, dim: usize, half_width: f64) -> Vec<Vec<f64>> {
    let mut min_sep = 2.0;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut attempts = 0;
    while centers.len() < count {
        let c: Vec<f64> = (0..dim).map(|_| rng.random_range(-half_width..half_width)).collect();
        let ok = centers.iter().all(|o| {
            let d2: f64 = o.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
            d2.sqrt() >= min_sep
        });
        attempts += 1;
        if ok {
            centers.push(c);
        } else if attempts % 1000 == 0 {
            min_sep *= 0.8;
        }
    }
    centers
}

/// Interleaved 2-D spiral arms, one per class.
///
/// Arm `k` is `r = t`, `angle = 3 pi t + 2 pi k / class_count` for `t` evenly spaced
/// in `(0, 1]`, plus isotropic Gaussian noise of standard deviation `noise`.
pub fn generate_spirals(class_count: usize, samples_per_class: usize, noise: f64, seed: u64) -> Result<Dataset> {
    require_positive("class_count", class_count)?;
    require_positive("samples_per_class", samples_per_class)?;
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(CkdError::invalid(format!("noise must be non-negative, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(class_count * samples_per_class * 2);
    let mut labels = Vec::with_capacity(class_count * samples_per_class);
    for class in 0..class_count {
        let offset = 2.0 * PI * class as f64 / class_count as f64;
        for i in 0..samples_per_class {
            let t = (i + 1) as f64 / samples_per_class as f64;
            let angle = 3.0 * PI * t + offset;
            let (mut x, mut y) = (t * angle.cos(), t * angle.sin());
            if noise > 0.0 {
                x += noise * gaussian(&mut rng);
                y += noise * gaussian(&mut rng);
            }
            data.extend([x, y]);
            labels.push(class);
        }
    }
    Dataset::new(Matrix::from_vec(labels.len(), 2, data)?, labels.into(), class_count)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rand_distr::StandardNormal.sample(rng)
}

/// 2-D mixture where every class owns a Gaussian blob and a spiral arm.
///
/// Half of each class's samples come from the blob and half from the arm, so
/// classes are multimodal and not linearly separable. The blob half is placed on
/// a ring of radius 1.6 around the spiral, which has radius 1.
pub fn generate_blob_spiral_mix(
    class_count: usize,
    samples_per_class: usize,
    spread: f64,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    require_positive("class_count", class_count)?;
    require_positive("samples_per_class", samples_per_class)?;
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(CkdError::invalid(format!("spread must be positive, got {spread}")));
    }
    let arm_count = samples_per_class / 2;
    let blob_count = samples_per_class - arm_count;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // the ring order is a seeded permutation so blob and arm of a class are not aligned
    let mut ring: Vec<usize> = (0..class_count).collect();
    ring.shuffle(&mut rng);
    let blob_noise = Normal::new(0.0, spread).expect("spread validated above");

    let mut data = Vec::with_capacity(class_count * samples_per_class * 2);
    let mut labels = Vec::with_capacity(class_count * samples_per_class);
    for (class, &slot) in ring.iter().enumerate() {
        let offset = 2.0 * PI * class as f64 / class_count as f64;
        for i in 0..arm_count {
            let t = 0.15 + 0.85 * (i + 1) as f64 / arm_count as f64;
            let angle = 2.0 * PI * t + offset;
            let x = t * angle.cos() + noise * gaussian(&mut rng);
            let y = t * angle.sin() + noise * gaussian(&mut rng);
            data.extend([x, y]);
            labels.push(class);
        }
        let theta = 2.0 * PI * slot as f64 / class_count as f64;
        let (cx, cy) = (1.6 * theta.cos(), 1.6 * theta.sin());
        for _ in 0..blob_count {
            data.extend([cx + blob_noise.sample(&mut rng), cy + blob_noise.sample(&mut rng)]);
            labels.push(class);
        }
    }
    Dataset::new(Matrix::from_vec(labels.len(), 2, data)?, labels.into(), class_count)
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Writes `f0,...,f{D-1},label` with shortest round-trip float formatting.
pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    let header: Vec<String> = (0..dataset.dim()).map(|i| format!("f{i}")).collect();
    out.push_str(&header.join(","));
    out.push_str(",label\n");
    for (row, label) in dataset.features.row_iter().zip(dataset.labels.as_slice()) {
        for v in row {
            out.push_str(&format!("{v:?},"));
        }
        out.push_str(&format!("{label}\n"));
    }
    fs::write(path, out).map_err(|e| CkdError::io(path, e))
}

/// Reads a dataset written by [`save_csv`].
///
/// The class count is `declared_classes` when given (labels must stay below it),
/// otherwise one more than the largest label.
pub fn load_csv(path: impl AsRef<Path>, declared_classes: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(CkdError::MissingArtifact(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CkdError::format(path, "open", e.to_string()))?;

    let header = reader
        .headers()
        .map_err(|e| CkdError::format(path, "line 1", e.to_string()))?
        .clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(CkdError::format(path, "line 1", "no data rows"));
    }
    let dim = header.len() - 1;
    for (i, name) in header.iter().enumerate() {
        let want = if i == dim { "label".to_string() } else { format!("f{i}") };
        if name != want {
            return Err(CkdError::format(
                path,
                "line 1",
                format!("header column {} is `{name}`, expected `{want}`", i + 1),
            ));
        }
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = format!("line {}", i + 2);
        let record = record.map_err(|e| CkdError::format(path, &line, e.to_string()))?;
        if record.len() != dim + 1 {
            return Err(CkdError::format(
                path,
                &line,
                format!("expected {} cells, found {}", dim + 1, record.len()),
            ));
        }
        for (c, cell) in record.iter().take(dim).enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| CkdError::format(path, &line, format!("non-numeric cell `{cell}` in column f{c}")))?;
            if !v.is_finite() {
                return Err(CkdError::format(
                    path,
                    &line,
                    format!("non-finite value in column f{c}"),
                ));
            }
            data.push(v);
        }
        let cell = &record[dim];
        let label: usize = cell
            .trim()
            .parse()
            .map_err(|_| CkdError::format(path, &line, format!("invalid label `{cell}`")))?;
        if let Some(k) = declared_classes {
            if label >= k {
                return Err(CkdError::format(
                    path,
                    &line,
                    format!("label {label} not below declared class count {k}"),
                ));
            }
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(CkdError::format(path, "line 2", "no data rows"));
    }
    let class_count = declared_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    Dataset::new(Matrix::from_vec(labels.len(), dim, data)?, labels.into(), class_count)
}

// ---------------------------------------------------------------------------
// Splitting and batching
// ---------------------------------------------------------------------------

/// Stratified split. Each class contributes `round(count * train_fraction)` samples
/// to train; both halves keep the original sample order.
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<TrainTest> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CkdError::invalid(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.class_count];
    for (i, &l) in dataset.labels.as_slice().iter().enumerate() {
        by_class[l].push(i);
    }
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for mut members in by_class {
        members.shuffle(&mut rng);
        let take = (members.len() as f64 * train_fraction).round() as usize;
        train_idx.extend_from_slice(&members[..take]);
        test_idx.extend_from_slice(&members[take..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(CkdError::invalid("split leaves an empty train or test set"));
    }
    Ok(TrainTest {
        train: dataset.subset(&train_idx)?,
        test: dataset.subset(&test_idx)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub epoch: usize,
}

/// One mini-batch: the source row indices and their gathered data.
#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub features: Matrix,
    pub labels: LabelVector,
}

/// Sample order for one epoch; a pure function of `(shuffle_seed, epoch)`.
pub fn epoch_order(len: usize, plan: &BatchPlan) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.shuffle_seed);
    rng.set_stream(plan.epoch as u64);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

/// Shuffled mini-batches covering every sample exactly once; the last batch may be short.
pub fn iterate_batches(dataset: &Dataset, plan: &BatchPlan) -> Result<Vec<Batch>> {
    require_positive("batch_size", plan.batch_size)?;
    Ok(epoch_order(dataset.len(), plan)
        .chunks(plan.batch_size)
        .map(|idx| Batch {
            indices: idx.to_vec(),
            features: dataset.features.select_rows(idx),
            labels: dataset.labels.select(idx),
        })
        .collect())
}
