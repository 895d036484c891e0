//! Keypoint heads: coordinate-classification (SimCC) and heatmap outputs, their
//! distillation losses, PCK weights and a synthetic keypoint task that runs the
//! classroom loop unchanged.
//!
//! A SimCC head emits `K * (Dx + Dy)` logits per sample: all x-bin logits joint by
//! joint, then all y-bin logits joint by joint. Stored per axis as `(N*K) x D`
//! matrices, whose row-major data is the same memory order as the `N x (K*D)`
//! slice of the head, so gradients map back by concatenation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{CkdError, Result};
use crate::loss::{cross_entropy, kl_distill, LossWithGrad};
use crate::matrix::{LabelVector, Matrix};
use crate::mentoring::{MentoringConfig, MentoringMode};
use crate::model::{Classroom, MlpSpec, ModelParams};
use crate::optim::OptimizerConfig;
use crate::ranking::RankingMethod;
use crate::trainer::{classroom_mentors, train_with_task, Accuracy, RunResult, Split, Task};

/// PCK threshold as a fraction of the bin-grid diagonal.
pub const DEFAULT_PCK_THRESHOLD: f64 = 0.05;

/// A keypoint position in bin coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Keypoint {
    pub x: usize,
    pub y: usize,
}

/// Shape of a SimCC head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimccHead {
    pub joints: usize,
    pub x_bins: usize,
    pub y_bins: usize,
}

impl SimccHead {
    pub fn new(joints: usize, x_bins: usize, y_bins: usize) -> Result<Self> {
        if joints == 0 {
            return Err(CkdError::invalid("a keypoint head needs at least one joint"));
        }
        if x_bins < 2 || y_bins < 2 {
            return Err(CkdError::invalid(format!(
                "bin counts must be at least 2, got {x_bins} x {y_bins}"
            )));
        }
        Ok(SimccHead { joints, x_bins, y_bins })
    }

    pub fn output_width(&self) -> usize {
        self.joints * (self.x_bins + self.y_bins)
    }

    /// MLP with the given input and hidden widths ending in this head.
    pub fn mlp_spec(&self, input: usize, hidden: &[usize]) -> Result<MlpSpec> {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(self.output_width());
        MlpSpec::new(widths)
    }

    /// Splits `N x K(Dx+Dy)` head logits into per-axis outputs.
    pub fn split(&self, logits: &Matrix) -> Result<SimccOutput> {
        if logits.cols() != self.output_width() {
            return Err(CkdError::ShapeMismatch {
                context: "simcc head",
                expected: format!("{} columns", self.output_width()),
                actual: format!("{} columns", logits.cols()),
            });
        }
        let (n, k) = (logits.rows(), self.joints);
        let xw = k * self.x_bins;
        let mut x = Vec::with_capacity(n * xw);
        let mut y = Vec::with_capacity(n * k * self.y_bins);
        for row in logits.row_iter() {
            x.extend_from_slice(&row[..xw]);
            y.extend_from_slice(&row[xw..]);
        }
        SimccOutput::new(
            Matrix::from_vec(n * k, self.x_bins, x)?,
            Matrix::from_vec(n * k, self.y_bins, y)?,
            k,
        )
    }

    /// Inverse of [`SimccHead::split`]: per-axis `(N*K) x D` matrices back to head layout.
    pub fn join(&self, x: &Matrix, y: &Matrix) -> Result<Matrix> {
        let k = self.joints;
        if x.cols() != self.x_bins || y.cols() != self.y_bins || x.rows() != y.rows() || !x.rows().is_multiple_of(k) {
            return Err(CkdError::ShapeMismatch {
                context: "simcc join",
                expected: format!("(N*{k}) x {} and (N*{k}) x {}", self.x_bins, self.y_bins),
                actual: format!("{:?} and {:?}", x.shape(), y.shape()),
            });
        }
        let n = x.rows() / k;
        let (xw, yw) = (k * self.x_bins, k * self.y_bins);
        let mut data = Vec::with_capacity(n * (xw + yw));
        for i in 0..n {
            data.extend_from_slice(&x.as_slice()[i * xw..(i + 1) * xw]);
            data.extend_from_slice(&y.as_slice()[i * yw..(i + 1) * yw]);
        }
        Matrix::from_vec(n, xw + yw, data)
    }
}

/// Per-joint coordinate-bin logits along x and y, each `(N*K) x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimccOutput {
    x: Matrix,
    y: Matrix,
    joints: usize,
}

impl SimccOutput {
    pub fn new(x: Matrix, y: Matrix, joints: usize) -> Result<Self> {
        if joints == 0 {
            return Err(CkdError::invalid("a keypoint output needs at least one joint"));
        }
        if x.cols() < 2 || y.cols() < 2 {
            return Err(CkdError::invalid(format!(
                "bin counts must be at least 2, got {} x {}",
                x.cols(),
                y.cols()
            )));
        }
        if x.rows() != y.rows() || !x.rows().is_multiple_of(joints) {
            return Err(CkdError::ShapeMismatch {
                context: "simcc output",
                expected: format!("equal row counts divisible by {joints}"),
                actual: format!("{} and {}", x.rows(), y.rows()),
            });
        }
        if !x.is_finite() || !y.is_finite() {
            return Err(CkdError::invalid("simcc logits must be finite"));
        }
        Ok(SimccOutput { x, y, joints })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn samples(&self) -> usize {
        self.x.rows() / self.joints
    }

    pub fn head(&self) -> SimccHead {
        SimccHead {
            joints: self.joints,
            x_bins: self.x.cols(),
            y_bins: self.y.cols(),
        }
    }

    /// Arg-max bin per axis for every sample and joint, sample-major.
    pub fn decode(&self) -> Vec<Keypoint> {
        argmax_rows(&self.x)
            .into_iter()
            .zip(argmax_rows(&self.y))
            .map(|(x, y)| Keypoint { x, y })
            .collect()
    }

    fn check_same_shape(&self, other: &SimccOutput) -> Result<()> {
        if self.joints != other.joints || self.x.shape() != other.x.shape() || self.y.shape() != other.y.shape() {
            return Err(CkdError::ShapeMismatch {
                context: "simcc_distill_loss",
                expected: format!("K={} x{:?} y{:?}", self.joints, self.x.shape(), self.y.shape()),
                actual: format!("K={} x{:?} y{:?}", other.joints, other.x.shape(), other.y.shape()),
            });
        }
        Ok(())
    }
}

/// `N x K x H x W` heatmaps stored as `(N*K) x (H*W)`, one row per joint map.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapOutput {
    maps: Matrix,
    joints: usize,
    height: usize,
    width: usize,
}

impl HeatmapOutput {
    /// `data` is row-major `N x K x H x W`.
    pub fn new(samples: usize, joints: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if joints == 0 || height == 0 || width == 0 {
            return Err(CkdError::invalid(format!(
                "heatmap dimensions must be positive, got K={joints} {height}x{width}"
            )));
        }
        let maps = Matrix::from_vec(samples * joints, height * width, data)?;
        Ok(HeatmapOutput {
            maps,
            joints,
            height,
            width,
        })
    }

    pub fn maps(&self) -> &Matrix {
        &self.maps
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn samples(&self) -> usize {
        self.maps.rows() / self.joints
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Peak cell of each joint map, sample-major.
    pub fn decode(&self) -> Vec<Keypoint> {
        argmax_rows(&self.maps)
            .into_iter()
            .map(|cell| Keypoint {
                x: cell % self.width,
                y: cell / self.width,
            })
            .collect()
    }
}

fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.row_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// True keypoint bins and visibility, sample-major (`N*K` entries).
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointGroundTruth {
    joints: usize,
    x_bins: usize,
    y_bins: usize,
    points: Vec<Keypoint>,
    visible: Vec<bool>,
}

impl KeypointGroundTruth {
    pub fn new(joints: usize, x_bins: usize, y_bins: usize, points: Vec<Keypoint>, visible: Vec<bool>) -> Result<Self> {
        SimccHead::new(joints, x_bins, y_bins)?;
        if !points.len().is_multiple_of(joints) || visible.len() != points.len() {
            return Err(CkdError::ShapeMismatch {
                context: "keypoint ground truth",
                expected: format!("a multiple of {joints} points with one flag each"),
                actual: format!("{} points, {} flags", points.len(), visible.len()),
            });
        }
        if let Some(p) = points.iter().find(|p| p.x >= x_bins || p.y >= y_bins) {
            return Err(CkdError::invalid(format!(
                "keypoint ({}, {}) outside the {x_bins} x {y_bins} bin grid",
                p.x, p.y
            )));
        }
        Ok(KeypointGroundTruth {
            joints,
            x_bins,
            y_bins,
            points,
            visible,
        })
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn bins(&self) -> (usize, usize) {
        (self.x_bins, self.y_bins)
    }

    pub fn samples(&self) -> usize {
        self.points.len() / self.joints
    }

    pub fn points(&self) -> &[Keypoint] {
        &self.points
    }

    pub fn visible(&self) -> &[bool] {
        &self.visible
    }

    /// Ground truth of the given samples, in order.
    pub fn select(&self, samples: &[usize]) -> KeypointGroundTruth {
        let k = self.joints;
        let mut points = Vec::with_capacity(samples.len() * k);
        let mut visible = Vec::with_capacity(samples.len() * k);
        for &s in samples {
            points.extend_from_slice(&self.points[s * k..(s + 1) * k]);
            visible.extend_from_slice(&self.visible[s * k..(s + 1) * k]);
        }
        KeypointGroundTruth {
            points,
            visible,
            ..*self
        }
    }

    pub fn x_labels(&self) -> LabelVector {
        LabelVector::new(self.points.iter().map(|p| p.x).collect())
    }

    pub fn y_labels(&self) -> LabelVector {
        LabelVector::new(self.points.iter().map(|p| p.y).collect())
    }

    /// Length of the bin-grid diagonal.
    pub fn reference_scale(&self) -> f64 {
        (self.x_bins as f64).hypot(self.y_bins as f64)
    }
}

/// Fraction of visible joints predicted within `threshold * reference_scale` bins
/// (Euclidean) of the truth.
pub fn pck_weight(predicted: &[Keypoint], truth: &KeypointGroundTruth, threshold: f64) -> Result<f64> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(CkdError::invalid(format!(
            "PCK threshold must be positive, got {threshold}"
        )));
    }
    if predicted.len() != truth.points.len() {
        return Err(CkdError::ShapeMismatch {
            context: "pck_weight",
            expected: format!("{} keypoints", truth.points.len()),
            actual: format!("{} keypoints", predicted.len()),
        });
    }
    let radius = threshold * truth.reference_scale();
    let mut visible = 0usize;
    let mut hits = 0usize;
    for ((p, t), &v) in predicted.iter().zip(&truth.points).zip(&truth.visible) {
        if !v {
            continue;
        }
        visible += 1;
        let dx = p.x as f64 - t.x as f64;
        let dy = p.y as f64 - t.y as f64;
        if dx.hypot(dy) <= radius {
            hits += 1;
        }
    }
    if visible == 0 {
        return Err(CkdError::invalid("PCK needs at least one visible joint"));
    }
    Ok(hits as f64 / visible as f64)
}

/// `(L_x + L_y) / K`, each axis distilled over its `(N*K) x D` rows. The gradient is
/// in head layout (`N x K(Dx+Dy)`).
pub fn simcc_distill_loss(mentor: &SimccOutput, student: &SimccOutput, temperature: f64) -> Result<LossWithGrad> {
    mentor.check_same_shape(student)?;
    let k = student.joints as f64;
    let lx = kl_distill(&mentor.x, &student.x, temperature)?;
    let ly = kl_distill(&mentor.y, &student.y, temperature)?;
    let grad = student.head().join(&lx.grad.scale(1.0 / k), &ly.grad.scale(1.0 / k))?;
    Ok(LossWithGrad {
        value: (lx.value + ly.value) / k,
        grad,
    })
}

/// Per joint, the flattened `H*W` map is one distribution; the per-joint losses are
/// summed and divided by `K`. The gradient is in `N x (K*H*W)` layout.
pub fn heatmap_distill_loss(mentor: &HeatmapOutput, student: &HeatmapOutput, temperature: f64) -> Result<LossWithGrad> {
    if mentor.joints != student.joints || mentor.dims() != student.dims() || mentor.maps.rows() != student.maps.rows() {
        return Err(CkdError::ShapeMismatch {
            context: "heatmap_distill_loss",
            expected: format!("N={} K={} {:?}", mentor.samples(), mentor.joints, mentor.dims()),
            actual: format!("N={} K={} {:?}", student.samples(), student.joints, student.dims()),
        });
    }
    let (n, k) = (student.samples(), student.joints);
    let cells = student.height * student.width;
    let mut value = 0.0;
    let mut grad = vec![0.0; n * k * cells];
    let rows_of = |j: usize| -> Vec<usize> { (0..n).map(|i| i * k + j).collect() };
    for j in 0..k {
        let rows = rows_of(j);
        let lj = kl_distill(
            &mentor.maps.select_rows(&rows),
            &student.maps.select_rows(&rows),
            temperature,
        )?;
        value += lj.value;
        for (i, g) in lj.grad.row_iter().enumerate() {
            let at = (i * k + j) * cells;
            for (dst, src) in grad[at..at + cells].iter_mut().zip(g) {
                *dst = src / k as f64;
            }
        }
    }
    Ok(LossWithGrad {
        value: value / k as f64,
        grad: Matrix::from_vec(n, k * cells, grad)?,
    })
}

/// Features plus keypoint targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseDataset {
    pub features: Matrix,
    pub truth: KeypointGroundTruth,
}

impl PoseDataset {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Synthetic keypoints. Each sample has three features in `[-1, 1]`: a center
/// offset `(a, b)` and a rotation `c`. Joint `j` sits at
/// `(0.5 + 0.25a, 0.5 + 0.25b) + 0.2 (cos phi_j, sin phi_j)` with
/// `phi_j = pi c + 2 pi j / K`, plus Gaussian noise of std `noise`, in unit
/// coordinates quantized to `bins` bins per axis.
pub fn generate_toy_pose(samples: usize, joints: usize, bins: usize, noise: f64, seed: u64) -> Result<PoseDataset> {
    if samples == 0 {
        return Err(CkdError::invalid("need at least one sample"));
    }
    SimccHead::new(joints, bins, bins)?;
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(CkdError::invalid(format!("noise must be non-negative, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(samples * 3);
    let mut points = Vec::with_capacity(samples * joints);
    let to_bin = |v: f64| ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
    for _ in 0..samples {
        let f: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
        features.extend_from_slice(&f);
        let (cx, cy) = (0.5 + 0.25 * f[0], 0.5 + 0.25 * f[1]);
        for j in 0..joints {
            let phi = std::f64::consts::PI * f[2] + std::f64::consts::TAU * j as f64 / joints as f64;
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            points.push(Keypoint {
                x: to_bin(cx + 0.2 * phi.cos() + noise * nx),
                y: to_bin(cy + 0.2 * phi.sin() + noise * ny),
            });
        }
    }
    Ok(PoseDataset {
        features: Matrix::from_vec(samples, 3, features)?,
        truth: KeypointGroundTruth::new(joints, bins, bins, points, vec![true; samples * joints])?,
    })
}

/// SimCC keypoint task for the shared training loop. The task loss is the summed
/// per-axis bin cross-entropy, the batch weight is PCK and the score is PCK in
/// percent (reported as `top1`).
pub struct PoseTask<'a> {
    train: &'a PoseDataset,
    test: &'a PoseDataset,
    head: SimccHead,
    threshold: f64,
}

impl<'a> PoseTask<'a> {
    pub fn new(train: &'a PoseDataset, test: &'a PoseDataset, threshold: f64) -> Result<Self> {
        let (x_bins, y_bins) = train.truth.bins();
        let head = SimccHead::new(train.truth.joints(), x_bins, y_bins)?;
        if test.truth.bins() != train.truth.bins() || test.truth.joints() != head.joints {
            return Err(CkdError::invalid("train and test keypoint grids differ"));
        }
        if threshold.is_nan() || threshold <= 0.0 {
            return Err(CkdError::invalid(format!(
                "PCK threshold must be positive, got {threshold}"
            )));
        }
        Ok(PoseTask {
            train,
            test,
            head,
            threshold,
        })
    }

    pub fn head(&self) -> SimccHead {
        self.head
    }

    fn data(&self, split: Split) -> &PoseDataset {
        match split {
            Split::Train => self.train,
            Split::Test => self.test,
        }
    }
}

impl Task for PoseTask<'_> {
    fn features(&self, split: Split) -> &Matrix {
        &self.data(split).features
    }

    fn task_loss(&self, rows: &[usize], logits: &Matrix) -> Result<LossWithGrad> {
        let out = self.head.split(logits)?;
        let truth = self.train.truth.select(rows);
        let cx = cross_entropy(out.x(), &truth.x_labels())?.mean;
        let cy = cross_entropy(out.y(), &truth.y_labels())?.mean;
        Ok(LossWithGrad {
            value: cx.value + cy.value,
            grad: self.head.join(&cx.grad, &cy.grad)?,
        })
    }

    fn batch_weight(&self, rows: &[usize], logits: &Matrix) -> Result<f64> {
        pck_weight(
            &self.head.split(logits)?.decode(),
            &self.train.truth.select(rows),
            self.threshold,
        )
    }

    fn distill(&self, mentor: &Matrix, student: &Matrix, temperature: f64) -> Result<LossWithGrad> {
        simcc_distill_loss(&self.head.split(mentor)?, &self.head.split(student)?, temperature)
    }

    fn score(&self, split: Split, logits: &Matrix) -> Result<Accuracy> {
        let pck = pck_weight(
            &self.head.split(logits)?.decode(),
            &self.data(split).truth,
            self.threshold,
        )?;
        Ok(Accuracy {
            top1: 100.0 * pck,
            top5: None,
        })
    }
}

/// Trains a keypoint model from scratch on the task loss alone.
pub fn pretrain_pose_mentor(
    task: &PoseTask<'_>,
    spec: &MlpSpec,
    optimizer: &OptimizerConfig,
) -> Result<(ModelParams, RunResult)> {
    let init = ModelParams::init(spec, optimizer.seed)?;
    train_with_task(
        task,
        init,
        &[],
        &MentoringConfig::with_mode(MentoringMode::Nokd),
        RankingMethod::Proportional,
        optimizer,
    )
}

/// Distills a keypoint student from its classroom with PCK ranking.
pub fn distill_pose_student(
    task: &PoseTask<'_>,
    classroom: &Classroom,
    mentoring: &MentoringConfig,
    optimizer: &OptimizerConfig,
    ranking: RankingMethod,
) -> Result<(ModelParams, RunResult)> {
    train_with_task(
        task,
        classroom.student.clone(),
        &classroom_mentors(classroom),
        mentoring,
        ranking,
        optimizer,
    )
}
