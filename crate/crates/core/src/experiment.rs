//! Configured experiments: TOML configs and presets, mentor pretraining and
//! artifacts, distillation runs and ablation suites.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generate_blob_spiral_mix, generate_blobs, generate_spirals, load_csv, split, Dataset, TrainTest};
use crate::error::{CkdError, Result};
use crate::mentoring::{MentoringConfig, MentoringMode};
use crate::model::{Classroom, ClassroomSpec, MlpSpec, ModelParams};
use crate::optim::OptimizerConfig;
use crate::ranking::{ModelId, RankingMethod};
use crate::trainer::{distill_student, pretrain_mentor, PerClassAccuracy, RunResult};

pub const SCHEMA_VERSION: u32 = 1;

/// Names accepted by [`ExperimentConfig::preset`].
pub const PRESETS: [&str; 2] = ["toy", "smoke"];

/// Extension of model weight files.
pub const WEIGHT_EXTENSION: &str = "ckdw";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    Blobs,
    Spirals,
    BlobSpiralMix,
    Csv,
}

/// Where the samples come from and how they are split. Generator parameters that
/// a generator does not use must be left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub generator: Generator,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spread: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    /// CSV input, relative to the output root unless absolute.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub train_fraction: f64,
    pub seed: u64,
}

/// Model shapes, mentor seeds and the mentor pretraining budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassroomConfig {
    pub student: MlpSpec,
    pub teacher: MlpSpec,
    #[serde(default)]
    pub peers: Vec<MlpSpec>,
    pub teacher_seed: u64,
    #[serde(default)]
    pub peer_seeds: Vec<u64>,
    pub pretrain: OptimizerConfig,
}

/// Distillation settings. The student is initialized with `optimizer.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    #[serde(default)]
    pub ranking: RankingMethod,
    pub mentoring: MentoringConfig,
    pub optimizer: OptimizerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Directory under the output root for mentors and runs.
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub dataset: DatasetConfig,
    pub classroom: ClassroomConfig,
    pub distill: DistillConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn mlp(widths: &[usize]) -> MlpSpec {
    MlpSpec {
        layer_widths: widths.to_vec(),
    }
}

impl ExperimentConfig {
    /// `toy`: ten-class blob and spiral mixture with a `[2,16,10]` student, five
    /// peers and a `[2,128,10]` teacher. `smoke`: a three-class run that finishes
    /// in well under a second.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(ExperimentConfig {
                schema_version: SCHEMA_VERSION,
                dataset: DatasetConfig {
                    generator: Generator::BlobSpiralMix,
                    classes: Some(10),
                    per_class: Some(300),
                    dim: None,
                    spread: Some(0.1),
                    noise: Some(0.02),
                    path: None,
                    train_fraction: 0.7,
                    seed: 7,
                },
                classroom: ClassroomConfig {
                    student: mlp(&[2, 16, 10]),
                    teacher: mlp(&[2, 128, 10]),
                    peers: [24, 32, 48, 64, 96].iter().map(|&h| mlp(&[2, h, 10])).collect(),
                    teacher_seed: 100,
                    peer_seeds: (101..106).collect(),
                    pretrain: OptimizerConfig::desk_pretrain(),
                },
                distill: DistillConfig {
                    ranking: RankingMethod::Proportional,
                    mentoring: MentoringConfig::default(),
                    optimizer: OptimizerConfig::desk(),
                },
                output: OutputConfig::default(),
            }),
            "smoke" => Ok(ExperimentConfig {
                schema_version: SCHEMA_VERSION,
                dataset: DatasetConfig {
                    generator: Generator::Blobs,
                    classes: Some(3),
                    per_class: Some(30),
                    dim: Some(2),
                    spread: Some(0.6),
                    noise: None,
                    path: None,
                    train_fraction: 0.8,
                    seed: 1,
                },
                classroom: ClassroomConfig {
                    student: mlp(&[2, 4, 3]),
                    teacher: mlp(&[2, 16, 3]),
                    peers: vec![mlp(&[2, 8, 3])],
                    teacher_seed: 10,
                    peer_seeds: vec![11],
                    pretrain: OptimizerConfig {
                        total_epochs: 10,
                        warmup_epochs: 5,
                        batch_size: 16,
                        ..OptimizerConfig::desk_pretrain()
                    },
                },
                distill: DistillConfig {
                    ranking: RankingMethod::Proportional,
                    mentoring: MentoringConfig::default(),
                    optimizer: OptimizerConfig {
                        total_epochs: 4,
                        warmup_epochs: 2,
                        batch_size: 16,
                        ..OptimizerConfig::desk()
                    },
                },
                output: OutputConfig::default(),
            }),
            other => Err(CkdError::Config(format!(
                "unknown preset {other:?}; available: {}",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| CkdError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CkdError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CkdError::MissingArtifact(path.to_path_buf()),
            _ => CkdError::io(path, e),
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            CkdError::Config(msg) => CkdError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Checks every section; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CkdError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let field = |section: &str, e: CkdError| match e {
            CkdError::InvalidArgument(msg) | CkdError::Config(msg) => CkdError::Config(format!("{section}: {msg}")),
            other => other,
        };
        self.dataset.validate().map_err(|e| field("dataset", e))?;
        self.classroom.validate().map_err(|e| field("classroom", e))?;
        self.distill
            .mentoring
            .validate()
            .map_err(|e| field("distill.mentoring", e))?;
        self.distill
            .optimizer
            .validate()
            .map_err(|e| field("distill.optimizer", e))?;
        if let Some(classes) = self.dataset.classes {
            let out = self.classroom.student.output_width();
            if out != classes {
                return Err(CkdError::Config(format!(
                    "classroom.student: output width {out} does not match dataset.classes {classes}"
                )));
            }
        }
        Ok(())
    }

    /// Directory for mentors and runs under `root`.
    pub fn output_dir(&self, root: &Path) -> PathBuf {
        if self.output.dir == Path::new(".") {
            return root.to_path_buf();
        }
        root.join(&self.output.dir)
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(CkdError::Config(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        let (need, forbid): (&[&str], &[&str]) = match self.generator {
            Generator::Blobs => (&["classes", "per_class", "dim", "spread"], &["noise", "path"]),
            Generator::Spirals => (&["classes", "per_class", "noise"], &["dim", "spread", "path"]),
            Generator::BlobSpiralMix => (&["classes", "per_class", "spread", "noise"], &["dim", "path"]),
            Generator::Csv => (&["path"], &["per_class", "dim", "spread", "noise"]),
        };
        let present = |name: &str| match name {
            "classes" => self.classes.is_some(),
            "per_class" => self.per_class.is_some(),
            "dim" => self.dim.is_some(),
            "spread" => self.spread.is_some(),
            "noise" => self.noise.is_some(),
            "path" => self.path.is_some(),
            _ => unreachable!(),
        };
        let generator = serde_plain_name(self.generator);
        if let Some(missing) = need.iter().find(|n| !present(n)) {
            return Err(CkdError::Config(format!(
                "{missing} is required for generator {generator}"
            )));
        }
        if let Some(extra) = forbid.iter().find(|n| present(n)) {
            return Err(CkdError::Config(format!(
                "{extra} is not used by generator {generator}"
            )));
        }
        Ok(())
    }
}

fn serde_plain_name(g: Generator) -> &'static str {
    match g {
        Generator::Blobs => "blobs",
        Generator::Spirals => "spirals",
        Generator::BlobSpiralMix => "blob-spiral-mix",
        Generator::Csv => "csv",
    }
}

impl ClassroomConfig {
    pub fn spec(&self) -> ClassroomSpec {
        ClassroomSpec {
            student: self.student.clone(),
            teacher: self.teacher.clone(),
            peers: self.peers.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec().validate()?;
        if self.peer_seeds.len() != self.peers.len() {
            return Err(CkdError::Config(format!(
                "peer_seeds has {} entries for {} peers",
                self.peer_seeds.len(),
                self.peers.len()
            )));
        }
        self.pretrain
            .validate()
            .map_err(|e| CkdError::Config(format!("pretrain: {e}")))
    }

    /// Mentor ids, specs and pretraining seeds in id order.
    pub fn mentors(&self) -> Vec<(ModelId, &MlpSpec, u64)> {
        std::iter::once((ModelId::Teacher, &self.teacher, self.teacher_seed))
            .chain(
                self.peers
                    .iter()
                    .zip(&self.peer_seeds)
                    .enumerate()
                    .map(|(i, (s, &seed))| (ModelId::Peer(i as u16 + 1), s, seed)),
            )
            .collect()
    }
}

/// Generates or loads the dataset and splits it.
pub fn prepare_data(config: &DatasetConfig, root: &Path) -> Result<TrainTest> {
    config.validate()?;
    let req = |v: Option<usize>| v.expect("checked by validate");
    let reqf = |v: Option<f64>| v.expect("checked by validate");
    let dataset: Dataset = match config.generator {
        Generator::Blobs => generate_blobs(
            req(config.classes),
            req(config.per_class),
            req(config.dim),
            reqf(config.spread),
            config.seed,
        )?,
        Generator::Spirals => generate_spirals(
            req(config.classes),
            req(config.per_class),
            reqf(config.noise),
            config.seed,
        )?,
        Generator::BlobSpiralMix => generate_blob_spiral_mix(
            req(config.classes),
            req(config.per_class),
            reqf(config.spread),
            reqf(config.noise),
            config.seed,
        )?,
        Generator::Csv => {
            let path = config.path.as_ref().expect("checked by validate");
            load_csv(root.join(path), config.classes)?
        }
    };
    split(&dataset, config.train_fraction, config.seed)
}

/// Frozen mentors in id order.
#[derive(Debug, Clone, PartialEq)]
pub struct Mentors {
    pub teacher: ModelParams,
    pub peers: Vec<ModelParams>,
}

impl Mentors {
    /// Classroom of `student`, the teacher and the first `peers` peers.
    pub fn classroom(&self, student: ModelParams, peers: usize) -> Result<Classroom> {
        if peers > self.peers.len() {
            return Err(CkdError::invalid(format!(
                "{peers} peers requested but only {} are available",
                self.peers.len()
            )));
        }
        Ok(Classroom {
            student,
            teacher: self.teacher.clone(),
            peers: self.peers[..peers].to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MentorReport {
    pub id: ModelId,
    pub spec: MlpSpec,
    pub train_top1: f64,
    pub test_top1: f64,
}

/// Trains every mentor from scratch on up to `workers` threads. Each mentor is
/// initialized and shuffled with its own seed, so the result does not depend on
/// the worker count.
pub fn pretrain_classroom(
    config: &ClassroomConfig,
    data: &TrainTest,
    workers: usize,
) -> Result<(Mentors, Vec<MentorReport>)> {
    config.validate()?;
    let jobs = config.mentors();
    let trained: Vec<(ModelParams, MentorReport)> = with_pool(workers, || {
        jobs.par_iter()
            .map(|(id, spec, seed)| {
                let optimizer = OptimizerConfig {
                    seed: *seed,
                    ..config.pretrain.clone()
                };
                let (params, result) = pretrain_mentor(spec, data, &optimizer)?;
                let report = MentorReport {
                    id: *id,
                    spec: (*spec).clone(),
                    train_top1: result.final_train.top1,
                    test_top1: result.final_test.top1,
                };
                Ok((params, report))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let (mut params, reports): (Vec<_>, Vec<_>) = trained.into_iter().unzip();
    let teacher = params.remove(0);
    Ok((Mentors { teacher, peers: params }, reports))
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CkdError::invalid(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

pub fn mentor_file_name(id: ModelId) -> String {
    format!("{id}.{WEIGHT_EXTENSION}")
}

/// `key = value` lines with each mentor's architecture and accuracy.
pub fn mentor_summary(reports: &[MentorReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let _ = writeln!(out, "{}.layers = {}", r.id, r.spec);
        let _ = writeln!(out, "{}.train_top1 = {:.4}", r.id, r.train_top1);
        let _ = writeln!(out, "{}.test_top1 = {:.4}", r.id, r.test_top1);
    }
    out
}

/// Writes one weight file per mentor plus `summary.txt` into `dir`.
pub fn save_mentors(dir: &Path, mentors: &Mentors, reports: &[MentorReport]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CkdError::io(dir, e))?;
    mentors.teacher.save(dir.join(mentor_file_name(ModelId::Teacher)))?;
    for (i, p) in mentors.peers.iter().enumerate() {
        p.save(dir.join(mentor_file_name(ModelId::Peer(i as u16 + 1))))?;
    }
    write_file(&dir.join("summary.txt"), &mentor_summary(reports))
}

/// Loads the mentors named by `config` from `dir`, checking their shapes.
pub fn load_mentors(dir: &Path, config: &ClassroomConfig) -> Result<Mentors> {
    let mut loaded = config
        .mentors()
        .into_iter()
        .map(|(id, spec, _)| ModelParams::load_expecting(dir.join(mentor_file_name(id)), spec))
        .collect::<Result<Vec<_>>>()?;
    let teacher = loaded.remove(0);
    Ok(Mentors { teacher, peers: loaded })
}

pub fn mentors_dir(output_dir: &Path) -> PathBuf {
    output_dir.join("mentors")
}

/// `<mode>-<method>-seed<seed>`, e.g. `classroom-adaptive-method-a-seed0`.
pub fn run_name(mode: MentoringMode, ranking: RankingMethod, seed: u64) -> String {
    format!("{}-{}-seed{seed}", mode.name(), ranking.label())
}

pub fn run_dir(output_dir: &Path, config: &DistillConfig) -> PathBuf {
    output_dir
        .join("runs")
        .join(run_name(config.mentoring.mode, config.ranking, config.optimizer.seed))
}

/// A finished distillation run.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillOutcome {
    pub student: ModelParams,
    pub result: RunResult,
    pub per_class: PerClassAccuracy,
}

impl DistillOutcome {
    pub fn per_class_csv(&self) -> String {
        let mut out = String::from("class,correct,total,accuracy\n");
        for (c, acc) in self.per_class.accuracies().iter().enumerate() {
            let _ = writeln!(
                out,
                "{c},{},{},{acc:.6}",
                self.per_class.correct[c], self.per_class.total[c]
            );
        }
        out
    }

    /// Writes `epochs.csv`, `per_class.csv`, `summary.txt` and the student weights.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| CkdError::io(dir, e))?;
        write_file(&dir.join("epochs.csv"), &self.result.epoch_csv())?;
        write_file(&dir.join("per_class.csv"), &self.per_class_csv())?;
        write_file(&dir.join("summary.txt"), &self.result.summary())?;
        self.student.save(dir.join(format!("student.{WEIGHT_EXTENSION}")))
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CkdError::io(path, e))
}

/// Distills a fresh student (seeded by `optimizer.seed`) from the teacher and
/// the first `peers` peers.
pub fn run_distill(
    classroom: &ClassroomConfig,
    distill: &DistillConfig,
    data: &TrainTest,
    mentors: &Mentors,
    peers: usize,
) -> Result<DistillOutcome> {
    let student = ModelParams::init(&classroom.student, distill.optimizer.seed)?;
    let room = mentors.classroom(student, peers)?;
    let (student, result) = distill_student(&room, data, &distill.mentoring, &distill.optimizer, distill.ranking)?;
    let per_class = PerClassAccuracy::evaluate(&student, &data.test)?;
    Ok(DistillOutcome {
        student,
        result,
        per_class,
    })
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuiteKind {
    ClassroomSize,
    RankingMethod,
    TemperatureMode,
    BaselineCompare,
}

/// One point of a suite's grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variation {
    Peers(usize),
    Ranking(RankingMethod),
    Mode(MentoringMode),
}

impl Variation {
    pub fn label(&self) -> String {
        match self {
            Variation::Peers(n) => format!("peers-{n}"),
            Variation::Ranking(m) => m.label().to_string(),
            Variation::Mode(m) => m.name().to_string(),
        }
    }
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

/// A suite: one base experiment, a grid along one axis and a seed list. Grids
/// left out default to every peer count, both ranking methods, adaptive versus
/// fixed temperature, or every baseline mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub schema_version: u32,
    pub suite: SuiteKind,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer_counts: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rankings: Option<Vec<RankingMethod>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<MentoringMode>>,
    pub base: ExperimentConfig,
}

impl AblationConfig {
    pub fn new(suite: SuiteKind, base: ExperimentConfig) -> Self {
        AblationConfig {
            schema_version: SCHEMA_VERSION,
            suite,
            seeds: default_seeds(),
            peer_counts: None,
            rankings: None,
            modes: None,
            base,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: AblationConfig = toml::from_str(text).map_err(|e| CkdError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CkdError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CkdError::MissingArtifact(path.to_path_buf()),
            _ => CkdError::io(path, e),
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            CkdError::Config(msg) => CkdError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CkdError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.base.validate().map_err(|e| {
            CkdError::Config(format!(
                "base.{}",
                e.to_string().trim_start_matches("configuration error: ")
            ))
        })?;
        if self.seeds.is_empty() {
            return Err(CkdError::Config("seeds must list at least one seed".into()));
        }
        let grids = [
            ("peer_counts", self.peer_counts.is_some(), SuiteKind::ClassroomSize),
            ("rankings", self.rankings.is_some(), SuiteKind::RankingMethod),
        ];
        for (name, present, owner) in grids {
            if present && self.suite != owner {
                return Err(CkdError::Config(format!("{name} does not apply to this suite")));
            }
        }
        if self.modes.is_some() && !matches!(self.suite, SuiteKind::TemperatureMode | SuiteKind::BaselineCompare) {
            return Err(CkdError::Config("modes does not apply to this suite".into()));
        }
        let variations = self.variations();
        if variations.is_empty() {
            return Err(CkdError::Config("the variation grid is empty".into()));
        }
        let available = self.base.classroom.peers.len();
        for v in &variations {
            if let Variation::Peers(n) = v {
                if *n > available {
                    return Err(CkdError::Config(format!(
                        "peer_counts: {n} exceeds the {available} peers of the base classroom"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn variations(&self) -> Vec<Variation> {
        match self.suite {
            SuiteKind::ClassroomSize => self
                .peer_counts
                .clone()
                .unwrap_or_else(|| (0..=self.base.classroom.peers.len()).collect())
                .into_iter()
                .map(Variation::Peers)
                .collect(),
            SuiteKind::RankingMethod => self
                .rankings
                .clone()
                .unwrap_or_else(|| vec![RankingMethod::Proportional, RankingMethod::Uniform])
                .into_iter()
                .map(Variation::Ranking)
                .collect(),
            SuiteKind::TemperatureMode => self
                .modes
                .clone()
                .unwrap_or_else(|| vec![MentoringMode::ClassroomAdaptive, MentoringMode::ClassroomFixed])
                .into_iter()
                .map(Variation::Mode)
                .collect(),
            SuiteKind::BaselineCompare => self
                .modes
                .clone()
                .unwrap_or_else(|| {
                    vec![
                        MentoringMode::Nokd,
                        MentoringMode::SingleKd,
                        MentoringMode::Aver,
                        MentoringMode::ClassroomAdaptive,
                    ]
                })
                .into_iter()
                .map(Variation::Mode)
                .collect(),
        }
    }

    /// Distillation settings and peer count of one cell.
    pub fn cell_config(&self, variation: Variation, seed: u64) -> (DistillConfig, usize) {
        let mut distill = self.base.distill.clone();
        distill.optimizer.seed = seed;
        let mut peers = self.base.classroom.peers.len();
        match variation {
            Variation::Peers(n) => peers = n,
            Variation::Ranking(m) => distill.ranking = m,
            Variation::Mode(m) => distill.mentoring.mode = m,
        }
        (distill, peers)
    }
}

/// One (variation, seed) cell. Failures are kept, not propagated.
#[derive(Debug)]
pub struct AblationCell {
    pub variation: Variation,
    pub seed: u64,
    pub outcome: Result<DistillOutcome>,
}

/// Mean and sample standard deviation of final test top-1 over the completed seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationAggregate {
    pub label: String,
    pub completed: usize,
    pub failed: usize,
    pub mean_top1: Option<f64>,
    pub std_top1: Option<f64>,
}

#[derive(Debug)]
pub struct AblationReport {
    pub suite: SuiteKind,
    pub cells: Vec<AblationCell>,
}

/// Runs every cell on up to `workers` threads. Cells are independent and each is
/// deterministic, and results keep grid order, so reports do not depend on
/// `workers`.
pub fn run_ablation(
    config: &AblationConfig,
    data: &TrainTest,
    mentors: &Mentors,
    workers: usize,
) -> Result<AblationReport> {
    config.validate()?;
    let grid: Vec<(Variation, u64)> = config
        .variations()
        .into_iter()
        .flat_map(|v| config.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let cells = with_pool(workers, || {
        grid.par_iter()
            .map(|&(variation, seed)| {
                let (distill, peers) = config.cell_config(variation, seed);
                AblationCell {
                    variation,
                    seed,
                    outcome: run_distill(&config.base.classroom, &distill, data, mentors, peers),
                }
            })
            .collect::<Vec<_>>()
    })?;
    Ok(AblationReport {
        suite: config.suite,
        cells,
    })
}

impl AblationReport {
    pub fn failures(&self) -> impl Iterator<Item = &AblationCell> {
        self.cells.iter().filter(|c| c.outcome.is_err())
    }

    /// One aggregate per variation, in grid order.
    pub fn aggregate(&self) -> Vec<VariationAggregate> {
        let mut labels: Vec<Variation> = Vec::new();
        for c in &self.cells {
            if !labels.contains(&c.variation) {
                labels.push(c.variation);
            }
        }
        labels
            .into_iter()
            .map(|v| {
                let cells: Vec<&AblationCell> = self.cells.iter().filter(|c| c.variation == v).collect();
                let scores: Vec<f64> = cells
                    .iter()
                    .filter_map(|c| c.outcome.as_ref().ok())
                    .map(|o| o.result.final_test.top1)
                    .collect();
                let (mean, std) = mean_std(&scores);
                VariationAggregate {
                    label: v.label(),
                    completed: scores.len(),
                    failed: cells.len() - scores.len(),
                    mean_top1: mean,
                    std_top1: std,
                }
            })
            .collect()
    }

    pub fn aggregate_csv(&self) -> String {
        let mut out = String::from("variation,completed,failed,mean_test_top1,std_test_top1\n");
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for a in self.aggregate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                a.label,
                a.completed,
                a.failed,
                fmt(a.mean_top1),
                fmt(a.std_top1)
            );
        }
        out
    }

    pub fn cells_csv(&self) -> String {
        let mut out = String::from("variation,seed,status,final_test_top1,best_test_top1,error\n");
        for c in &self.cells {
            match &c.outcome {
                Ok(o) => {
                    let best = o.result.best_test.map(|b| format!("{:.6}", b.top1)).unwrap_or_default();
                    let _ = writeln!(
                        out,
                        "{},{},ok,{:.6},{best},",
                        c.variation.label(),
                        c.seed,
                        o.result.final_test.top1
                    );
                }
                Err(e) => {
                    let msg = e.to_string().replace(['"', '\n'], " ");
                    let _ = writeln!(out, "{},{},failed,,,\"{msg}\"", c.variation.label(), c.seed);
                }
            }
        }
        out
    }
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (Some(mean), Some(0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}
