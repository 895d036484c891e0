//! Mentor pretraining and student distillation loops, evaluation and run logs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use crate::data::{epoch_order, BatchPlan, Dataset, TrainTest};
use crate::error::{CkdError, Result};
use crate::loss::{cross_entropy, kl_distill, LossWithGrad};
use crate::matrix::{LabelVector, Matrix};
use crate::mentoring::{assemble_batch_loss, MentoringConfig, MentoringMode};
use crate::model::{Classroom, MlpSpec, ModelParams};
use crate::optim::{lr_at, sgd_step, OptimizerConfig, SgdState, StepContext};
use crate::ranking::{
    batch_weight, correct_class_prob, rank_with, select_active, ActiveSet, ModelId, RankTable, RankingMethod,
    UNIFORM_RANK_STEP,
};

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Top-1 and (for five or more classes) top-5 accuracy, in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accuracy {
    pub top1: f64,
    pub top5: Option<f64>,
}

/// Arg-max per row; ties go to the lowest class index.
pub fn predict(logits: &Matrix) -> Vec<usize> {
    logits
        .row_iter()
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

/// Position of `label` when classes are ordered by descending logit, ties by index.
fn label_position(row: &[f64], label: usize) -> usize {
    let target = row[label];
    row.iter()
        .enumerate()
        .filter(|&(c, &v)| v > target || (v == target && c < label))
        .count()
}

pub fn accuracy_from_logits(logits: &Matrix, labels: &LabelVector) -> Result<Accuracy> {
    labels.validate_for(logits)?;
    if labels.is_empty() {
        return Err(CkdError::invalid("accuracy of an empty set"));
    }
    let n = labels.len() as f64;
    let mut top1 = 0usize;
    let mut top5 = 0usize;
    for (row, &label) in logits.row_iter().zip(labels.as_slice()) {
        let pos = label_position(row, label);
        top1 += usize::from(pos == 0);
        top5 += usize::from(pos < 5);
    }
    Ok(Accuracy {
        top1: 100.0 * top1 as f64 / n,
        top5: (logits.cols() >= 5).then(|| 100.0 * top5 as f64 / n),
    })
}

pub fn evaluate(params: &ModelParams, dataset: &Dataset) -> Result<Accuracy> {
    accuracy_from_logits(&params.forward(dataset.features())?, dataset.labels())
}

/// Correct and total counts per class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerClassAccuracy {
    pub correct: Vec<usize>,
    pub total: Vec<usize>,
}

impl PerClassAccuracy {
    pub fn from_predictions(predictions: &[usize], labels: &LabelVector, class_count: usize) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(CkdError::ShapeMismatch {
                context: "per-class accuracy",
                expected: format!("{} predictions", labels.len()),
                actual: format!("{}", predictions.len()),
            });
        }
        let mut correct = vec![0; class_count];
        let mut total = vec![0; class_count];
        for (&p, &l) in predictions.iter().zip(labels.as_slice()) {
            if l >= class_count {
                return Err(CkdError::invalid(format!("label {l} out of range")));
            }
            total[l] += 1;
            correct[l] += usize::from(p == l);
        }
        Ok(PerClassAccuracy { correct, total })
    }

    pub fn evaluate(params: &ModelParams, dataset: &Dataset) -> Result<Self> {
        let predictions = predict(&params.forward(dataset.features())?);
        PerClassAccuracy::from_predictions(&predictions, dataset.labels(), dataset.class_count())
    }

    pub fn class_count(&self) -> usize {
        self.total.len()
    }

    /// Percent correct per class; classes without samples report 0.
    pub fn accuracies(&self) -> Vec<f64> {
        self.correct
            .iter()
            .zip(&self.total)
            .map(|(&c, &t)| if t == 0 { 0.0 } else { 100.0 * c as f64 / t as f64 })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassGain {
    /// Distilled minus baseline accuracy per class, in percentage points.
    pub deltas: Vec<f64>,
    pub improved: usize,
    pub degraded: usize,
    pub unchanged: usize,
}

pub fn per_class_gain(baseline: &PerClassAccuracy, distilled: &PerClassAccuracy) -> Result<ClassGain> {
    if baseline.class_count() != distilled.class_count() {
        return Err(CkdError::invalid(format!(
            "class count mismatch: baseline has {}, distilled has {}",
            baseline.class_count(),
            distilled.class_count()
        )));
    }
    let deltas: Vec<f64> = distilled
        .accuracies()
        .iter()
        .zip(baseline.accuracies())
        .map(|(d, b)| d - b)
        .collect();
    let improved = deltas.iter().filter(|&&d| d > 0.0).count();
    let degraded = deltas.iter().filter(|&&d| d < 0.0).count();
    Ok(ClassGain {
        unchanged: deltas.len() - improved - degraded,
        deltas,
        improved,
        degraded,
    })
}

// ---------------------------------------------------------------------------
// Logs
// ---------------------------------------------------------------------------

/// Per-model statistics over the training batches of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelEpochStats {
    pub id: ModelId,
    pub mean_weight: f64,
    pub mean_rank: f64,
    /// Mean task loss of this model on the training batches.
    pub mean_loss: f64,
    /// Mean distillation temperature over the batches where the mentor taught.
    pub mean_temperature: Option<f64>,
    /// Fraction of batches in which the mentor contributed a distillation term.
    pub active_fraction: Option<f64>,
    /// Batches in which this model's weight strictly exceeded the student's.
    pub batches_above_student: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train: Accuracy,
    pub test: Accuracy,
    pub batches: usize,
    /// Empty when the mode computes no ranks.
    pub models: Vec<ModelEpochStats>,
    pub mean_task_loss: f64,
    pub mean_alpha: f64,
    pub mean_distill_loss: f64,
    pub mean_total_loss: f64,
    /// Largest deviation of a batch's rank sum from its expected value.
    pub max_rank_sum_error: Option<f64>,
    /// Batches whose active set was not exactly the mentors beating the student.
    pub active_set_violations: usize,
}

impl EpochLog {
    pub fn model(&self, id: ModelId) -> Option<&ModelEpochStats> {
        self.models.iter().find(|m| m.id == id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfigEcho {
    pub mentoring: MentoringConfig,
    pub optimizer: OptimizerConfig,
    pub ranking: RankingMethod,
    pub mentor_count: usize,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub final_train: Accuracy,
    pub final_test: Accuracy,
    pub best_epoch: Option<usize>,
    pub best_test: Option<Accuracy>,
    pub logs: Vec<EpochLog>,
    pub config: RunConfigEcho,
    pub wall_clock_seconds: f64,
}

impl PartialEq for RunResult {
    /// Everything except wall-clock time.
    fn eq(&self, other: &Self) -> bool {
        self.final_train == other.final_train
            && self.final_test == other.final_test
            && self.best_epoch == other.best_epoch
            && self.best_test == other.best_test
            && self.logs == other.logs
            && self.config == other.config
    }
}

pub const EPOCH_CSV_HEADER: &str =
    "epoch,split,top1,top5,model_id,rank,temperature,active_fraction,weight,model_loss,lr,task_loss,distill_loss,total_loss";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl RunResult {
    /// Long-format epoch log: per epoch one `train` row per classroom model (student
    /// only when no ranks are computed) and one `test` row for the student.
    /// Accuracy columns always refer to the student.
    pub fn epoch_csv(&self) -> String {
        let mut out = String::from(EPOCH_CSV_HEADER);
        out.push('\n');
        for log in &self.logs {
            let losses = format!(
                "{:.6},{:.6},{:.6},{:.6}",
                log.learning_rate, log.mean_task_loss, log.mean_distill_loss, log.mean_total_loss
            );
            let train_acc = format!(
                "{:.4},{}",
                log.train.top1,
                log.train.top5.map(|v| format!("{v:.4}")).unwrap_or_default()
            );
            if log.models.is_empty() {
                let _ = writeln!(out, "{},train,{train_acc},student,,,,,,{losses}", log.epoch);
            }
            for m in &log.models {
                let _ = writeln!(
                    out,
                    "{},train,{train_acc},{},{:.6},{},{},{:.6},{:.6},{losses}",
                    log.epoch,
                    m.id,
                    m.mean_rank,
                    opt(m.mean_temperature),
                    opt(m.active_fraction),
                    m.mean_weight,
                    m.mean_loss,
                );
            }
            let _ = writeln!(
                out,
                "{},test,{:.4},{},student,,,,,,{:.6},,,",
                log.epoch,
                log.test.top1,
                log.test.top5.map(|v| format!("{v:.4}")).unwrap_or_default(),
                log.learning_rate,
            );
        }
        out
    }

    /// `key = value` lines describing the run.
    pub fn summary(&self) -> String {
        let c = &self.config;
        let mut lines = vec![
            format!("mode = {}", c.mentoring.mode),
            format!("ranking = {}", c.ranking),
            format!("base_temperature = {}", c.mentoring.base_temperature),
            format!("beta = {}", c.mentoring.beta),
            format!("delta = {}", c.mentoring.delta),
            format!("mentor_count = {}", c.mentor_count),
            format!("epochs = {}", c.optimizer.total_epochs),
            format!("batch_size = {}", c.optimizer.batch_size),
            format!("learning_rate = {}", c.optimizer.learning_rate),
            format!("momentum = {}", c.optimizer.momentum),
            format!("weight_decay = {}", c.optimizer.weight_decay),
            format!("warmup_epochs = {}", c.optimizer.warmup_epochs),
            format!("lr_decay_factor = {}", c.optimizer.lr_decay_factor),
            format!("lr_decay_interval_epochs = {}", c.optimizer.lr_decay_interval_epochs),
            format!("seed = {}", c.optimizer.seed),
            format!("final_train_top1 = {:.4}", self.final_train.top1),
            format!("final_test_top1 = {:.4}", self.final_test.top1),
        ];
        if let Some(t5) = self.final_test.top5 {
            lines.push(format!("final_test_top5 = {t5:.4}"));
        }
        if let (Some(e), Some(b)) = (self.best_epoch, self.best_test) {
            lines.push(format!("best_epoch = {e}"));
            lines.push(format!("best_test_top1 = {:.4}", b.top1));
        }
        lines.join("\n") + "\n"
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Which half of the data a score refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// What the training loop needs from an output head and its data.
///
/// `rows` always index the training split.
pub trait Task {
    fn features(&self, split: Split) -> &Matrix;

    /// Mean task loss of `logits` against the targets of `rows`, with its gradient.
    fn task_loss(&self, rows: &[usize], logits: &Matrix) -> Result<LossWithGrad>;

    /// Batch weight of one model: how well `logits` solve the batch, in `[0, 1]`.
    fn batch_weight(&self, rows: &[usize], logits: &Matrix) -> Result<f64>;

    /// Distillation loss from mentor to student logits at `temperature`.
    fn distill(&self, mentor: &Matrix, student: &Matrix, temperature: f64) -> Result<LossWithGrad>;

    /// Evaluation score of logits for a whole split, in percent.
    fn score(&self, split: Split, logits: &Matrix) -> Result<Accuracy>;
}

/// Softmax classification over a [`TrainTest`] split.
pub struct ClassificationTask<'a> {
    data: &'a TrainTest,
}

impl<'a> ClassificationTask<'a> {
    pub fn new(data: &'a TrainTest) -> Self {
        ClassificationTask { data }
    }
}

impl Task for ClassificationTask<'_> {
    fn features(&self, split: Split) -> &Matrix {
        match split {
            Split::Train => self.data.train.features(),
            Split::Test => self.data.test.features(),
        }
    }

    fn task_loss(&self, rows: &[usize], logits: &Matrix) -> Result<LossWithGrad> {
        Ok(cross_entropy(logits, &self.data.train.labels().select(rows))?.mean)
    }

    fn batch_weight(&self, rows: &[usize], logits: &Matrix) -> Result<f64> {
        batch_weight(&correct_class_prob(logits, &self.data.train.labels().select(rows))?)
    }

    fn distill(&self, mentor: &Matrix, student: &Matrix, temperature: f64) -> Result<LossWithGrad> {
        kl_distill(mentor, student, temperature)
    }

    fn score(&self, split: Split, logits: &Matrix) -> Result<Accuracy> {
        let labels = match split {
            Split::Train => self.data.train.labels(),
            Split::Test => self.data.test.labels(),
        };
        accuracy_from_logits(logits, labels)
    }
}

#[derive(Default)]
struct ModelAccumulator {
    weight: f64,
    rank: f64,
    loss: f64,
    temperature: f64,
    taught: usize,
    above_student: usize,
}

/// Expected sum of all ranks in one table.
fn expected_rank_sum(method: RankingMethod, lambda: f64, models: usize) -> f64 {
    match method {
        RankingMethod::Proportional => lambda,
        RankingMethod::Uniform => lambda * (models * (models + 1)) as f64 / 2.0,
    }
}

/// Whether the active set is exactly the mentors that beat the student: by weight
/// for proportional ranks, by rank for uniform ranks (whose ties are broken by id).
fn active_set_consistent(method: RankingMethod, ranks: &RankTable, active: &ActiveSet) -> bool {
    let student = ranks.entries[&ModelId::Student];
    let expected: Vec<ModelId> = ranks
        .entries
        .iter()
        .filter(|(id, e)| {
            !id.is_student()
                && match method {
                    RankingMethod::Proportional => e.weight > student.weight,
                    RankingMethod::Uniform => e.rank > student.rank,
                }
        })
        .map(|(id, _)| *id)
        .collect();
    expected == active.ids()
}

/// Mentors of a classroom in id order.
pub fn classroom_mentors(classroom: &Classroom) -> Vec<(ModelId, &ModelParams)> {
    std::iter::once((ModelId::Teacher, &classroom.teacher))
        .chain(
            classroom
                .peers
                .iter()
                .enumerate()
                .map(|(i, p)| (ModelId::Peer(i as u16 + 1), p)),
        )
        .collect()
}

/// Trains `student` against frozen `mentors` (in id order) on any [`Task`] and logs
/// every epoch. This is the batch loop shared by every output head: forward all
/// models, weight and rank them, select the active mentors, assemble the loss for
/// `mentoring.mode`, backpropagate into the student and take an SGD step.
pub fn train_with_task<T: Task>(
    task: &T,
    mut student: ModelParams,
    mentors: &[(ModelId, &ModelParams)],
    mentoring: &MentoringConfig,
    ranking: RankingMethod,
    optimizer: &OptimizerConfig,
) -> Result<(ModelParams, RunResult)> {
    let started = Instant::now();
    optimizer.validate()?;
    mentoring.validate()?;
    let mode = mentoring.mode;
    let train_features = task.features(Split::Train);
    if train_features.rows() == 0 {
        return Err(CkdError::invalid("empty training set"));
    }

    // mentors are frozen and rows are independent, so their logits are computed once
    let ranked = mode != MentoringMode::Nokd && !mentors.is_empty();
    let mentor_logits: BTreeMap<ModelId, Matrix> = if ranked {
        mentors
            .iter()
            .map(|(id, p)| Ok((*id, p.forward(train_features)?)))
            .collect::<Result<_>>()?
    } else {
        BTreeMap::new()
    };
    let mentor_ids: Vec<ModelId> = mentor_logits.keys().copied().collect();
    let lambda = match ranking {
        RankingMethod::Proportional => mentors.len() as f64,
        RankingMethod::Uniform => UNIFORM_RANK_STEP,
    };
    let rank_sum_target = expected_rank_sum(ranking, lambda, mentors.len() + 1);

    let mut state = SgdState::new(&student)?;
    let mut logs = Vec::with_capacity(optimizer.total_epochs);
    for epoch in 0..optimizer.total_epochs {
        let lr = lr_at(epoch, optimizer);
        let plan = BatchPlan {
            batch_size: optimizer.batch_size,
            shuffle_seed: optimizer.seed,
            epoch,
        };
        let order = epoch_order(train_features.rows(), &plan);
        let mut acc: BTreeMap<ModelId, ModelAccumulator> = BTreeMap::new();
        let (mut task_sum, mut alpha_sum, mut distill_sum, mut total_sum) = (0.0, 0.0, 0.0, 0.0);
        let mut max_rank_sum_error = 0.0f64;
        let mut active_set_violations = 0;
        let mut batches = 0;

        for (b, rows) in order.chunks(optimizer.batch_size).enumerate() {
            batches += 1;
            let ctx = StepContext { epoch, batch: b };
            let (logits, cache) = student.forward_cached(&train_features.select_rows(rows))?;
            if !logits.is_finite() {
                return Err(CkdError::NonFinite {
                    what: "student logits",
                    epoch,
                    batch: b,
                });
            }
            let batch_mentors: BTreeMap<ModelId, Matrix> =
                mentor_logits.iter().map(|(id, m)| (*id, m.select_rows(rows))).collect();
            let task_loss = task.task_loss(rows, &logits)?;

            let (ranks, active) = if ranked {
                let mut weights = BTreeMap::new();
                weights.insert(ModelId::Student, task.batch_weight(rows, &logits)?);
                for (id, m) in &batch_mentors {
                    weights.insert(*id, task.batch_weight(rows, m)?);
                }
                let ranks = rank_with(ranking, &weights, lambda)?;
                let active = select_active(&ranks, ModelId::Student)?;
                max_rank_sum_error = max_rank_sum_error.max((ranks.rank_sum() - rank_sum_target).abs());
                if !active_set_consistent(ranking, &ranks, &active) {
                    active_set_violations += 1;
                }
                (Some(ranks), Some(active))
            } else {
                (None, None)
            };

            let scored = assemble_batch_loss(
                &task_loss,
                &mentor_ids,
                ranks.as_ref(),
                active.as_ref(),
                mentoring,
                |id, tau| task.distill(&batch_mentors[&id], &logits, tau),
            )?;
            if !scored.loss.value.is_finite() {
                return Err(CkdError::NonFinite {
                    what: "loss",
                    epoch,
                    batch: b,
                });
            }
            let grads = student.backward_cached(&cache, &scored.loss.grad)?;
            sgd_step(&mut student, &grads, &mut state, lr, optimizer, ctx)?;

            let bd = &scored.breakdown;
            task_sum += bd.task_loss;
            alpha_sum += bd.alpha;
            distill_sum += bd.distill_sum();
            total_sum += bd.total;
            if let Some(ranks) = &ranks {
                let student_weight = ranks.entries[&ModelId::Student].weight;
                for (id, entry) in &ranks.entries {
                    let a = acc.entry(*id).or_default();
                    a.weight += entry.weight;
                    a.rank += entry.rank;
                    a.loss += if id.is_student() {
                        task_loss.value
                    } else {
                        task.task_loss(rows, &batch_mentors[id])?.value
                    };
                    if entry.weight > student_weight {
                        a.above_student += 1;
                    }
                }
                for term in &bd.mentors {
                    let a = acc.entry(term.id).or_default();
                    a.taught += 1;
                    a.temperature += term.temperature;
                }
            }
        }

        let nb = batches as f64;
        let models = acc
            .into_iter()
            .map(|(id, a)| ModelEpochStats {
                id,
                mean_weight: a.weight / nb,
                mean_rank: a.rank / nb,
                mean_loss: a.loss / nb,
                mean_temperature: (a.taught > 0).then(|| a.temperature / a.taught as f64),
                active_fraction: (!id.is_student()).then(|| a.taught as f64 / nb),
                batches_above_student: a.above_student,
            })
            .collect();
        logs.push(EpochLog {
            epoch,
            learning_rate: lr,
            train: task.score(Split::Train, &student.forward(train_features)?)?,
            test: task.score(Split::Test, &student.forward(task.features(Split::Test))?)?,
            batches,
            models,
            mean_task_loss: task_sum / nb,
            mean_alpha: alpha_sum / nb,
            mean_distill_loss: distill_sum / nb,
            mean_total_loss: total_sum / nb,
            max_rank_sum_error: ranked.then_some(max_rank_sum_error),
            active_set_violations,
        });
    }

    let best = logs
        .iter()
        .enumerate()
        .fold(None::<(usize, Accuracy)>, |best, (i, l)| match best {
            Some((_, b)) if b.top1 >= l.test.top1 => best,
            _ => Some((i, l.test)),
        });
    let result = RunResult {
        final_train: task.score(Split::Train, &student.forward(train_features)?)?,
        final_test: task.score(Split::Test, &student.forward(task.features(Split::Test))?)?,
        best_epoch: best.map(|b| b.0),
        best_test: best.map(|b| b.1),
        logs,
        config: RunConfigEcho {
            mentoring: mentoring.clone(),
            optimizer: optimizer.clone(),
            ranking,
            mentor_count: mentors.len(),
        },
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((student, result))
}

/// Cross-entropy training from `init(spec, optimizer.seed)`.
pub fn pretrain_mentor(
    spec: &MlpSpec,
    data: &TrainTest,
    optimizer: &OptimizerConfig,
) -> Result<(ModelParams, RunResult)> {
    let init = ModelParams::init(spec, optimizer.seed)?;
    train_with_task(
        &ClassificationTask::new(data),
        init,
        &[],
        &MentoringConfig::with_mode(MentoringMode::Nokd),
        RankingMethod::Proportional,
        optimizer,
    )
}

/// Distills the classroom's student from its frozen mentors, starting from
/// `classroom.student`. The mentors are only read.
pub fn distill_student(
    classroom: &Classroom,
    data: &TrainTest,
    mentoring: &MentoringConfig,
    optimizer: &OptimizerConfig,
    ranking: RankingMethod,
) -> Result<(ModelParams, RunResult)> {
    train_with_task(
        &ClassificationTask::new(data),
        classroom.student.clone(),
        &classroom_mentors(classroom),
        mentoring,
        ranking,
        optimizer,
    )
}

// ---------------------------------------------------------------------------
// Temperature grid search
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    pub best_temperature: f64,
    /// `(temperature, final test top-1)` in candidate order.
    pub table: Vec<(f64, f64)>,
}

/// Runs `runner` for every candidate temperature and keeps the best final accuracy;
/// ties go to the smaller temperature.
pub fn temperature_grid_search<F>(candidates: &[f64], mut runner: F) -> Result<GridSearchResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    if candidates.is_empty() {
        return Err(CkdError::invalid(
            "temperature grid search needs at least one candidate",
        ));
    }
    let table = candidates
        .iter()
        .map(|&t| Ok((t, runner(t)?)))
        .collect::<Result<Vec<_>>>()?;
    let best = table
        .iter()
        .copied()
        .reduce(|best, cur| {
            if cur.1 > best.1 || (cur.1 == best.1 && cur.0 < best.0) {
                cur
            } else {
                best
            }
        })
        .expect("non-empty");
    Ok(GridSearchResult {
        best_temperature: best.0,
        table,
    })
}

/// Grid-search runner: fixed-temperature classroom distillation, returning final test top-1.
pub fn fixed_temperature_runner<'a>(
    classroom: &'a Classroom,
    data: &'a TrainTest,
    base: &'a MentoringConfig,
    optimizer: &'a OptimizerConfig,
    ranking: RankingMethod,
) -> impl FnMut(f64) -> Result<f64> + 'a {
    move |temperature| {
        let cfg = MentoringConfig {
            base_temperature: temperature,
            mode: MentoringMode::ClassroomFixed,
            ..base.clone()
        };
        distill_student(classroom, data, &cfg, optimizer, ranking).map(|(_, r)| r.final_test.top1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_blobs, split};
    use crate::model::{build_classroom, ClassroomSeeds, ClassroomSpec};

    #[test]
    fn perfect_and_uniform_logits() {
        let labels = LabelVector::new(vec![0, 2, 1, 2]);
        let mut logits = Matrix::zeros(4, 3);
        for (i, &l) in labels.as_slice().iter().enumerate() {
            logits[(i, l)] = 5.0;
        }
        assert_eq!(accuracy_from_logits(&logits, &labels).unwrap().top1, 100.0);
        let uniform = Matrix::zeros(4, 3);
        assert_eq!(accuracy_from_logits(&uniform, &labels).unwrap().top1, 25.0);
        assert_eq!(accuracy_from_logits(&uniform, &labels).unwrap().top5, None);
        assert_eq!(predict(&uniform), vec![0; 4]);
    }

    #[test]
    fn top5_counts_label_among_five_largest() {
        let logits = Matrix::from_rows(&[vec![6.0, 5.0, 4.0, 3.0, 2.0, 1.0], vec![0.0; 6]]).unwrap();
        let acc = accuracy_from_logits(&logits, &vec![4, 5].into()).unwrap();
        assert_eq!(acc.top1, 0.0);
        // row 2: all tied, label 5 sits at position 5 under the index tie rule
        assert_eq!(acc.top5, Some(50.0));
    }

    #[test]
    fn per_class_gain_hand_count() {
        let labels = LabelVector::new(vec![0, 0, 1, 1, 2, 2]);
        let base = PerClassAccuracy::from_predictions(&[0, 1, 1, 1, 0, 0], &labels, 3).unwrap();
        let dist = PerClassAccuracy::from_predictions(&[0, 0, 1, 0, 2, 0], &labels, 3).unwrap();
        let gain = per_class_gain(&base, &dist).unwrap();
        assert_eq!(gain.deltas, vec![50.0, -50.0, 50.0]);
        assert_eq!((gain.improved, gain.degraded, gain.unchanged), (2, 1, 0));

        let same = per_class_gain(&base, &base).unwrap();
        assert!(same.deltas.iter().all(|&d| d == 0.0));
        assert_eq!(same.unchanged, 3);

        let other = PerClassAccuracy::from_predictions(&[0], &vec![0].into(), 2).unwrap();
        assert!(per_class_gain(&base, &other).is_err());
    }

    #[test]
    fn grid_search_rules() {
        let one = temperature_grid_search(&[4.0], |_| Ok(50.0)).unwrap();
        assert_eq!(one.best_temperature, 4.0);
        let tie = temperature_grid_search(&[8.0, 2.0, 4.0], |t| Ok(if t > 3.0 { 60.0 } else { 55.0 })).unwrap();
        assert_eq!(tie.best_temperature, 4.0);
        assert!(temperature_grid_search(&[], |_| Ok(0.0)).is_err());
    }

    fn tiny_data() -> TrainTest {
        split(&generate_blobs(3, 30, 2, 0.6, 2).unwrap(), 0.8, 1).unwrap()
    }

    fn tiny_opt(epochs: usize) -> OptimizerConfig {
        OptimizerConfig {
            total_epochs: epochs,
            warmup_epochs: 0,
            batch_size: 8,
            seed: 3,
            ..OptimizerConfig::desk()
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let spec = MlpSpec::new(vec![2, 8, 3]).unwrap();
        let (params, result) = pretrain_mentor(&spec, &tiny_data(), &tiny_opt(0)).unwrap();
        assert_eq!(params, ModelParams::init(&spec, 3).unwrap());
        assert!(result.logs.is_empty());
    }

    #[test]
    fn distillation_leaves_mentors_untouched() {
        let spec = ClassroomSpec {
            student: MlpSpec::new(vec![2, 4, 3]).unwrap(),
            teacher: MlpSpec::new(vec![2, 16, 3]).unwrap(),
            peers: vec![MlpSpec::new(vec![2, 8, 3]).unwrap()],
        };
        let room = build_classroom(
            &spec,
            &ClassroomSeeds {
                student: 3,
                teacher: 1,
                peers: vec![2],
            },
        )
        .unwrap();
        let before = room.clone();
        let (_, result) = distill_student(
            &room,
            &tiny_data(),
            &MentoringConfig::default(),
            &tiny_opt(2),
            RankingMethod::Proportional,
        )
        .unwrap();
        assert_eq!(room, before);
        assert_eq!(result.logs.len(), 2);
        let csv = result.epoch_csv();
        assert!(csv.starts_with(EPOCH_CSV_HEADER));
        // 3 train rows + 1 test row per epoch
        assert_eq!(csv.lines().count(), 1 + 2 * 4);
    }
}
