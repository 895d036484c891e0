//! Mentoring: per-mentor adaptive temperature and the rank-weighted classroom loss,
//! together with the AVER, single-teacher KD and NOKD baselines.
//!
//! All gradients are with respect to the student logits. Ranks and temperatures are
//! treated as constants of the batch.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CkdError, Result};
use crate::loss::{cross_entropy, kl_distill, LossWithGrad};
use crate::matrix::{LabelVector, Matrix};
use crate::ranking::{ActiveSet, ClassroomOutputs, ModelId, RankTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MentoringMode {
    /// Rank-filtered mentors with per-mentor temperature `1 + gap * tau`.
    ClassroomAdaptive,
    /// Rank-filtered mentors, every active mentor at the base temperature.
    ClassroomFixed,
    /// Every mentor at the base temperature with unit weight.
    Aver,
    /// Task loss plus distillation from the teacher alone.
    SingleKd,
    /// Task loss only.
    Nokd,
}

impl MentoringMode {
    pub const ALL: [MentoringMode; 5] = [
        MentoringMode::ClassroomAdaptive,
        MentoringMode::ClassroomFixed,
        MentoringMode::Aver,
        MentoringMode::SingleKd,
        MentoringMode::Nokd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MentoringMode::ClassroomAdaptive => "classroom-adaptive",
            MentoringMode::ClassroomFixed => "classroom-fixed",
            MentoringMode::Aver => "aver",
            MentoringMode::SingleKd => "single-kd",
            MentoringMode::Nokd => "nokd",
        }
    }

    pub fn is_classroom(self) -> bool {
        matches!(self, MentoringMode::ClassroomAdaptive | MentoringMode::ClassroomFixed)
    }
}

impl fmt::Display for MentoringMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MentoringMode {
    type Err = CkdError;

    fn from_str(s: &str) -> Result<Self> {
        MentoringMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| CkdError::invalid(format!("unknown mentoring mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MentoringConfig {
    pub base_temperature: f64,
    pub beta: f64,
    pub delta: f64,
    pub mode: MentoringMode,
}

impl Default for MentoringConfig {
    fn default() -> Self {
        MentoringConfig {
            base_temperature: 12.0,
            beta: 1.0,
            delta: 0.0,
            mode: MentoringMode::ClassroomAdaptive,
        }
    }
}

impl MentoringConfig {
    pub fn with_mode(mode: MentoringMode) -> Self {
        MentoringConfig {
            mode,
            ..MentoringConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_temperature > 0.0 && self.base_temperature.is_finite()) {
            return Err(CkdError::invalid(format!(
                "base temperature must be positive, got {}",
                self.base_temperature
            )));
        }
        for (name, v) in [("beta", self.beta), ("delta", self.delta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CkdError::invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// `1 + rank_gap * base_temperature`.
pub fn adapt_temperature(rank_gap: f64, base_temperature: f64) -> Result<f64> {
    if !(rank_gap >= 0.0 && rank_gap.is_finite()) {
        return Err(CkdError::invalid(format!(
            "rank gap must be non-negative, got {rank_gap}"
        )));
    }
    if !(base_temperature > 0.0 && base_temperature.is_finite()) {
        return Err(CkdError::invalid(format!(
            "base temperature must be positive, got {base_temperature}"
        )));
    }
    Ok(1.0 + rank_gap * base_temperature)
}

/// One mentor's contribution to the loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MentorTerm {
    pub id: ModelId,
    pub gamma: f64,
    pub temperature: f64,
    pub distill: f64,
}

/// The parts of a batch loss; `total` is recomposed from them by [`LossBreakdown::recompose`].
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub task_loss: f64,
    pub alpha: f64,
    pub beta: f64,
    pub mentors: Vec<MentorTerm>,
    pub delta: f64,
    /// Unweighted `L_task + L_distill(teacher, student; 1)`; zero when `delta` is zero.
    pub teacher_kd: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn distill_sum(&self) -> f64 {
        self.mentors.iter().map(|m| m.gamma * m.distill).sum()
    }

    pub fn recompose(&self) -> f64 {
        let classroom = self.alpha * self.task_loss + self.beta * self.distill_sum();
        if self.delta == 0.0 {
            classroom
        } else {
            self.delta * self.teacher_kd + classroom
        }
    }
}

/// A loss with its gradient and how it was assembled.
#[derive(Debug, Clone)]
pub struct ScoredLoss {
    pub loss: LossWithGrad,
    pub breakdown: LossBreakdown,
}

fn mentor_logits(outputs: &ClassroomOutputs, id: ModelId) -> Result<&Matrix> {
    outputs
        .get(id)
        .ok_or_else(|| CkdError::invalid(format!("mentor {id} missing from classroom outputs")))
}

/// Rank-weighted assembly shared by every output head.
///
/// `task` is the student's task loss; `distill(id, tau)` returns the distillation
/// loss from mentor `id` at temperature `tau`, both with gradients in the same shape.
pub fn assemble_classroom<F>(
    task: &LossWithGrad,
    ranks: &RankTable,
    active: &ActiveSet,
    config: &MentoringConfig,
    mut distill: F,
) -> Result<ScoredLoss>
where
    F: FnMut(ModelId, f64) -> Result<LossWithGrad>,
{
    config.validate()?;
    if !config.mode.is_classroom() {
        return Err(CkdError::invalid(format!(
            "classroom loss requires a classroom mode, got {}",
            config.mode
        )));
    }
    let alpha = ranks
        .rank(ModelId::Student)
        .ok_or_else(|| CkdError::invalid("student missing from rank table"))?;

    let mut terms = Vec::with_capacity(active.len());
    let mut distill_grad = LossWithGrad::zero(task.grad.rows(), task.grad.cols());
    for mentor in &active.mentors {
        let temperature = match config.mode {
            MentoringMode::ClassroomAdaptive => adapt_temperature(mentor.rank_gap, config.base_temperature)?,
            _ => config.base_temperature,
        };
        let term = distill(mentor.id, temperature)?;
        distill_grad.accumulate(&term, mentor.rank)?;
        terms.push(MentorTerm {
            id: mentor.id,
            gamma: mentor.rank,
            temperature,
            distill: term.value,
        });
    }

    let mut loss = task.scaled(alpha);
    loss.grad.add_scaled(&distill_grad.grad, config.beta)?;
    let mut breakdown = LossBreakdown {
        task_loss: task.value,
        alpha,
        beta: config.beta,
        mentors: terms,
        delta: 0.0,
        teacher_kd: 0.0,
        total: 0.0,
    };
    breakdown.total = breakdown.recompose();
    loss.value = breakdown.total;
    Ok(ScoredLoss { loss, breakdown })
}

/// Adds `delta * (task + teacher_kd)` to a classroom loss; a zero `delta` returns it unchanged.
pub fn add_teacher_term(
    classroom: ScoredLoss,
    task: &LossWithGrad,
    teacher_kd: Option<&LossWithGrad>,
    config: &MentoringConfig,
) -> Result<ScoredLoss> {
    if config.delta == 0.0 {
        return Ok(classroom);
    }
    let kd = teacher_kd.ok_or_else(|| CkdError::invalid("delta > 0 requires teacher logits"))?;
    let ScoredLoss {
        mut loss,
        mut breakdown,
    } = classroom;
    loss.grad.add_scaled(&task.grad, config.delta)?;
    loss.grad.add_scaled(&kd.grad, config.delta)?;
    breakdown.delta = config.delta;
    breakdown.teacher_kd = task.value + kd.value;
    breakdown.total = breakdown.recompose();
    loss.value = breakdown.total;
    Ok(ScoredLoss { loss, breakdown })
}

/// `L_task + sum over mentors of L_distill(mentor, student; tau)`, all with unit weight.
pub fn assemble_unweighted<F>(
    task: &LossWithGrad,
    mentors: &[ModelId],
    temperature: f64,
    mut distill: F,
) -> Result<ScoredLoss>
where
    F: FnMut(ModelId, f64) -> Result<LossWithGrad>,
{
    let mut loss = task.clone();
    let mut terms = Vec::with_capacity(mentors.len());
    for &id in mentors {
        let term = distill(id, temperature)?;
        loss.grad.add_scaled(&term.grad, 1.0)?;
        terms.push(MentorTerm {
            id,
            gamma: 1.0,
            temperature,
            distill: term.value,
        });
    }
    let mut breakdown = LossBreakdown {
        task_loss: task.value,
        alpha: 1.0,
        beta: 1.0,
        mentors: terms,
        delta: 0.0,
        teacher_kd: 0.0,
        total: 0.0,
    };
    breakdown.total = breakdown.recompose();
    loss.value = breakdown.total;
    Ok(ScoredLoss { loss, breakdown })
}

/// Loss of one batch under `config.mode` for any output head.
///
/// `mentors` lists the classroom's mentors in id order. `ranks` and `active` are
/// required by the classroom modes and ignored otherwise.
pub fn assemble_batch_loss<F>(
    task: &LossWithGrad,
    mentors: &[ModelId],
    ranks: Option<&RankTable>,
    active: Option<&ActiveSet>,
    config: &MentoringConfig,
    mut distill: F,
) -> Result<ScoredLoss>
where
    F: FnMut(ModelId, f64) -> Result<LossWithGrad>,
{
    config.validate()?;
    let has_teacher = mentors.contains(&ModelId::Teacher);
    match config.mode {
        MentoringMode::ClassroomAdaptive | MentoringMode::ClassroomFixed => {
            let (ranks, active) = ranks
                .zip(active)
                .ok_or_else(|| CkdError::invalid("classroom modes need ranks and an active set"))?;
            let classroom = assemble_classroom(task, ranks, active, config, &mut distill)?;
            let teacher_kd = if config.delta > 0.0 && has_teacher {
                Some(distill(ModelId::Teacher, 1.0)?)
            } else {
                None
            };
            add_teacher_term(classroom, task, teacher_kd.as_ref(), config)
        }
        MentoringMode::Aver => {
            if mentors.is_empty() {
                return Err(CkdError::invalid("AVER needs at least one mentor"));
            }
            assemble_unweighted(task, mentors, config.base_temperature, distill)
        }
        MentoringMode::SingleKd => {
            if !has_teacher {
                return Err(CkdError::invalid("single-teacher KD needs a teacher"));
            }
            assemble_unweighted(task, &[ModelId::Teacher], config.base_temperature, distill)
        }
        MentoringMode::Nokd => assemble_unweighted(task, &[], 1.0, distill),
    }
}

/// `alpha * L_task + beta * sum_{active} gamma_m * L_distill(mentor, student; tau_m)`
/// with `alpha = r_s` and `gamma_m = r_m`.
pub fn classroom_loss(
    student_logits: &Matrix,
    outputs: &ClassroomOutputs,
    ranks: &RankTable,
    active: &ActiveSet,
    labels: &LabelVector,
    config: &MentoringConfig,
) -> Result<ScoredLoss> {
    let task = cross_entropy(student_logits, labels)?.mean;
    assemble_classroom(&task, ranks, active, config, |id, tau| {
        kl_distill(mentor_logits(outputs, id)?, student_logits, tau)
    })
}

/// `delta * (L_task + L_distill(teacher, student; 1)) + L_classroom`.
pub fn total_loss(
    student_logits: &Matrix,
    teacher_logits: Option<&Matrix>,
    classroom: ScoredLoss,
    labels: &LabelVector,
    config: &MentoringConfig,
) -> Result<ScoredLoss> {
    config.validate()?;
    if config.delta == 0.0 {
        return Ok(classroom);
    }
    let teacher = teacher_logits.ok_or_else(|| CkdError::invalid("delta > 0 requires teacher logits"))?;
    let task = cross_entropy(student_logits, labels)?.mean;
    let kd = kl_distill(teacher, student_logits, 1.0)?;
    add_teacher_term(classroom, &task, Some(&kd), config)
}

/// `L_task + sum_{all mentors} L_distill(mentor, student; tau)`.
pub fn aver_loss(
    student_logits: &Matrix,
    outputs: &ClassroomOutputs,
    labels: &LabelVector,
    temperature: f64,
) -> Result<ScoredLoss> {
    let mentors: Vec<ModelId> = outputs.iter().map(|(id, _)| id).filter(|id| !id.is_student()).collect();
    if mentors.is_empty() {
        return Err(CkdError::invalid("AVER needs at least one mentor"));
    }
    let task = cross_entropy(student_logits, labels)?.mean;
    assemble_unweighted(&task, &mentors, temperature, |id, tau| {
        kl_distill(mentor_logits(outputs, id)?, student_logits, tau)
    })
}

/// `L_task + L_distill(teacher, student; tau)`.
pub fn single_kd_loss(
    student_logits: &Matrix,
    teacher_logits: &Matrix,
    labels: &LabelVector,
    temperature: f64,
) -> Result<ScoredLoss> {
    let task = cross_entropy(student_logits, labels)?.mean;
    assemble_unweighted(&task, &[ModelId::Teacher], temperature, |_, tau| {
        kl_distill(teacher_logits, student_logits, tau)
    })
}

/// Plain task loss.
pub fn nokd_loss(student_logits: &Matrix, labels: &LabelVector) -> Result<ScoredLoss> {
    let task = cross_entropy(student_logits, labels)?.mean;
    assemble_unweighted(&task, &[], 1.0, |_, _| unreachable!("no mentors"))
}

/// Classification loss of one training batch under `config.mode`.
pub fn batch_loss(
    outputs: &ClassroomOutputs,
    ranks: Option<&RankTable>,
    active: Option<&ActiveSet>,
    labels: &LabelVector,
    config: &MentoringConfig,
) -> Result<ScoredLoss> {
    let student = outputs.student();
    let mentors: Vec<ModelId> = outputs.iter().map(|(id, _)| id).filter(|id| !id.is_student()).collect();
    let task = cross_entropy(student, labels)?.mean;
    assemble_batch_loss(&task, &mentors, ranks, active, config, |id, tau| {
        kl_distill(mentor_logits(outputs, id)?, student, tau)
    })
}
