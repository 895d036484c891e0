//! Knowledge filtering: per-batch model weights, normalized ranks and the active mentor set.
//!
//! For every classroom model `m` the batch weight `w_m` is the mean probability it
//! assigns to the true class. Ranks rescale the weights so they sum to `lambda`
//! (proportional ranking) or place models on an evenly spaced ladder (uniform
//! ranking). Mentors ranked strictly above the student are active for the batch.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CkdError, Result};
use crate::loss::softmax;
use crate::matrix::{LabelVector, Matrix};

/// Classroom member. The derived order (student, teacher, peers by index) is the
/// stable id order used for tie-breaking and deterministic summation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelId {
    Student,
    Teacher,
    /// 1-based peer index.
    Peer(u16),
}

impl ModelId {
    pub fn is_student(self) -> bool {
        self == ModelId::Student
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelId::Student => write!(f, "student"),
            ModelId::Teacher => write!(f, "teacher"),
            ModelId::Peer(i) => write!(f, "peer{i}"),
        }
    }
}

impl FromStr for ModelId {
    type Err = CkdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "student" => Ok(ModelId::Student),
            "teacher" => Ok(ModelId::Teacher),
            _ => s
                .strip_prefix("peer")
                .and_then(|i| i.parse().ok())
                .filter(|&i| i > 0)
                .map(ModelId::Peer)
                .ok_or_else(|| CkdError::invalid(format!("unknown model id `{s}`"))),
        }
    }
}

/// Logits of every classroom model on one batch, keyed by model id.
#[derive(Debug, Clone)]
pub struct ClassroomOutputs {
    logits: BTreeMap<ModelId, Matrix>,
}

impl ClassroomOutputs {
    pub fn new(logits: BTreeMap<ModelId, Matrix>) -> Result<Self> {
        let student = logits
            .get(&ModelId::Student)
            .ok_or_else(|| CkdError::invalid("classroom outputs lack the student"))?;
        for (id, m) in &logits {
            if m.shape() != student.shape() {
                return Err(CkdError::ShapeMismatch {
                    context: "ClassroomOutputs::new",
                    expected: format!("{}x{}", student.rows(), student.cols()),
                    actual: format!("{}x{} for {id}", m.rows(), m.cols()),
                });
            }
        }
        Ok(ClassroomOutputs { logits })
    }

    pub fn get(&self, id: ModelId) -> Option<&Matrix> {
        self.logits.get(&id)
    }

    pub fn student(&self) -> &Matrix {
        &self.logits[&ModelId::Student]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ModelId, &Matrix)> {
        self.logits.iter().map(|(&id, m)| (id, m))
    }

    pub fn model_count(&self) -> usize {
        self.logits.len()
    }

    pub fn mentor_count(&self) -> usize {
        self.logits.len() - 1
    }
}

/// How batch weights are turned into ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankingMethod {
    /// `r_m = lambda * w_m / sum(w)`.
    #[default]
    #[serde(alias = "a")]
    Proportional,
    /// `r_m = lambda * (position of m in ascending weight order)`, positions 1-based.
    #[serde(alias = "b")]
    Uniform,
}

impl RankingMethod {
    pub fn label(self) -> &'static str {
        match self {
            RankingMethod::Proportional => "method-a",
            RankingMethod::Uniform => "method-b",
        }
    }
}

impl fmt::Display for RankingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Default step of the uniform rank ladder.
pub const UNIFORM_RANK_STEP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankEntry {
    pub weight: f64,
    pub rank: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankTable {
    pub entries: BTreeMap<ModelId, RankEntry>,
    pub lambda: f64,
}

impl RankTable {
    pub fn rank(&self, id: ModelId) -> Option<f64> {
        self.entries.get(&id).map(|e| e.rank)
    }

    pub fn weight(&self, id: ModelId) -> Option<f64> {
        self.entries.get(&id).map(|e| e.weight)
    }

    pub fn rank_sum(&self) -> f64 {
        self.entries.values().map(|e| e.rank).sum()
    }
}

/// A mentor ranked above the student, with its relative rank gap `(r_m - r_s) / r_m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveMentor {
    pub id: ModelId,
    pub rank: f64,
    pub rank_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActiveSet {
    /// In model-id order.
    pub mentors: Vec<ActiveMentor>,
}

impl ActiveSet {
    pub fn is_empty(&self) -> bool {
        self.mentors.is_empty()
    }

    pub fn len(&self) -> usize {
        self.mentors.len()
    }

    pub fn contains(&self, id: ModelId) -> bool {
        self.mentors.iter().any(|m| m.id == id)
    }

    pub fn ids(&self) -> Vec<ModelId> {
        self.mentors.iter().map(|m| m.id).collect()
    }
}

/// Softmax probability of the true class for every row.
pub fn correct_class_prob(logits: &Matrix, labels: &LabelVector) -> Result<Vec<f64>> {
    labels.validate_for(logits)?;
    let probs = softmax(logits, 1.0)?;
    Ok((0..logits.rows()).map(|i| probs[(i, labels[i])]).collect())
}

/// Mean of the per-sample true-class probabilities.
pub fn batch_weight(correct_probs: &[f64]) -> Result<f64> {
    if correct_probs.is_empty() {
        return Err(CkdError::invalid("batch weight of an empty batch"));
    }
    Ok(correct_probs.iter().sum::<f64>() / correct_probs.len() as f64)
}

/// Batch weight of every model in the classroom.
pub fn classroom_weights(outputs: &ClassroomOutputs, labels: &LabelVector) -> Result<BTreeMap<ModelId, f64>> {
    outputs
        .iter()
        .map(|(id, logits)| Ok((id, batch_weight(&correct_class_prob(logits, labels)?)?)))
        .collect()
}

fn check_weights(weights: &BTreeMap<ModelId, f64>, lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(CkdError::invalid(format!("lambda must be positive, got {lambda}")));
    }
    if weights.is_empty() {
        return Err(CkdError::invalid("no models to rank"));
    }
    if let Some((id, w)) = weights.iter().find(|(_, w)| !(w.is_finite() && **w >= 0.0)) {
        return Err(CkdError::invalid(format!(
            "weight of {id} must be non-negative, got {w}"
        )));
    }
    if weights.values().sum::<f64>() <= 0.0 {
        return Err(CkdError::invalid("zero total weight"));
    }
    Ok(())
}

/// Proportional ranks: `r_m = lambda * w_m / sum_c w_c`.
pub fn rank_scores(weights: &BTreeMap<ModelId, f64>, lambda: f64) -> Result<RankTable> {
    check_weights(weights, lambda)?;
    let total: f64 = weights.values().sum();
    let entries = weights
        .iter()
        .map(|(&id, &weight)| {
            (
                id,
                RankEntry {
                    weight,
                    rank: lambda * weight / total,
                },
            )
        })
        .collect();
    Ok(RankTable { entries, lambda })
}

/// Uniform ranks: sort ascending by weight (ties in id order) and give the model at
/// 1-based position `j` the rank `lambda * j`.
pub fn rank_scores_method_b(weights: &BTreeMap<ModelId, f64>, lambda: f64) -> Result<RankTable> {
    check_weights(weights, lambda)?;
    let mut order: Vec<(ModelId, f64)> = weights.iter().map(|(&id, &w)| (id, w)).collect();
    // stable sort keeps id order among equal weights
    order.sort_by(|a, b| a.1.total_cmp(&b.1));
    let entries = order
        .into_iter()
        .enumerate()
        .map(|(pos, (id, weight))| {
            (
                id,
                RankEntry {
                    weight,
                    rank: lambda * (pos + 1) as f64,
                },
            )
        })
        .collect();
    Ok(RankTable { entries, lambda })
}

pub fn rank_with(method: RankingMethod, weights: &BTreeMap<ModelId, f64>, lambda: f64) -> Result<RankTable> {
    match method {
        RankingMethod::Proportional => rank_scores(weights, lambda),
        RankingMethod::Uniform => rank_scores_method_b(weights, lambda),
    }
}

/// Mentors whose rank strictly exceeds the student's.
pub fn select_active(table: &RankTable, student: ModelId) -> Result<ActiveSet> {
    let student_rank = table
        .rank(student)
        .ok_or_else(|| CkdError::invalid(format!("{student} missing from rank table")))?;
    let mentors = table
        .entries
        .iter()
        .filter(|(&id, e)| id != student && e.rank > student_rank)
        .map(|(&id, e)| ActiveMentor {
            id,
            rank: e.rank,
            rank_gap: (e.rank - student_rank) / e.rank,
        })
        .collect();
    Ok(ActiveSet { mentors })
}
