//! Multi-mentor knowledge distillation on dense toy classifiers.
//!
//! A classroom is a trainable student plus frozen mentors (a teacher and any
//! number of peers). Every batch, [`ranking`] scores each model by the mean
//! probability it gives the true class and keeps the mentors ranked above the
//! student; [`mentoring`] distills from those mentors with rank weights and
//! per-mentor temperatures. [`trainer`] runs the loop, [`pose`] adapts the same
//! pipeline to coordinate-classification keypoint heads and [`experiment`]
//! drives configured runs and ablations.

pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod loss;
pub mod matrix;
pub mod mentoring;
pub mod model;
pub mod optim;
pub mod pose;
pub mod ranking;
pub mod trainer;

pub use data::{Dataset, TrainTest};
pub use error::{CkdError, Result};
pub use loss::LossWithGrad;
pub use matrix::{LabelVector, Matrix};
pub use mentoring::{LossBreakdown, MentoringConfig, MentoringMode};
pub use model::{Classroom, ClassroomSpec, MlpSpec, ModelParams};
pub use optim::OptimizerConfig;
pub use ranking::{ActiveSet, ClassroomOutputs, ModelId, RankTable, RankingMethod};
pub use trainer::{Accuracy, EpochLog, RunResult};
