//! Training loop, teacher-to-student distillation, self-distillation and
//! teacher-assistant sequences.

pub mod record;
pub mod ta;
pub mod train;

pub use record::{csv_rows, RunRecord, StageRecord, CSV_HEADER};
pub use ta::{enumerate_ta_paths, run_ta_sequence, Experiment, TAPath};
pub use train::{
    distill_student, mean_objective, self_distill, teacher_outputs, train_from, train_model,
    SelfDistillation, TeacherOutput, TrainConfig, TrainedModel,
};
