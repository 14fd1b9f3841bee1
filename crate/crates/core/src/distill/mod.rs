//! Distilling a cached teacher into softmax or evidential students.

mod loss;
mod student;
mod train;

pub use loss::{dirichlet_loss_grad, loss_dirichlet, loss_softmax, softmax_loss_grad, weighted_log_probs};
pub use student::{apply_fixed_alpha0, AdapterSpec, Head, HeadInit, StudentModel};
pub use train::{
    fit_student, init_student, student_nll, train_student, DistillConfig, EarlyStopper, EpochRecord, StopDecision,
    TrainingTrace,
};
