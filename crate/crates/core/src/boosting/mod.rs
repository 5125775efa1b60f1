//! Component-wise gradient boosting with the Huber loss over penalized base
//! learners, bootstrap early stopping within units, and distillation of the
//! selected learners into a model spec for refitting.

pub mod config;
pub mod distill;
pub mod huber;
pub mod learners;
pub mod mstop;
pub mod path;

pub use config::{run_boosting, write_frequency_csv, write_path_csv, BoostConfig, BoostRun};
pub use distill::{distill, DistilledSpec, KeptLearner};
pub use huber::{huber_gradient, huber_gradient_weighted, huber_loss, huber_risk};
pub use learners::{calibrate_lambda, make_base_learners, BaseLearner, LearnerKind, LearnerSet, SparseDesign};
pub use mstop::{bootstrap_weights, choose_mstop, MstopSearch};
pub use path::{boost, BoostOptions, BoostPath, DeltaRule, IterationRecord, LearnerInfo};
