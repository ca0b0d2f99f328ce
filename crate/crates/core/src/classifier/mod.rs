//! Predictor screening and one-vs-rest identification models.

pub mod bank_io;
pub mod design;
pub mod imbalance;
pub mod lasso;
pub mod linalg;
pub mod logistic;
pub mod ovr;
pub mod screen;
pub mod two_stage;

pub use design::Design;
pub use imbalance::{case_control_weights, oversample, oversample_count};
pub use lasso::{auc, fit_lasso_cv, LassoConfig, LassoFit};
pub use logistic::{fit_logistic, penalized_score, FitInfo, LinearFit, LogisticConfig, DEFAULT_RIDGE};
pub use ovr::{ovr_train, ovr_train_partial, Imbalance, ModelBank, ModelKind, ModelMeta, OvrModel, TrainConfig, TrainingSet};
pub use screen::{screen_predictors, RemovalReason, ScreenReport};
pub use two_stage::{shortlist_size, two_stage_rank};
