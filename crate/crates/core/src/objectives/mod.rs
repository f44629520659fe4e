//! Training objectives on toy conditional models: exact losses and gradients
//! by enumeration, sampled gradient estimators, and an SGD loop.

pub mod estimators;
pub mod losses;
pub mod model;
pub mod train;

pub use estimators::{grad_raml_stochastic, grad_rl_stochastic, Baseline, GradEstimate, RlEstimator};
pub use losses::{
    exact_gradient, loss_ml, loss_raml, loss_rl, predict, LossReport, LossTables, Method, TargetTable, Task,
    TrainingSet,
};
pub use model::{ContextDist, Model, ModelKind, OutputSpace};
pub use train::{train, GradMode, RunRecord, TrainConfig, TrainOutcome};
