//! The prompt evaluator: featurization, the trainable scorer, the
//! pairwise preference loss, and the training loop.

pub mod features;
pub mod loss;
pub mod model;
pub mod train;

pub use features::{qc_text, FeatureVector, Featurizer, FEATURE_RECIPE};
pub use loss::{preference_loss, LossGrad, LossMode, LITERAL_FLOOR};
pub use model::{ScoringModel, DEFAULT_HIDDEN};
pub use train::{
    batch_loss_and_grad, featurize_tuples, pairwise_accuracy, train, Checkpoint, TrainConfig,
};
