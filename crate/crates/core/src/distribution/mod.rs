//! The user-vocabulary softmax head, its losses, and the training loop.

mod head;
mod optim;
mod train;
mod vocab;

pub use head::{
    complement, distribution_loss, distribution_loss_grad, distribution_loss_vectorized,
    guiding_loss, guiding_loss_grad, guiding_loss_row, logits, predict_distribution,
    sample_negatives, sample_negatives_with, softmax, total_loss, DistributionGrad,
    UserDistribution,
};
pub use optim::{AdamW, AdamWConfig};
pub use train::{evaluate_losses, train, EpochLog, ItemLoss, TrainConfig, TrainOutcome};
pub use vocab::UserVocabulary;
