//! Training objective, optimizer, training loop and cross-validation.

pub mod crossval;
pub mod losses;
pub mod optim;
pub mod train;

pub use crossval::{crossval, make_folds, CvReport, FoldSplit};
pub use losses::{
    entropy_from_logits, loss_ce, loss_entropy, loss_mi, loss_sparsity, total_loss, total_loss_value, LossParts,
    LossWeights,
};
pub use optim::{Adam, AdamConfig};
pub use train::{evaluate, predict, subject_loss, train, TrainConfig, TrainOutcome};
