//! Losses, optimizers, training loops and synthetic paired data.

mod dataset;
pub mod losses;
mod loops;
mod optim;
pub mod synth;

pub use dataset::{PairedDataset, Provenance};
pub use losses::{loss_align, loss_align_value, loss_consistency, loss_ee, loss_finetune, loss_pretrain, loss_recon, LossWeights};
pub use loops::{
    batch_indices, finetune, finetune_with, pretrain, pretrain_gradients, pretrain_optimizer, pretrain_resume,
    FinetuneRecord, PretrainRecord, TrainConfig,
};
pub use optim::{Optimizer, OptimizerKind};
pub use synth::{generate_synthetic_pairs, generate_synthetic_pairs_with, synthetic_clip, Correspondence, SynthConfig};
