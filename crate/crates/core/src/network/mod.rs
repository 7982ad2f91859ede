//! MSNet assembly: configuration, the forward/backward pipeline, training,
//! evaluation and checkpoints.
//!
//! Per sample, the network runs BiMap/ReEig pairs over the backbone dims, then one
//! branch per effective scale (BiMap, ReEig, window selection, LogEig on every
//! window, lower-triangle concatenation). Branch vectors are concatenated in
//! ascending scale order and fed to a linear classifier.

mod checkpoint;
mod config;
mod model;
mod train;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{resolve_scales, MsNetConfig, Variant};
pub use model::{
    argmax, backward, backward_sample, backward_with, batch_loss, feature_dim, forward,
    forward_sample, forward_with, tensor_specs, Activations, BatchGrad, BranchTape, ForwardTape,
    Gradients, MsNetModel, SampleGrad, SampleTape, TensorSpec,
};
pub use train::{
    evaluate, evaluate_with, predict, thread_pool, train, EpochRecord, Evaluation, ThreadPool,
    Trainer,
};
