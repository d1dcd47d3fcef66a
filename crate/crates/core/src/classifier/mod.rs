//! Linear softmax relationship classifier and its training loop.

mod model;
mod train;

pub use model::{cross_entropy, softmax, Example, Gradients, SoftmaxModel};
pub use train::{
    balanced_batches, batch_digest, scene_batches, train, BatchRecord, EpochRecord, SamplerKind, TrainConfig,
    TrainHistory, INIT_STD,
};
