//! Networks, the batched training pass and single-sample inference.

pub mod checkpoint;
pub mod forward;
pub mod infer;
pub mod network;
pub mod train;

pub use checkpoint::{load_network, save, Checkpoint, Int8Weights};
pub use forward::{backward, forward, sgd_step, softmax_cross_entropy, Dropout, ForwardCache, LayerCache, LayerGrads, Masking};
pub use infer::{argmax, infer, Inference, KernelPath};
pub use network::{
    build_network, LayerKind, LayerKindTag, LayerParams, LayerShape, LayerSpec, NetName, Network, TrainingMeta,
};
pub use train::{evaluate, finetune_dasnet, gather, train_baseline, EpochRecord, FinetuneReport, TrainConfig, TrainReport};
