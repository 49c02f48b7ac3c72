//! Transformer-CRF style sequence labeler: encoders, the CRF layer, the task
//! and distillation losses, training and checkpoints.

pub mod checkpoint;
pub mod crf;
pub mod distill;
pub mod encoder;
pub mod labeler;
pub mod train;

pub use crf::{CrfOutputs, Marginals};
pub use distill::{distillation_loss, DistillationLoss, DistillationSignal, LossConfig, TransitionDistillation};
pub use encoder::{encode, AdapterConfig, BackendKind, Encoder, EncoderBackend, ParamGroup};
pub use labeler::{emission_scores, total_loss, SequenceLabeler, TrainingMeta, UnaryActivation};
pub use train::{train, TrainConfig, TrainingReport};
