//! Proxy active learning for sequence labeling.
//!
//! A small proxy labeler is retrained every iteration to pick the next
//! annotation batch, while a larger main labeler trains in the background
//! during annotation and feeds distillation signals back into the proxy.

pub mod checksum;
pub mod data;
pub mod error;
pub mod eval;
pub mod labels;
pub mod model;
pub mod orchestrator;
pub mod selection;
pub mod sentence;

pub use error::{Error, Result};
pub use labels::{LabelSet, TagId, TokenSpan};
pub use sentence::{Sentence, TagSequence};
