//! Domain-adaptive text style transfer.
//!
//! The crate is organised along the pipeline:
//!
//! * [`corpus`]: sentence records, vocabulary, file formats, balanced batching
//!   and the synthetic two-domain corpus generator.
//! * [`autodiff`]: a small reverse-mode tape over `ndarray` matrices.
//! * [`nets`]: GRU encoder/decoder transfer model, convolutional style
//!   classifier and the straight-through token path.
//! * [`objectives`]: reconstruction, style and sequence-to-sequence losses
//!   and the regime objectives composed from them.
//! * [`training`]: classifier pretraining, the transfer regimes, optimizer and
//!   checkpoints.
//! * [`eval`]: BLEU, style/domain accuracy, G-score and report assembly.
//! * [`cli`]: configuration handling and the `dastkit` subcommands.

pub mod autodiff;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod nets;
pub mod objectives;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
