//! Relation Memory Network for text question answering.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] and [`autodiff`]: dense `f64` tensors and a reverse-mode tape.
//! - [`nn`]: parameter store, tape sessions, MLP stacks.
//! - [`embed`]: sentence/question encoders (sum, position, concat, LSTM, GRU).
//! - [`model`]: MLP attention hops with temperature, memory erasure, reasoning.
//! - [`feature_map`]: alternative attention scorers and the pairwise
//!   Relation Network baseline.
//! - [`data`]: bAbI story and dialog parsing, preprocessing, batching.
//! - [`train`]: Adam, training loop, evaluation, checkpoints.
//! - [`report`]: error tables, attention heatmaps, run manifests.
//! - [`cli`]: the `rmn` command line.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod embed;
pub mod feature_map;
pub mod model;
pub mod nn;
pub mod report;
pub mod tensor;
pub mod train;

pub use autodiff::{grad_check, BatchNormState, ElemOp, Gradients, NormMode, Tape, Var};
pub use tensor::{Tensor, TensorError};
