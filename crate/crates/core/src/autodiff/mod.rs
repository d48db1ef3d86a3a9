//! Dense `f64` tensors with reverse-mode differentiation, plus the optimizer,
//! gradient checker and checkpoint codec built on top of them.

mod adam;
mod checkpoint;
mod gradcheck;
mod graph;
pub mod init;
mod lstm;
mod params;
mod rng;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{read_checkpoint, write_checkpoint, MAGIC, VERSION};
pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
pub(crate) use graph::softmax_slice;
pub use graph::{Activation, Fault, Graph, Mode, PoolKind, Var};
pub use lstm::{lstm_cell, lstm_sequence, LstmWeights};
pub use params::{ParamId, ParamStore};
pub use rng::Rng;
pub use tensor::Tensor;
