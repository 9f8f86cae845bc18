//! A small reverse-mode differentiable kernel.
//!
//! Values are dense row-major `f64` matrices. A [`Graph`] records every
//! operation applied during a forward pass and replays them in reverse to
//! produce [`Gradients`] for the parameters held in a [`ParamStore`].
//! Layers (GRU, bidirectional GRU, attention pooling, multi-head attention,
//! layer norm) are built out of the primitive graph operations, so their
//! backward passes come for free and are covered by [`grad_check`].

mod error;
pub mod gradcheck;
mod graph;
pub mod layers;
pub mod optim;
mod param;
mod rng;
mod tensor;

pub use error::{NnError, Result};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Gradients, Graph, NodeId};
pub use layers::{AttentionWeights, AttentionPool, BiGru, Dense, Gru, LayerNorm, MultiHeadAttention};
pub use optim::{Adam, AdamConfig};
pub use param::{Init, ParamId, ParamStore, Parameter, DEFAULT_INIT_STD};
pub use rng::RngStream;
pub use tensor::Tensor;
