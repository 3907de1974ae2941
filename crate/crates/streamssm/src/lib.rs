//! Streaming selective state space video backbone.
//!
//! The model interleaves two block families: bidirectional SSM blocks that mix
//! patches within a single frame, and causal SSM blocks that scan along the
//! temporal axis. Because the temporal stage is a linear recurrence with a
//! fixed-size hidden state, live video can be processed one frame at a time by
//! carrying that state forward — per-frame cost does not grow with history
//! length, while outputs match the full parallel forward pass.
//!
//! Crate layout:
//! - [`ssm`]: ZOH discretization and the selective scan (naive / parallel / step).
//! - [`blocks`]: causal and bidirectional gated SSM blocks, MLP head.
//! - [`backbone`]: patchify, positional embedding, full model assembly, checkpoints.
//! - [`streaming`]: per-frame inference sessions with state snapshots.
//! - [`pretrain`]: masked reconstruction + teacher feature alignment, exact
//!   gradients via the tape in [`autodiff`], toy training loop.
//! - [`bench`]: streaming-vs-recompute latency harness.
//! - [`verify`]: self-check suites driven by the CLI.
//!
//! See the crate `examples/` directory for one runnable example per capability.

pub mod autodiff;
pub mod backbone;
pub mod bench;
pub mod blocks;
pub mod error;
pub mod io;
pub mod pretrain;
pub mod real;
pub mod ssm;
pub mod streaming;
pub mod tensor;
pub mod verify;

#[cfg(test)]
pub(crate) mod test_util;

pub use error::ModelError;
pub use real::Real;
pub use tensor::Tensor;
