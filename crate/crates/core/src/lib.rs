//! Selective state-space sequence modeling for return-conditioned control,
//! self-contained and allocator-only (`no_std` + `alloc`).
//!
//! The crate is organized around the data path of a desk-scale experiment:
//!
//! - [`ssm`] — discretization and the selective scan in its sequential,
//!   parallel (Blelloch), single-step, and LTI-convolution forms.
//! - [`model`] — token embedding (temporal and channel concatenation),
//!   gated S6 mixer blocks in pre/post up-projection residual styles, a
//!   causal self-attention baseline, and resource accounting.
//! - [`diff`] / [`optim`] — hand-derived reverse-mode gradients for every
//!   trainable parameter, finite-difference verification, and AdamW.
//! - [`env`] / [`dataset`] — deterministic synthetic environments and
//!   offline dataset generation with return-to-go bookkeeping.
//! - [`train`] — windowed and full-trajectory training loops plus
//!   return-conditioned rollout evaluation in windowed and recurrent modes.
//! - [`analysis`] — hidden-attention materialization (exact and
//!   approximate), decision-step surfaces, layer fusion, decay fits, and
//!   the mixer swap/zero/randomize ablation harness.
//!
//! Everything is a pure function of its inputs; there is no global state,
//! and identical seeds reproduce identical numbers bit for bit. IO, file
//! formats, the CLI, and the wall-clock benchmark harness live in the
//! companion `dema-cli` crate.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod dataset;
pub mod diff;
pub mod env;
pub mod error;
pub mod mathx;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod ssm;
pub mod stats;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use params::{GradReport, ParamSet};
pub use tensor::Tensor;
