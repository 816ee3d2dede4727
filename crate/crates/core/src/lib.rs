//! Pilot-free MIMO channel inference from multimodal sensing data.
//!
//! This crate is the algorithmic core of the `xfcsi` toolchain. It is
//! `no_std` + `alloc` so the numerics stay portable and free of I/O; the
//! companion `xfcsi` crate adds file formats, persistence and the CLI.
//!
//! Submodules:
//! - [`channel`]: complex channel matrices, spatial/angular DFT transforms,
//!   real stacking, NMSE and subspace cosine similarity.
//! - [`tensor`], [`graph`], [`params`], [`layers`], [`optim`]: a minimal
//!   single-precision dense-tensor engine with reverse-mode differentiation,
//!   the layer set needed here (Conv2D, pointwise Conv1D, FC, global max
//!   pool, multi-head attention, sinusoidal embeddings) and Adam.
//! - [`encoder`]: the multimodal stochastic encoder (CNN + PointNet + MLP
//!   fused by self-attention) emitting a Gaussian latent in channel space.
//! - [`unet`]: the time-conditioned U-Net velocity field.
//! - [`flow`]: flow-matching interpolants, losses (flow regression,
//!   contrastive alignment, KL regularizer) and the training loop.
//! - [`ode`]: Euler-started second-order Adams-Bashforth integration and the
//!   end-to-end inference pipeline.
//! - [`scene`]: procedural urban-intersection scenes, geometric multipath
//!   tracing (mirror-image reflections, vehicle scatter), channel synthesis
//!   and sensing rendering (image / point cloud / noisy coordinate).
//! - [`baselines`]: pilot observation simulator, LS and LASSO (ISTA)
//!   estimators, and inverse-distance-weighted KNN channel inference.
//! - [`evalbench`]: DFT beam-pair search and spectral-efficiency accounting
//!   shared by the benchmark harness.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod channel;
pub mod encoder;
pub mod error;
pub mod evalbench;
pub mod flow;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod ode;
pub mod optim;
pub mod params;
pub mod scene;
pub mod tensor;
pub mod unet;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
