//! Layer building blocks over the tape: fully-connected, 3x3 Conv2D,
//! pointwise Conv1D, multi-head attention fusion, and sinusoidal embeddings.
//!
//! Layers own [`ParamId`] handles into a shared [`ParamStore`]; `apply`
//! records the forward pass on a [`Tape`].

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{NodeRef, Tape};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Negative-side slope of the leaky rectifier used throughout.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Fully-connected layer `y = W x + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub out_dim: usize,
    pub in_dim: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let w = store.register_fan_in(rng, format!("{name}.w"), &[out_dim, in_dim], in_dim);
        let b = store.register_zeros(format!("{name}.b"), &[out_dim]);
        Self { w, b, out_dim, in_dim }
    }

    pub fn apply<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: NodeRef,
    ) -> Result<NodeRef> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.linear(x, w, b)
    }
}

/// 3x3 same-padded Conv2D with stride 1 or 2.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
}

impl Conv2d {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
    ) -> Self {
        let fan_in = c_in * 9;
        let w = store.register_fan_in(rng, format!("{name}.w"), &[c_out, c_in, 3, 3], fan_in);
        let b = store.register_zeros(format!("{name}.b"), &[c_out]);
        Self { w, b, stride }
    }

    pub fn apply<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: NodeRef,
    ) -> Result<NodeRef> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.conv2d(x, w, b, self.stride)
    }
}

/// Kernel-size-1 Conv1D (a shared linear map applied to every point).
#[derive(Debug, Clone)]
pub struct Conv1dPointwise {
    pub w: ParamId,
    pub b: ParamId,
}

impl Conv1dPointwise {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
    ) -> Self {
        let w = store.register_fan_in(rng, format!("{name}.w"), &[c_out, c_in], c_in);
        let b = store.register_zeros(format!("{name}.b"), &[c_out]);
        Self { w, b }
    }

    pub fn apply<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: NodeRef,
    ) -> Result<NodeRef> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.conv1d_pointwise(x, w, b)
    }
}

/// Sinusoidal embedding of a scalar: `out[2i] = sin(s / 10000^(2i/d))`,
/// `out[2i+1] = cos(s / 10000^(2i/d))`. `d` must be even.
pub fn sinusoidal_embed<T: Real>(s: f64, d: usize) -> Result<Tensor<T>> {
    if d == 0 || d % 2 != 0 {
        return Err(Error::Config(format!("sinusoidal embedding dim must be even, got {d}")));
    }
    let mut out = Vec::with_capacity(d);
    for i in 0..d / 2 {
        let freq = 10000f64.powf(2.0 * i as f64 / d as f64);
        let arg = s / freq;
        out.push(T::lit(arg.sin()));
        out.push(T::lit(arg.cos()));
    }
    Tensor::new(&[d], out)
}

/// Multi-head self-attention over a short token sequence, with residual add.
/// Input: `m` tokens of dimension `d`; output: the `m` attended tokens
/// concatenated into a single `[m*d]` vector.
#[derive(Debug, Clone)]
pub struct AttentionFuse {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub dim: usize,
    pub heads: usize,
}

impl AttentionFuse {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        dim: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "attention dim {dim} must be divisible by heads {heads}"
            )));
        }
        let wq = store.register_fan_in(rng, format!("{name}.wq"), &[dim, dim], dim);
        let wk = store.register_fan_in(rng, format!("{name}.wk"), &[dim, dim], dim);
        let wv = store.register_fan_in(rng, format!("{name}.wv"), &[dim, dim], dim);
        let wo = store.register_fan_in(rng, format!("{name}.wo"), &[dim, dim], dim);
        Ok(Self { wq, wk, wv, wo, dim, heads })
    }

    /// `tokens` are `[d]` vectors; returns the fused `[m*d]` vector.
    pub fn apply<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        tokens: &[NodeRef],
    ) -> Result<NodeRef> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("attention over zero tokens"));
        }
        let m = tokens.len();
        let d = self.dim;
        for t in tokens {
            if tape.value(*t).shape() != [d] {
                return Err(Error::Shape(format!(
                    "attention token shape {:?}, expected [{d}]",
                    tape.value(*t).shape()
                )));
            }
        }
        let stacked = tape.concat0(tokens)?;
        let x = tape.reshape(stacked, &[m, d])?;

        let wq = tape.param(store, self.wq);
        let wk = tape.param(store, self.wk);
        let wv = tape.param(store, self.wv);
        let wo = tape.param(store, self.wo);
        let q = tape.matmul_nt(x, wq)?;
        let k = tape.matmul_nt(x, wk)?;
        let v = tape.matmul_nt(x, wv)?;

        let dh = d / self.heads;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let mut head_outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let scores = tape.matmul_nt(qh, kh)?;
            let scaled = tape.scale(scores, scale);
            let weights = tape.softmax_rows(scaled)?;
            head_outs.push(tape.matmul(weights, vh)?);
        }
        let merged = tape.concat_cols(&head_outs)?;
        let projected = tape.matmul_nt(merged, wo)?;
        let fused = tape.add(x, projected)?;
        tape.reshape(fused, &[m * d])
    }
}
