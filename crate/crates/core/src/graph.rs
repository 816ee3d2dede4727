//! Reverse-mode autodiff over a flat tape of tensor ops.
//!
//! A [`Tape`] records every forward op; [`Tape::backward`] walks the tape in
//! reverse and accumulates exact gradients into the [`ParamStore`] leaves.
//! Nodes are immutable once written, ops never mutate their inputs, and
//! gradient accumulation is an ordered sum, so a fixed graph yields
//! bit-identical gradients on every run.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRef(usize);

enum Op<T> {
    Leaf { param: Option<ParamId> },
    Add(NodeRef, NodeRef),
    Sub(NodeRef, NodeRef),
    Mul(NodeRef, NodeRef),
    Div(NodeRef, NodeRef),
    Neg(NodeRef),
    AddConst(NodeRef),
    MulConst(NodeRef, Tensor<T>),
    Scale(NodeRef, T),
    Exp(NodeRef),
    Log(NodeRef),
    Sqrt(NodeRef),
    LeakyRelu(NodeRef, T),
    Linear { x: NodeRef, w: NodeRef, b: NodeRef },
    MatMul { a: NodeRef, b: NodeRef },
    MatMulNT { a: NodeRef, b: NodeRef },
    SliceCols { x: NodeRef, start: usize },
    ConcatCols { parts: Vec<NodeRef> },
    Concat0 { parts: Vec<NodeRef> },
    Reshape(NodeRef),
    Conv2d { x: NodeRef, w: NodeRef, b: NodeRef, stride: usize },
    Conv1dPointwise { x: NodeRef, w: NodeRef, b: NodeRef },
    GlobalMaxPool { x: NodeRef, argmax: Vec<usize> },
    Upsample2x(NodeRef),
    BroadcastChanAdd { x: NodeRef, v: NodeRef },
    SoftmaxRows(NodeRef),
    Sum(NodeRef),
    Mean(NodeRef),
    SumSq(NodeRef),
    Dot(NodeRef, NodeRef),
    CosineBank { x: NodeRef, bank: Tensor<T>, bank_norms: Vec<T> },
    DivByScalar { v: NodeRef, s: NodeRef },
    CrossEntropyPick { logits: NodeRef, index: usize },
    KlGauss { mu: NodeRef, sigma_log: NodeRef },
}

/// Recorded forward computation. A tape pairs with exactly one
/// [`ParamStore`]; parameter leaves are memoized so repeated `param` calls
/// share a single node and their gradients accumulate.
pub struct Tape<T: Real> {
    ops: Vec<Op<T>>,
    values: Vec<Tensor<T>>,
    param_nodes: alloc::collections::BTreeMap<usize, NodeRef>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { ops: Vec::new(), values: Vec::new(), param_nodes: alloc::collections::BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Value of a node.
    pub fn value(&self, n: NodeRef) -> &Tensor<T> {
        &self.values[n.0]
    }

    /// Value of a `[1]`-shaped node as a plain scalar.
    pub fn scalar_value(&self, n: NodeRef) -> T {
        self.values[n.0].data()[0]
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> NodeRef {
        let id = NodeRef(self.ops.len());
        self.ops.push(op);
        self.values.push(value);
        id
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeRef {
        self.push(Op::Leaf { param: None }, value)
    }

    /// Differentiable leaf bound to a stored parameter; `backward` adds the
    /// leaf gradient into the store. One node per parameter per tape.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> NodeRef {
        if let Some(&node) = self.param_nodes.get(&id.index()) {
            return node;
        }
        let node = self.push(Op::Leaf { param: Some(id) }, store.value(id).clone());
        self.param_nodes.insert(id.index(), node);
        node
    }

    fn same_shape(&self, a: NodeRef, b: NodeRef, what: &str) -> Result<()> {
        if self.values[a.0].shape() != self.values[b.0].shape() {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.values[a.0].shape(),
                self.values[b.0].shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        self.same_shape(a, b, "add")?;
        let v = self.values[a.0].add(&self.values[b.0])?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        self.same_shape(a, b, "sub")?;
        let v = self.values[a.0].sub(&self.values[b.0])?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        self.same_shape(a, b, "mul")?;
        let v = self.values[a.0].mul(&self.values[b.0])?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn div(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        self.same_shape(a, b, "div")?;
        let v = self.values[a.0].zip(&self.values[b.0], |x, y| x / y)?;
        Ok(self.push(Op::Div(a, b), v))
    }

    pub fn neg(&mut self, a: NodeRef) -> NodeRef {
        let v = self.values[a.0].map(|x| -x);
        self.push(Op::Neg(a), v)
    }

    pub fn add_const(&mut self, a: NodeRef, c: &Tensor<T>) -> Result<NodeRef> {
        let v = self.values[a.0].add(c)?;
        Ok(self.push(Op::AddConst(a), v))
    }

    pub fn mul_const(&mut self, a: NodeRef, c: &Tensor<T>) -> Result<NodeRef> {
        let v = self.values[a.0].mul(c)?;
        Ok(self.push(Op::MulConst(a, c.clone()), v))
    }

    pub fn scale(&mut self, a: NodeRef, s: T) -> NodeRef {
        let v = self.values[a.0].scale(s);
        self.push(Op::Scale(a, s), v)
    }

    pub fn exp(&mut self, a: NodeRef) -> NodeRef {
        let v = self.values[a.0].map(|x| x.exp());
        self.push(Op::Exp(a), v)
    }

    pub fn log(&mut self, a: NodeRef) -> NodeRef {
        let v = self.values[a.0].map(|x| x.ln());
        self.push(Op::Log(a), v)
    }

    pub fn sqrt(&mut self, a: NodeRef) -> NodeRef {
        let v = self.values[a.0].map(|x| x.sqrt());
        self.push(Op::Sqrt(a), v)
    }

    pub fn leaky_relu(&mut self, a: NodeRef, slope: T) -> NodeRef {
        let v = self.values[a.0].map(|x| if x > T::zero() { x } else { x * slope });
        self.push(Op::LeakyRelu(a, slope), v)
    }

    /// `y = W x + b` with `x: [n]`, `w: [m, n]`, `b: [m]`.
    pub fn linear(&mut self, x: NodeRef, w: NodeRef, b: NodeRef) -> Result<NodeRef> {
        let (xs, ws, bs) = (
            self.values[x.0].shape().to_vec(),
            self.values[w.0].shape().to_vec(),
            self.values[b.0].shape().to_vec(),
        );
        if ws.len() != 2 || xs != [ws[1]] || bs != [ws[0]] {
            return Err(Error::Shape(format!(
                "linear wants x=[n], w=[m,n], b=[m]; got x={xs:?} w={ws:?} b={bs:?}"
            )));
        }
        let (m, n) = (ws[0], ws[1]);
        let xv = self.values[x.0].data();
        let wv = self.values[w.0].data();
        let bv = self.values[b.0].data();
        let mut out = Vec::with_capacity(m);
        for i in 0..m {
            let row = &wv[i * n..(i + 1) * n];
            let mut acc = T::zero();
            for (wi, xi) in row.iter().zip(xv.iter()) {
                acc = acc + *wi * *xi;
            }
            out.push(acc + bv[i]);
        }
        let v = Tensor::new(&[m], out)?;
        Ok(self.push(Op::Linear { x, w, b }, v))
    }

    /// `C = A B` with `a: [m, k]`, `b: [k, n]`.
    pub fn matmul(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        let (asn, bsn) = (self.values[a.0].shape().to_vec(), self.values[b.0].shape().to_vec());
        if asn.len() != 2 || bsn.len() != 2 || asn[1] != bsn[0] {
            return Err(Error::Shape(format!("matmul on {asn:?} x {bsn:?}")));
        }
        let (m, k, n) = (asn[0], asn[1], bsn[1]);
        let mut out = vec![T::zero(); m * n];
        mm(self.values[a.0].data(), self.values[b.0].data(), m, k, n, &mut out);
        let v = Tensor::new(&[m, n], out)?;
        Ok(self.push(Op::MatMul { a, b }, v))
    }

    /// `C = A B^T` with `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_nt(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        let (asn, bsn) = (self.values[a.0].shape().to_vec(), self.values[b.0].shape().to_vec());
        if asn.len() != 2 || bsn.len() != 2 || asn[1] != bsn[1] {
            return Err(Error::Shape(format!("matmul_nt on {asn:?} x {bsn:?}^T")));
        }
        let (m, k, n) = (asn[0], asn[1], bsn[0]);
        let mut out = vec![T::zero(); m * n];
        mm_nt(self.values[a.0].data(), self.values[b.0].data(), m, k, n, &mut out);
        let v = Tensor::new(&[m, n], out)?;
        Ok(self.push(Op::MatMulNT { a, b }, v))
    }

    /// Columns `[start, start+len)` of a `[m, n]` matrix.
    pub fn slice_cols(&mut self, x: NodeRef, start: usize, len: usize) -> Result<NodeRef> {
        let s = self.values[x.0].shape().to_vec();
        if s.len() != 2 || start + len > s[1] {
            return Err(Error::Shape(format!(
                "slice_cols [{start}, {}) of {s:?}",
                start + len
            )));
        }
        let (m, n) = (s[0], s[1]);
        let xv = self.values[x.0].data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&xv[i * n + start..i * n + start + len]);
        }
        let v = Tensor::new(&[m, len], out)?;
        Ok(self.push(Op::SliceCols { x, start }, v))
    }

    /// Concatenate `[m, n_i]` matrices along the column axis.
    pub fn concat_cols(&mut self, parts: &[NodeRef]) -> Result<NodeRef> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat_cols"));
        }
        let m = self.values[parts[0].0].shape()[0];
        let mut total = 0;
        for p in parts {
            let s = self.values[p.0].shape();
            if s.len() != 2 || s[0] != m {
                return Err(Error::Shape(format!("concat_cols part shape {s:?}")));
            }
            total += s[1];
        }
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for p in parts {
                let n = self.values[p.0].shape()[1];
                out.extend_from_slice(&self.values[p.0].data()[i * n..(i + 1) * n]);
            }
        }
        let v = Tensor::new(&[m, total], out)?;
        Ok(self.push(Op::ConcatCols { parts: parts.to_vec() }, v))
    }

    /// Concatenate along the leading axis; trailing dimensions must agree.
    pub fn concat0(&mut self, parts: &[NodeRef]) -> Result<NodeRef> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat0"));
        }
        let tail = self.values[parts[0].0].shape()[1..].to_vec();
        let mut lead = 0;
        for p in parts {
            let s = self.values[p.0].shape();
            if s.is_empty() || s[1..] != tail[..] {
                return Err(Error::Shape(format!("concat0 part shape {s:?}")));
            }
            lead += s[0];
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&tail);
        let mut out = Vec::with_capacity(shape.iter().product());
        for p in parts {
            out.extend_from_slice(self.values[p.0].data());
        }
        let v = Tensor::new(&shape, out)?;
        Ok(self.push(Op::Concat0 { parts: parts.to_vec() }, v))
    }

    pub fn reshape(&mut self, x: NodeRef, shape: &[usize]) -> Result<NodeRef> {
        let v = self.values[x.0].reshaped(shape)?;
        Ok(self.push(Op::Reshape(x), v))
    }

    /// 3x3 zero-padded cross-correlation with stride 1 or 2.
    /// `x: [c_in, h, w]`, `w: [c_out, c_in, 3, 3]`, `b: [c_out]`.
    pub fn conv2d(&mut self, x: NodeRef, w: NodeRef, b: NodeRef, stride: usize) -> Result<NodeRef> {
        if stride != 1 && stride != 2 {
            return Err(Error::Config(format!("conv2d stride must be 1 or 2, got {stride}")));
        }
        let xs = self.values[x.0].shape().to_vec();
        let ws = self.values[w.0].shape().to_vec();
        let bs = self.values[b.0].shape().to_vec();
        if xs.len() != 3 || ws.len() != 4 || ws[2] != 3 || ws[3] != 3 || ws[1] != xs[0] || bs != [ws[0]] {
            return Err(Error::Shape(format!(
                "conv2d wants x=[ci,h,w], w=[co,ci,3,3], b=[co]; got x={xs:?} w={ws:?} b={bs:?}"
            )));
        }
        if stride == 2 && (xs[1] % 2 != 0 || xs[2] % 2 != 0) {
            return Err(Error::Config(format!(
                "stride-2 conv needs even spatial dims, got {}x{}",
                xs[1], xs[2]
            )));
        }
        let (ci, h, wd) = (xs[0], xs[1], xs[2]);
        let co = ws[0];
        let (ho, wo) = (h / stride, wd / stride);
        let xv = self.values[x.0].data();
        let wv = self.values[w.0].data();
        let bv = self.values[b.0].data();
        let mut out = vec![T::zero(); co * ho * wo];
        for oc in 0..co {
            let base = oc * ho * wo;
            out[base..base + ho * wo].iter_mut().for_each(|v| *v = bv[oc]);
            for ic in 0..ci {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let wgt = wv[((oc * ci + ic) * 3 + ky) * 3 + kx];
                        if wgt == T::zero() {
                            continue;
                        }
                        for oy in 0..ho {
                            let iy = (oy * stride + ky) as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = (ic * h + iy as usize) * wd;
                            let orow = base + oy * wo;
                            for ox in 0..wo {
                                let ix = (ox * stride + kx) as isize - 1;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                out[orow + ox] = out[orow + ox] + wgt * xv[xrow + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        let v = Tensor::new(&[co, ho, wo], out)?;
        Ok(self.push(Op::Conv2d { x, w, b, stride }, v))
    }

    /// Kernel-size-1 Conv1D: an independent linear map per point.
    /// `x: [c_in, u]`, `w: [c_out, c_in]`, `b: [c_out]`.
    pub fn conv1d_pointwise(&mut self, x: NodeRef, w: NodeRef, b: NodeRef) -> Result<NodeRef> {
        let xs = self.values[x.0].shape().to_vec();
        let ws = self.values[w.0].shape().to_vec();
        let bs = self.values[b.0].shape().to_vec();
        if xs.len() != 2 || ws.len() != 2 || ws[1] != xs[0] || bs != [ws[0]] {
            return Err(Error::Shape(format!(
                "conv1d wants x=[ci,u], w=[co,ci], b=[co]; got x={xs:?} w={ws:?} b={bs:?}"
            )));
        }
        let (ci, u) = (xs[0], xs[1]);
        let co = ws[0];
        let mut out = vec![T::zero(); co * u];
        mm(self.values[w.0].data(), self.values[x.0].data(), co, ci, u, &mut out);
        let bv = self.values[b.0].data().to_vec();
        for oc in 0..co {
            for v in out[oc * u..(oc + 1) * u].iter_mut() {
                *v = *v + bv[oc];
            }
        }
        let v = Tensor::new(&[co, u], out)?;
        Ok(self.push(Op::Conv1dPointwise { x, w, b }, v))
    }

    /// Max over the point axis of a `[c, u]` feature map. Ties route the
    /// gradient to the first maximal index.
    pub fn global_max_pool(&mut self, x: NodeRef) -> Result<NodeRef> {
        let xs = self.values[x.0].shape().to_vec();
        if xs.len() != 2 {
            return Err(Error::Shape(format!("global_max_pool wants [c,u], got {xs:?}")));
        }
        if xs[1] == 0 {
            return Err(Error::EmptyInput("global_max_pool over zero points"));
        }
        let (c, u) = (xs[0], xs[1]);
        let xv = self.values[x.0].data();
        let mut out = Vec::with_capacity(c);
        let mut argmax = Vec::with_capacity(c);
        for ch in 0..c {
            let row = &xv[ch * u..(ch + 1) * u];
            let mut best = row[0];
            let mut besti = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > best {
                    best = v;
                    besti = i;
                }
            }
            out.push(best);
            argmax.push(besti);
        }
        let v = Tensor::new(&[c], out)?;
        Ok(self.push(Op::GlobalMaxPool { x, argmax }, v))
    }

    /// Nearest-neighbor 2x spatial upsampling of `[c, h, w]`.
    pub fn upsample2x(&mut self, x: NodeRef) -> Result<NodeRef> {
        let xs = self.values[x.0].shape().to_vec();
        if xs.len() != 3 {
            return Err(Error::Shape(format!("upsample2x wants [c,h,w], got {xs:?}")));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let xv = self.values[x.0].data();
        let mut out = vec![T::zero(); c * 4 * h * w];
        for ch in 0..c {
            for y in 0..2 * h {
                for x2 in 0..2 * w {
                    out[(ch * 2 * h + y) * 2 * w + x2] = xv[(ch * h + y / 2) * w + x2 / 2];
                }
            }
        }
        let v = Tensor::new(&[c, 2 * h, 2 * w], out)?;
        Ok(self.push(Op::Upsample2x(x), v))
    }

    /// `x[c,h,w] + v[c]` broadcast over the spatial dims.
    pub fn broadcast_chan_add(&mut self, x: NodeRef, v: NodeRef) -> Result<NodeRef> {
        let xs = self.values[x.0].shape().to_vec();
        let vs = self.values[v.0].shape().to_vec();
        if xs.len() != 3 || vs != [xs[0]] {
            return Err(Error::Shape(format!(
                "broadcast_chan_add wants x=[c,h,w], v=[c]; got {xs:?}, {vs:?}"
            )));
        }
        let (c, hw) = (xs[0], xs[1] * xs[2]);
        let vv = self.values[v.0].data().to_vec();
        let mut out = self.values[x.0].data().to_vec();
        for ch in 0..c {
            for o in out[ch * hw..(ch + 1) * hw].iter_mut() {
                *o = *o + vv[ch];
            }
        }
        let val = Tensor::new(&xs, out)?;
        Ok(self.push(Op::BroadcastChanAdd { x, v }, val))
    }

    /// Row-wise softmax of a `[m, n]` matrix (max-subtracted for stability).
    pub fn softmax_rows(&mut self, x: NodeRef) -> Result<NodeRef> {
        let xs = self.values[x.0].shape().to_vec();
        if xs.len() != 2 {
            return Err(Error::Shape(format!("softmax_rows wants [m,n], got {xs:?}")));
        }
        let (m, n) = (xs[0], xs[1]);
        let xv = self.values[x.0].data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let mx = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let mut denom = T::zero();
            for (o, &v) in out[i * n..(i + 1) * n].iter_mut().zip(row.iter()) {
                *o = (v - mx).exp();
                denom = denom + *o;
            }
            for o in out[i * n..(i + 1) * n].iter_mut() {
                *o = *o / denom;
            }
        }
        let v = Tensor::new(&xs, out)?;
        Ok(self.push(Op::SoftmaxRows(x), v))
    }

    pub fn sum(&mut self, a: NodeRef) -> NodeRef {
        let v = Tensor::scalar(self.values[a.0].sum());
        self.push(Op::Sum(a), v)
    }

    pub fn mean(&mut self, a: NodeRef) -> Result<NodeRef> {
        let n = self.values[a.0].numel();
        if n == 0 {
            return Err(Error::EmptyInput("mean over zero elements"));
        }
        let v = Tensor::scalar(self.values[a.0].sum() / T::lit(n as f64));
        Ok(self.push(Op::Mean(a), v))
    }

    /// Sum of squared entries (squared Frobenius norm) as a scalar node.
    pub fn sum_sq(&mut self, a: NodeRef) -> NodeRef {
        let v = Tensor::scalar(self.values[a.0].norm_sq());
        self.push(Op::SumSq(a), v)
    }

    pub fn dot(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        self.same_shape(a, b, "dot")?;
        let v = Tensor::scalar(self.values[a.0].dot(&self.values[b.0])?);
        Ok(self.push(Op::Dot(a, b), v))
    }

    /// Cosine similarity of a vector node against each row of a constant
    /// bank: `out[k] = <x, bank_k> / (|x| |bank_k|)`.
    pub fn cosine_bank(&mut self, x: NodeRef, bank: &Tensor<T>) -> Result<NodeRef> {
        let xs = self.values[x.0].shape().to_vec();
        let bs = bank.shape().to_vec();
        if xs.len() != 1 || bs.len() != 2 || bs[1] != xs[0] {
            return Err(Error::Shape(format!(
                "cosine_bank wants x=[n], bank=[s,n]; got {xs:?}, {bs:?}"
            )));
        }
        let n = xs[0];
        let s = bs[0];
        let xv = self.values[x.0].data();
        let xnorm = self.values[x.0].norm().max(T::lit(1e-30));
        let mut bank_norms = Vec::with_capacity(s);
        let mut out = Vec::with_capacity(s);
        for k in 0..s {
            let row = &bank.data()[k * n..(k + 1) * n];
            let bnorm = row
                .iter()
                .fold(T::zero(), |acc, &v| acc + v * v)
                .sqrt()
                .max(T::lit(1e-30));
            let mut d = T::zero();
            for (a, b) in xv.iter().zip(row.iter()) {
                d = d + *a * *b;
            }
            out.push(d / (xnorm * bnorm));
            bank_norms.push(bnorm);
        }
        let v = Tensor::new(&[s], out)?;
        Ok(self.push(Op::CosineBank { x, bank: bank.clone(), bank_norms }, v))
    }

    /// Elementwise division of a tensor node by a `[1]` scalar node.
    pub fn div_by_scalar(&mut self, v: NodeRef, s: NodeRef) -> Result<NodeRef> {
        if self.values[s.0].numel() != 1 {
            return Err(Error::Shape("div_by_scalar divisor must be a scalar node".into()));
        }
        let sv = self.values[s.0].data()[0];
        let out = self.values[v.0].map(|x| x / sv);
        Ok(self.push(Op::DivByScalar { v, s }, out))
    }

    /// `-log softmax(logits)[index]`, computed with a stable log-sum-exp.
    pub fn cross_entropy_pick(&mut self, logits: NodeRef, index: usize) -> Result<NodeRef> {
        let ls = self.values[logits.0].shape().to_vec();
        if ls.len() != 1 || index >= ls[0] {
            return Err(Error::Shape(format!(
                "cross_entropy_pick index {index} of logits {ls:?}"
            )));
        }
        let lv = self.values[logits.0].data();
        let mx = lv.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let lse = lv
            .iter()
            .fold(T::zero(), |acc, &v| acc + (v - mx).exp())
            .ln()
            + mx;
        let v = Tensor::scalar(lse - lv[index]);
        Ok(self.push(Op::CrossEntropyPick { logits, index }, v))
    }

    /// `-sum(1 + sigma_log - mu^2 - exp(sigma_log))` over all elements.
    pub fn kl_gauss(&mut self, mu: NodeRef, sigma_log: NodeRef) -> Result<NodeRef> {
        self.same_shape(mu, sigma_log, "kl_gauss")?;
        let mv = self.values[mu.0].data();
        let sv = self.values[sigma_log.0].data();
        let mut acc = T::zero();
        for (&m, &s) in mv.iter().zip(sv.iter()) {
            acc = acc + (T::one() + s - m * m - s.exp());
        }
        let v = Tensor::scalar(-acc);
        Ok(self.push(Op::KlGauss { mu, sigma_log }, v))
    }

    /// Reverse pass from a scalar root. Gradients of parameter leaves are
    /// accumulated into `store`; multiple uses of a node sum their
    /// contributions in tape order.
    pub fn backward(&self, root: NodeRef, store: &mut ParamStore<T>) -> Result<()> {
        if self.values[root.0].numel() != 1 {
            return Err(Error::Contract("backward requires a scalar root"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.ops.len()];
        grads[root.0] = Some(Tensor::scalar(T::one()));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.ops[idx] {
                Op::Leaf { param } => {
                    if let Some(pid) = param {
                        store.grad_mut(*pid).axpy(T::one(), &g)?;
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.scale(-T::one()));
                }
                Op::Mul(a, b) => {
                    let ga = g.mul(&self.values[b.0])?;
                    let gb = g.mul(&self.values[a.0])?;
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Div(a, b) => {
                    let ga = g.zip(&self.values[b.0], |gi, bi| gi / bi)?;
                    let gb = g
                        .zip(&self.values[idx], |gi, yi| gi * yi)?
                        .zip(&self.values[b.0], |t, bi| -t / bi)?;
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Neg(a) => acc(&mut grads, *a, g.scale(-T::one())),
                Op::AddConst(a) => acc(&mut grads, *a, g),
                Op::MulConst(a, c) => acc(&mut grads, *a, g.mul(c)?),
                Op::Scale(a, s) => acc(&mut grads, *a, g.scale(*s)),
                Op::Exp(a) => acc(&mut grads, *a, g.mul(&self.values[idx])?),
                Op::Log(a) => acc(&mut grads, *a, g.zip(&self.values[a.0], |gi, xi| gi / xi)?),
                Op::Sqrt(a) => {
                    let two = T::lit(2.0);
                    let ga = g.zip(&self.values[idx], |gi, yi| gi / (two * yi))?;
                    acc(&mut grads, *a, ga);
                }
                Op::LeakyRelu(a, slope) => {
                    let ga = g.zip(&self.values[a.0], |gi, xi| {
                        if xi > T::zero() {
                            gi
                        } else {
                            gi * *slope
                        }
                    })?;
                    acc(&mut grads, *a, ga);
                }
                Op::Linear { x, w, b } => {
                    let (m, n) = {
                        let ws = self.values[w.0].shape();
                        (ws[0], ws[1])
                    };
                    let gv = g.data();
                    let wv = self.values[w.0].data();
                    let xv = self.values[x.0].data();
                    let mut gx = vec![T::zero(); n];
                    let mut gw = vec![T::zero(); m * n];
                    for i in 0..m {
                        let gi = gv[i];
                        let wrow = &wv[i * n..(i + 1) * n];
                        let gwrow = &mut gw[i * n..(i + 1) * n];
                        for j in 0..n {
                            gx[j] = gx[j] + gi * wrow[j];
                            gwrow[j] = gi * xv[j];
                        }
                    }
                    acc(&mut grads, *x, Tensor::new(&[n], gx)?);
                    acc(&mut grads, *w, Tensor::new(&[m, n], gw)?);
                    acc(&mut grads, *b, g);
                }
                Op::MatMul { a, b } => {
                    let (m, k) = {
                        let s = self.values[a.0].shape();
                        (s[0], s[1])
                    };
                    let n = self.values[b.0].shape()[1];
                    // dA = G B^T, dB = A^T G
                    let mut ga = vec![T::zero(); m * k];
                    mm_nt(g.data(), self.values[b.0].data(), m, n, k, &mut ga);
                    let mut gb = vec![T::zero(); k * n];
                    mm_tn(self.values[a.0].data(), g.data(), m, k, n, &mut gb);
                    acc(&mut grads, *a, Tensor::new(&[m, k], ga)?);
                    acc(&mut grads, *b, Tensor::new(&[k, n], gb)?);
                }
                Op::MatMulNT { a, b } => {
                    let (m, k) = {
                        let s = self.values[a.0].shape();
                        (s[0], s[1])
                    };
                    let n = self.values[b.0].shape()[0];
                    // C = A B^T: dA = G B, dB = G^T A
                    let mut ga = vec![T::zero(); m * k];
                    mm(g.data(), self.values[b.0].data(), m, n, k, &mut ga);
                    let mut gb = vec![T::zero(); n * k];
                    mm_tn(g.data(), self.values[a.0].data(), m, n, k, &mut gb);
                    acc(&mut grads, *a, Tensor::new(&[m, k], ga)?);
                    acc(&mut grads, *b, Tensor::new(&[n, k], gb)?);
                }
                Op::SliceCols { x, start } => {
                    let xs = self.values[x.0].shape();
                    let (m, n) = (xs[0], xs[1]);
                    let len = g.shape()[1];
                    let mut gx = vec![T::zero(); m * n];
                    for i in 0..m {
                        for j in 0..len {
                            gx[i * n + start + j] = g.data()[i * len + j];
                        }
                    }
                    acc(&mut grads, *x, Tensor::new(&[m, n], gx)?);
                }
                Op::ConcatCols { parts } => {
                    let m = g.shape()[0];
                    let total = g.shape()[1];
                    let mut start = 0;
                    for p in parts {
                        let n = self.values[p.0].shape()[1];
                        let mut gp = Vec::with_capacity(m * n);
                        for i in 0..m {
                            gp.extend_from_slice(&g.data()[i * total + start..i * total + start + n]);
                        }
                        acc(&mut grads, *p, Tensor::new(&[m, n], gp)?);
                        start += n;
                    }
                }
                Op::Concat0 { parts } => {
                    let mut offset = 0;
                    for p in parts {
                        let numel = self.values[p.0].numel();
                        let gp = Tensor::new(
                            self.values[p.0].shape(),
                            g.data()[offset..offset + numel].to_vec(),
                        )?;
                        acc(&mut grads, *p, gp);
                        offset += numel;
                    }
                }
                Op::Reshape(x) => {
                    let gx = g.reshaped(self.values[x.0].shape())?;
                    acc(&mut grads, *x, gx);
                }
                Op::Conv2d { x, w, b, stride } => {
                    let (gx, gw, gb) = conv2d_backward(
                        &self.values[x.0],
                        &self.values[w.0],
                        &g,
                        *stride,
                    )?;
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *w, gw);
                    acc(&mut grads, *b, gb);
                }
                Op::Conv1dPointwise { x, w, b } => {
                    let xs = self.values[x.0].shape();
                    let (ci, u) = (xs[0], xs[1]);
                    let co = self.values[w.0].shape()[0];
                    // dX = W^T G, dW = G X^T, db = row sums of G
                    let mut gx = vec![T::zero(); ci * u];
                    mm_tn(self.values[w.0].data(), g.data(), co, ci, u, &mut gx);
                    let mut gw = vec![T::zero(); co * ci];
                    mm_nt(g.data(), self.values[x.0].data(), co, u, ci, &mut gw);
                    let mut gb = vec![T::zero(); co];
                    for oc in 0..co {
                        gb[oc] = g.data()[oc * u..(oc + 1) * u]
                            .iter()
                            .fold(T::zero(), |a, &v| a + v);
                    }
                    acc(&mut grads, *x, Tensor::new(&[ci, u], gx)?);
                    acc(&mut grads, *w, Tensor::new(&[co, ci], gw)?);
                    acc(&mut grads, *b, Tensor::new(&[co], gb)?);
                }
                Op::GlobalMaxPool { x, argmax } => {
                    let xs = self.values[x.0].shape();
                    let (c, u) = (xs[0], xs[1]);
                    let mut gx = vec![T::zero(); c * u];
                    for ch in 0..c {
                        gx[ch * u + argmax[ch]] = g.data()[ch];
                    }
                    acc(&mut grads, *x, Tensor::new(&[c, u], gx)?);
                }
                Op::Upsample2x(x) => {
                    let xs = self.values[x.0].shape();
                    let (c, h, w) = (xs[0], xs[1], xs[2]);
                    let mut gx = vec![T::zero(); c * h * w];
                    for ch in 0..c {
                        for y in 0..2 * h {
                            for x2 in 0..2 * w {
                                let gi = g.data()[(ch * 2 * h + y) * 2 * w + x2];
                                let t = (ch * h + y / 2) * w + x2 / 2;
                                gx[t] = gx[t] + gi;
                            }
                        }
                    }
                    acc(&mut grads, *x, Tensor::new(&[c, h, w], gx)?);
                }
                Op::BroadcastChanAdd { x, v } => {
                    let xs = self.values[x.0].shape();
                    let (c, hw) = (xs[0], xs[1] * xs[2]);
                    let mut gv = vec![T::zero(); c];
                    for ch in 0..c {
                        gv[ch] = g.data()[ch * hw..(ch + 1) * hw]
                            .iter()
                            .fold(T::zero(), |a, &x2| a + x2);
                    }
                    acc(&mut grads, *x, g.clone());
                    acc(&mut grads, *v, Tensor::new(&[c], gv)?);
                }
                Op::SoftmaxRows(x) => {
                    let s = self.values[idx].shape();
                    let (m, n) = (s[0], s[1]);
                    let y = self.values[idx].data();
                    let mut gx = vec![T::zero(); m * n];
                    for i in 0..m {
                        let yrow = &y[i * n..(i + 1) * n];
                        let grow = &g.data()[i * n..(i + 1) * n];
                        let dotgy = yrow
                            .iter()
                            .zip(grow.iter())
                            .fold(T::zero(), |a, (&yi, &gi)| a + yi * gi);
                        for j in 0..n {
                            gx[i * n + j] = yrow[j] * (grow[j] - dotgy);
                        }
                    }
                    acc(&mut grads, *x, Tensor::new(&[m, n], gx)?);
                }
                Op::Sum(a) => {
                    let g0 = g.data()[0];
                    acc(&mut grads, *a, Tensor::full(self.values[a.0].shape(), g0));
                }
                Op::Mean(a) => {
                    let n = self.values[a.0].numel();
                    let g0 = g.data()[0] / T::lit(n as f64);
                    acc(&mut grads, *a, Tensor::full(self.values[a.0].shape(), g0));
                }
                Op::SumSq(a) => {
                    let g0 = g.data()[0];
                    let two = T::lit(2.0);
                    acc(&mut grads, *a, self.values[a.0].scale(two * g0));
                }
                Op::Dot(a, b) => {
                    let g0 = g.data()[0];
                    acc(&mut grads, *a, self.values[b.0].scale(g0));
                    acc(&mut grads, *b, self.values[a.0].scale(g0));
                }
                Op::CosineBank { x, bank, bank_norms } => {
                    let n = self.values[x.0].numel();
                    let s = bank_norms.len();
                    let xv = self.values[x.0].data();
                    let xnorm = self.values[x.0].norm().max(T::lit(1e-30));
                    let y = self.values[idx].data();
                    let mut gx = vec![T::zero(); n];
                    let mut coeff_x = T::zero();
                    for k in 0..s {
                        let gk = g.data()[k];
                        let row = &bank.data()[k * n..(k + 1) * n];
                        let c = gk / (xnorm * bank_norms[k]);
                        for j in 0..n {
                            gx[j] = gx[j] + c * row[j];
                        }
                        coeff_x = coeff_x + gk * y[k];
                    }
                    let c2 = coeff_x / (xnorm * xnorm);
                    for j in 0..n {
                        gx[j] = gx[j] - c2 * xv[j];
                    }
                    acc(&mut grads, *x, Tensor::new(&[n], gx)?);
                }
                Op::DivByScalar { v, s } => {
                    let sv = self.values[s.0].data()[0];
                    let gv = g.scale(T::one() / sv);
                    let gs = -g.dot(&self.values[idx])? / sv;
                    acc(&mut grads, *v, gv);
                    acc(&mut grads, *s, Tensor::scalar(gs));
                }
                Op::CrossEntropyPick { logits, index } => {
                    let g0 = g.data()[0];
                    let lv = self.values[logits.0].data();
                    let n = lv.len();
                    let mx = lv.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
                    let denom = lv.iter().fold(T::zero(), |acc2, &v| acc2 + (v - mx).exp());
                    let mut gl = Vec::with_capacity(n);
                    for (j, &v) in lv.iter().enumerate() {
                        let p = (v - mx).exp() / denom;
                        let onehot = if j == *index { T::one() } else { T::zero() };
                        gl.push(g0 * (p - onehot));
                    }
                    acc(&mut grads, *logits, Tensor::new(&[n], gl)?);
                }
                Op::KlGauss { mu, sigma_log } => {
                    let g0 = g.data()[0];
                    let two = T::lit(2.0);
                    let gmu = self.values[mu.0].scale(two * g0);
                    let gsl = self.values[sigma_log.0].map(|s| (s.exp() - T::one()) * g0);
                    acc(&mut grads, *mu, gmu);
                    acc(&mut grads, *sigma_log, gsl);
                }
            }
        }
        Ok(())
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn acc<T: Real>(grads: &mut [Option<Tensor<T>>], node: NodeRef, contribution: Tensor<T>) {
    match &mut grads[node.0] {
        Some(existing) => {
            existing
                .axpy(T::one(), &contribution)
                .expect("gradient shapes match by construction");
        }
        slot @ None => *slot = Some(contribution),
    }
}

/// `out += A B` with `a: m x k`, `b: k x n` (row-major slices).
fn mm<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o = *o + aip * bv;
            }
        }
    }
}

/// `out += A B^T` with `a: m x k`, `b: n x k`.
fn mm_nt<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut accv = T::zero();
            for (&x, &y) in arow.iter().zip(brow.iter()) {
                accv = accv + x * y;
            }
            out[i * n + j] = out[i * n + j] + accv;
        }
    }
}

/// `out += A^T B` with `a: k x m`, `b: k x n`.
fn mm_tn<T: Real>(a: &[T], b: &[T], k: usize, m: usize, n: usize, out: &mut [T]) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let aip = arow[i];
            if aip == T::zero() {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o = *o + aip * bv;
            }
        }
    }
}

#[allow(clippy::type_complexity)]
fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &Tensor<T>,
    stride: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let xs = x.shape();
    let (ci, h, wd) = (xs[0], xs[1], xs[2]);
    let co = w.shape()[0];
    let gs = g.shape();
    let (ho, wo) = (gs[1], gs[2]);
    let xv = x.data();
    let wv = w.data();
    let gv = g.data();
    let mut gx = vec![T::zero(); ci * h * wd];
    let mut gw = vec![T::zero(); co * ci * 9];
    let mut gb = vec![T::zero(); co];
    for oc in 0..co {
        let gbase = oc * ho * wo;
        gb[oc] = gv[gbase..gbase + ho * wo].iter().fold(T::zero(), |a, &v| a + v);
        for ic in 0..ci {
            for ky in 0..3 {
                for kx in 0..3 {
                    let widx = ((oc * ci + ic) * 3 + ky) * 3 + kx;
                    let wgt = wv[widx];
                    let mut gw_acc = T::zero();
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = (ic * h + iy as usize) * wd;
                        let grow = gbase + oy * wo;
                        for ox in 0..wo {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            let gval = gv[grow + ox];
                            gw_acc = gw_acc + gval * xv[xrow + ix as usize];
                            gx[xrow + ix as usize] = gx[xrow + ix as usize] + gval * wgt;
                        }
                    }
                    gw[widx] = gw[widx] + gw_acc;
                }
            }
        }
    }
    Ok((
        Tensor::new(&[ci, h, wd], gx)?,
        Tensor::new(&[co, ci, 3, 3], gw)?,
        Tensor::new(&[co], gb)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn store_with<T: Real>(shapes_and_vals: &[(&[usize], &[f64])]) -> ParamStore<T> {
        let mut store = ParamStore::new();
        for (i, (shape, vals)) in shapes_and_vals.iter().enumerate() {
            let data: Vec<T> = vals.iter().map(|&v| T::lit(v)).collect();
            store.register(format!("p{i}"), Tensor::new(shape, data).unwrap());
        }
        store
    }

    #[test]
    fn sum_of_squares_gradient_is_two_x() {
        let mut store = store_with::<f64>(&[(&[3], &[1.0, -2.0, 0.5])]);
        let mut tape = Tape::new();
        let x = tape.param(&store, crate::params::ParamId(0));
        let loss = tape.sum_sq(x);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(
            store.grad(crate::params::ParamId(0)).data(),
            &[2.0, -4.0, 1.0]
        );
    }

    #[test]
    fn unused_parameter_keeps_zero_grad() {
        let mut store = store_with::<f64>(&[(&[2], &[1.0, 1.0]), (&[2], &[3.0, 4.0])]);
        let mut tape = Tape::new();
        let x = tape.param(&store, crate::params::ParamId(0));
        let loss = tape.sum_sq(x);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(crate::params::ParamId(1)).data(), &[0.0, 0.0]);
    }

    #[test]
    fn repeated_use_accumulates() {
        // loss = sum(x) + sum(x) => grad = 2 per element
        let mut store = store_with::<f64>(&[(&[2], &[5.0, 7.0])]);
        let mut tape = Tape::new();
        let x = tape.param(&store, crate::params::ParamId(0));
        let s1 = tape.sum(x);
        let s2 = tape.sum(x);
        let loss = tape.add(s1, s2).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(crate::params::ParamId(0)).data(), &[2.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut store = store_with::<f64>(&[(&[2], &[1.0, 2.0])]);
        let mut tape = Tape::new();
        let x = tape.param(&store, crate::params::ParamId(0));
        assert!(matches!(
            tape.backward(x, &mut store),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn linear_identity_passthrough() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(&[2], vec![3.0, -1.0]).unwrap());
        let w = tape.constant(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = tape.constant(Tensor::zeros(&[2]));
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, -1.0]);
    }

    #[test]
    fn linear_hand_case() {
        // x=[1,2], W=[[1,1]], b=[1] -> [4]
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        let w = tape.constant(Tensor::new(&[1, 2], vec![1.0, 1.0]).unwrap());
        let b = tape.constant(Tensor::new(&[1], vec![1.0]).unwrap());
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);
    }

    #[test]
    fn conv2d_identity_kernel_passthrough() {
        // Center-tap-only 3x3 kernel reproduces the input at stride 1.
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let mut kdata = vec![0.0; 9];
        kdata[4] = 1.0;
        let w = tape.constant(Tensor::new(&[1, 1, 3, 3], kdata).unwrap());
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv2d(x, w, b, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn conv2d_stride2_halves_spatial_dims() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 4, 4]));
        let w = tape.constant(Tensor::zeros(&[1, 1, 3, 3]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv2d(x, w, b, 2).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 2, 2]);
    }

    #[test]
    fn conv2d_matches_quadruple_loop_oracle() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x: Tensor<f64> = Tensor::rand_uniform(&mut rng, &[2, 4, 6], -1.0, 1.0);
        let w: Tensor<f64> = Tensor::rand_uniform(&mut rng, &[3, 2, 3, 3], -1.0, 1.0);
        let b: Tensor<f64> = Tensor::rand_uniform(&mut rng, &[3], -1.0, 1.0);
        for stride in [1usize, 2] {
            let mut tape = Tape::new();
            let xn = tape.constant(x.clone());
            let wn = tape.constant(w.clone());
            let bn = tape.constant(b.clone());
            let y = tape.conv2d(xn, wn, bn, stride).unwrap();

            // Direct summation oracle.
            let (ho, wo) = (4 / stride, 6 / stride);
            for oc in 0..3 {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc2 = b.data()[oc];
                        for ic in 0..2 {
                            for ky in 0..3usize {
                                for kx in 0..3usize {
                                    let iy = (oy * stride + ky) as isize - 1;
                                    let ix = (ox * stride + kx) as isize - 1;
                                    if iy < 0 || iy >= 4 || ix < 0 || ix >= 6 {
                                        continue;
                                    }
                                    acc2 += x.data()[(ic * 4 + iy as usize) * 6 + ix as usize]
                                        * w.data()[((oc * 2 + ic) * 3 + ky) * 3 + kx];
                                }
                            }
                        }
                        let got = tape.value(y).data()[(oc * ho + oy) * wo + ox];
                        assert!((got - acc2).abs() < 1e-12, "stride {stride} mismatch");
                    }
                }
            }
        }
    }

    #[test]
    fn conv2d_rejects_bad_stride_and_odd_dims() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 4, 4]));
        let w = tape.constant(Tensor::zeros(&[1, 1, 3, 3]));
        let b = tape.constant(Tensor::zeros(&[1]));
        assert!(matches!(tape.conv2d(x, w, b, 3), Err(Error::Config(_))));
        let x5 = tape.constant(Tensor::zeros(&[1, 5, 4]));
        assert!(matches!(tape.conv2d(x5, w, b, 2), Err(Error::Config(_))));
    }

    #[test]
    fn conv1d_pointwise_matches_per_point_matmul() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let x: Tensor<f64> = Tensor::rand_uniform(&mut rng, &[3, 5], -1.0, 1.0);
        let w: Tensor<f64> = Tensor::rand_uniform(&mut rng, &[4, 3], -1.0, 1.0);
        let b: Tensor<f64> = Tensor::rand_uniform(&mut rng, &[4], -1.0, 1.0);
        let mut tape = Tape::new();
        let xn = tape.constant(x.clone());
        let wn = tape.constant(w.clone());
        let bn = tape.constant(b.clone());
        let y = tape.conv1d_pointwise(xn, wn, bn).unwrap();
        for u in 0..5 {
            for oc in 0..4 {
                let mut acc2 = b.data()[oc];
                for ic in 0..3 {
                    acc2 += w.data()[oc * 3 + ic] * x.data()[ic * 5 + u];
                }
                assert!((tape.value(y).data()[oc * 5 + u] - acc2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv1d_point_permutation_permutes_output() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x: Tensor<f64> = Tensor::rand_uniform(&mut rng, &[3, 4], -1.0, 1.0);
        let w: Tensor<f64> = Tensor::rand_uniform(&mut rng, &[2, 3], -1.0, 1.0);
        let b: Tensor<f64> = Tensor::rand_uniform(&mut rng, &[2], -1.0, 1.0);
        // Swap points 0 and 3.
        let mut xp = x.clone();
        for c in 0..3 {
            xp.data_mut().swap(c * 4, c * 4 + 3);
        }
        let mut tape = Tape::new();
        let (xn, xpn) = (tape.constant(x), tape.constant(xp));
        let wn = tape.constant(w);
        let bn = tape.constant(b);
        let y = tape.conv1d_pointwise(xn, wn, bn).unwrap();
        let yp = tape.conv1d_pointwise(xpn, wn, bn).unwrap();
        for oc in 0..2 {
            assert_eq!(tape.value(y).data()[oc * 4], tape.value(yp).data()[oc * 4 + 3]);
            assert_eq!(tape.value(y).data()[oc * 4 + 3], tape.value(yp).data()[oc * 4]);
        }
    }

    #[test]
    fn global_max_pool_basics() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(&[2, 3], vec![1.0, 5.0, 2.0, -3.0, -1.0, -2.0]).unwrap());
        let y = tape.global_max_pool(x).unwrap();
        assert_eq!(tape.value(y).data(), &[5.0, -1.0]);

        let single = tape.constant(Tensor::new(&[2, 1], vec![0.5, -0.5]).unwrap());
        let ys = tape.global_max_pool(single).unwrap();
        assert_eq!(tape.value(ys).data(), &[0.5, -0.5]);
    }

    #[test]
    fn global_max_pool_tie_routes_to_first_index() {
        let mut store = store_with::<f64>(&[(&[1, 3], &[2.0, 2.0, 1.0])]);
        let mut tape = Tape::new();
        let x = tape.param(&store, crate::params::ParamId(0));
        let y = tape.global_max_pool(x).unwrap();
        let loss = tape.sum(y);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(crate::params::ParamId(0)).data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let x: Tensor<f64> = Tensor::rand_uniform(&mut rng, &[4, 7], -5.0, 5.0);
        let mut tape = Tape::new();
        let xn = tape.constant(x);
        let y = tape.softmax_rows(xn).unwrap();
        for i in 0..4 {
            let s: f64 = tape.value(y).data()[i * 7..(i + 1) * 7].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn cross_entropy_pick_matches_manual_softmax() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.constant(Tensor::new(&[3], vec![1.0, 2.0, 0.5]).unwrap());
        let l = tape.cross_entropy_pick(logits, 1).unwrap();
        let denom: f64 = [1.0f64, 2.0, 0.5].iter().map(|v| v.exp()).sum();
        let expected = -( (2.0f64).exp() / denom ).ln();
        assert!((tape.scalar_value(l) - expected).abs() < 1e-12);
    }

    #[test]
    fn kl_gauss_zero_at_standard_normal() {
        let mut tape = Tape::<f64>::new();
        let mu = tape.constant(Tensor::zeros(&[4]));
        let sl = tape.constant(Tensor::zeros(&[4]));
        let kl = tape.kl_gauss(mu, sl).unwrap();
        assert_eq!(tape.scalar_value(kl), 0.0);
    }

    #[test]
    fn kl_gauss_positive_when_perturbed() {
        let mut tape = Tape::<f64>::new();
        for (m, s) in [(0.5, 0.0), (0.0, 0.7), (-0.3, -0.4)] {
            let mu = tape.constant(Tensor::full(&[4], m));
            let sl = tape.constant(Tensor::full(&[4], s));
            let kl = tape.kl_gauss(mu, sl).unwrap();
            assert!(tape.scalar_value(kl) > 0.0, "KL at mu={m}, sl={s}");
        }
    }

    #[test]
    fn upsample_nearest_doubles_cells() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(&[1, 1, 2], vec![1.0, 2.0]).unwrap());
        let y = tape.upsample2x(x).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 2, 4]);
        assert_eq!(tape.value(y).data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn cosine_bank_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(&[2], vec![1.0, 0.0]).unwrap());
        let bank = Tensor::new(&[3, 2], vec![2.0, 0.0, 0.0, 5.0, -1.0, 0.0]).unwrap();
        let y = tape.cosine_bank(x, &bank).unwrap();
        let v = tape.value(y).data();
        assert!((v[0] - 1.0).abs() < 1e-12);
        assert!(v[1].abs() < 1e-12);
        assert!((v[2] + 1.0).abs() < 1e-12);
    }
}
