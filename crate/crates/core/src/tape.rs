//! Recorded computation graph with reverse-mode differentiation.
//!
//! Recording happens through the [`Backend`] trait: each method computes the
//! forward value with the same kernel the eager backend uses, stores it, and
//! pushes one node. `backward` walks the nodes in reverse, accumulating
//! vector-Jacobian products into per-node adjoints. A tape is a single-stream
//! object: record, then replay, on one thread.

use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::ops::{self, Activation, ConvMeta, Padding};
use crate::tensor::{Scalar, Tensor};

pub type VarId = usize;

#[derive(Debug, Clone)]
enum Node {
    Leaf,
    Conv2d { x: VarId, w: VarId, b: Option<VarId>, meta: ConvMeta },
    Conv1dChannels { x: VarId, w: VarId },
    AvgPool { x: VarId, k: usize, stride: usize, padding: Padding },
    MaxPool { x: VarId, k: usize, stride: usize },
    GlobalAvgPool { x: VarId },
    SpatialDescriptorPool { x: VarId },
    Activation { x: VarId, kind: Activation },
    Softmax { x: VarId },
    Linear { x: VarId, w: VarId, b: Option<VarId> },
    Add { a: VarId, b: VarId },
    Mul { a: VarId, b: VarId },
    Scale { x: VarId, c: f64 },
    Sum { x: VarId },
    MulChannelGate { x: VarId, g: VarId },
    MulSpatialGate { x: VarId, g: VarId },
    MulBatchScalar { x: VarId, a: VarId },
    MulGlobalScalar { x: VarId, s: VarId },
    Column { x: VarId, j: usize },
    SliceChannels { x: VarId, from: usize },
    ConcatChannels { a: VarId, b: VarId },
    SliceBatch { x: VarId, index: usize },
    ConcatBatch { parts: Vec<VarId> },
    Matmul { a: VarId, b: VarId },
    MatmulNt { a: VarId, b: VarId },
    SliceCols { x: VarId, from: usize },
    ConcatCols { parts: Vec<VarId> },
    LayerNorm { x: VarId, gain: VarId, bias: VarId, eps: f64 },
    NchwToTokens { x: VarId },
    TokensToNchw { x: VarId },
}

/// Perturbation applied to one parameter element at registration time, used
/// by the finite-difference driver to re-run a closure at a shifted point.
#[derive(Debug, Clone, Copy)]
pub struct Perturbation {
    /// Index into the parameter registration order.
    pub param: usize,
    /// Flat element index within that parameter.
    pub elem: usize,
    pub delta: f64,
}

pub struct Tape<S: Scalar> {
    nodes: Vec<Node>,
    values: Vec<Tensor<S>>,
    params: Vec<(String, VarId)>,
    perturbation: Option<Perturbation>,
    params_seen: usize,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), values: Vec::new(), params: Vec::new(), perturbation: None, params_seen: 0 }
    }

    pub fn with_perturbation(p: Perturbation) -> Self {
        let mut t = Self::new();
        t.perturbation = Some(p);
        t
    }

    fn push(&mut self, node: Node, value: Tensor<S>) -> VarId {
        let id = self.nodes.len();
        self.nodes.push(node);
        self.values.push(value);
        id
    }

    pub fn value(&self, id: VarId) -> &Tensor<S> {
        &self.values[id]
    }

    /// Named parameters in registration order.
    pub fn params(&self) -> &[(String, VarId)] {
        &self.params
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Smallest distance to a non-differentiable decision point in the
    /// recorded graph: relu inputs near zero and near-ties in max windows.
    /// Finite-difference checks are only meaningful when this margin is
    /// comfortably larger than the probe step.
    pub fn min_kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for (id, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Activation { x, kind: Activation::Relu } => {
                    for v in self.values[*x].data() {
                        margin = margin.min(v.as_f64().abs());
                    }
                }
                Node::MaxPool { x, k, stride } => {
                    margin = margin.min(max_window_margin(&self.values[*x], *k, *stride));
                }
                Node::SpatialDescriptorPool { x } => {
                    margin = margin.min(channel_max_margin(&self.values[*x]));
                }
                _ => {
                    let _ = id;
                }
            }
        }
        margin
    }

    /// Reverse sweep from a scalar output. Returns one adjoint per node;
    /// parameters are looked up through [`Tape::params`].
    pub fn backward(&self, loss: VarId) -> Result<Vec<Tensor<S>>> {
        if self.values[loss].numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.values[loss].shape()
            )));
        }
        let mut adj: Vec<Tensor<S>> =
            self.values.iter().map(|v| Tensor::zeros(v.shape().to_vec())).collect();
        adj[loss].data_mut()[0] = S::one();

        for id in (0..self.nodes.len()).rev() {
            if adj[id].data().iter().all(|v| *v == S::zero()) {
                continue;
            }
            let d_out = adj[id].clone();
            match &self.nodes[id] {
                Node::Leaf => {}
                Node::Conv2d { x, w, b, meta } => {
                    let (dx, dw, db) = ops::conv2d_backward(
                        &self.values[*x],
                        meta,
                        &self.values[*w],
                        b.is_some(),
                        &d_out,
                    )?;
                    accumulate(&mut adj[*x], &dx);
                    accumulate(&mut adj[*w], &dw);
                    if let (Some(bid), Some(db)) = (b, db) {
                        accumulate(&mut adj[*bid], &db);
                    }
                }
                Node::Conv1dChannels { x, w } => {
                    let (dx, dw) =
                        ops::conv1d_channels_backward(&self.values[*x], &self.values[*w], &d_out)?;
                    accumulate(&mut adj[*x], &dx);
                    accumulate(&mut adj[*w], &dw);
                }
                Node::AvgPool { x, k, stride, padding } => {
                    let dx = ops::avg_pool2d_backward(
                        self.values[*x].shape(),
                        *k,
                        *stride,
                        *padding,
                        &d_out,
                    )?;
                    accumulate(&mut adj[*x], &dx);
                }
                Node::MaxPool { x, k, stride } => {
                    let dx = ops::max_pool2d_backward(&self.values[*x], *k, *stride, &d_out)?;
                    accumulate(&mut adj[*x], &dx);
                }
                Node::GlobalAvgPool { x } => {
                    let dx = ops::global_avg_pool_backward(self.values[*x].shape(), &d_out)?;
                    accumulate(&mut adj[*x], &dx);
                }
                Node::SpatialDescriptorPool { x } => {
                    let dx = ops::spatial_descriptor_pool_backward(&self.values[*x], &d_out)?;
                    accumulate(&mut adj[*x], &dx);
                }
                Node::Activation { x, kind } => {
                    let dx = ops::activation_backward(&self.values[*x], *kind, &d_out);
                    accumulate(&mut adj[*x], &dx);
                }
                Node::Softmax { x } => {
                    let dx = ops::softmax_backward(&self.values[id], &d_out)?;
                    accumulate(&mut adj[*x], &dx);
                }
                Node::Linear { x, w, b } => {
                    let (dx, dw, db) =
                        ops::linear_backward(&self.values[*x], &self.values[*w], b.is_some(), &d_out)?;
                    accumulate(&mut adj[*x], &dx);
                    accumulate(&mut adj[*w], &dw);
                    if let (Some(bid), Some(db)) = (b, db) {
                        accumulate(&mut adj[*bid], &db);
                    }
                }
                Node::Add { a, b } => {
                    accumulate(&mut adj[*a], &d_out);
                    accumulate(&mut adj[*b], &d_out);
                }
                Node::Mul { a, b } => {
                    let da = ops::mul(&d_out, &self.values[*b])?;
                    let db = ops::mul(&d_out, &self.values[*a])?;
                    accumulate(&mut adj[*a], &da);
                    accumulate(&mut adj[*b], &db);
                }
                Node::Scale { x, c } => {
                    let dx = ops::scale(&d_out, S::from_f64(*c));
                    accumulate(&mut adj[*x], &dx);
                }
                Node::Sum { x } => {
                    let g = d_out.data()[0];
                    let dx = Tensor::full(self.values[*x].shape().to_vec(), g);
                    accumulate(&mut adj[*x], &dx);
                }
                Node::MulChannelGate { x, g } => {
                    let (dx, dg) = ops::mul_channel_gate_backward(
                        &self.values[*x],
                        &self.values[*g],
                        &d_out,
                    )?;
                    accumulate(&mut adj[*x], &dx);
                    accumulate(&mut adj[*g], &dg);
                }
                Node::MulSpatialGate { x, g } => {
                    let (dx, dg) = ops::mul_spatial_gate_backward(
                        &self.values[*x],
                        &self.values[*g],
                        &d_out,
                    )?;
                    accumulate(&mut adj[*x], &dx);
                    accumulate(&mut adj[*g], &dg);
                }
                Node::MulBatchScalar { x, a } => {
                    let (dx, da) = ops::mul_batch_scalar_backward(
                        &self.values[*x],
                        &self.values[*a],
                        &d_out,
                    )?;
                    accumulate(&mut adj[*x], &dx);
                    accumulate(&mut adj[*a], &da);
                }
                Node::MulGlobalScalar { x, s } => {
                    let sv = self.values[*s].data()[0];
                    let dx = ops::scale(&d_out, sv);
                    accumulate(&mut adj[*x], &dx);
                    let ds = d_out
                        .data()
                        .iter()
                        .zip(self.values[*x].data())
                        .fold(S::zero(), |acc, (&g, &xv)| acc + g * xv);
                    let ds = Tensor::scalar(ds);
                    accumulate(&mut adj[*s], &ds);
                }
                Node::Column { x, j } => {
                    let (n, k) = self.values[*x].dims2()?;
                    let mut dx = Tensor::zeros(vec![n, k]);
                    for bi in 0..n {
                        dx.data_mut()[bi * k + j] = d_out.data()[bi];
                    }
                    accumulate(&mut adj[*x], &dx);
                }
                Node::SliceChannels { x, from } => {
                    let dx = ops::slice_channels_backward(self.values[*x].shape(), *from, &d_out)?;
                    accumulate(&mut adj[*x], &dx);
                }
                Node::ConcatChannels { a, b } => {
                    let ca = self.values[*a].shape()[1];
                    let cb = self.values[*b].shape()[1];
                    if ca > 0 {
                        let da = ops::slice_channels(&d_out, 0, ca)?;
                        accumulate(&mut adj[*a], &da);
                    }
                    if cb > 0 {
                        let db = ops::slice_channels(&d_out, ca, ca + cb)?;
                        accumulate(&mut adj[*b], &db);
                    }
                }
                Node::SliceBatch { x, index } => {
                    let shape = self.values[*x].shape().to_vec();
                    let chw: usize = shape[1..].iter().product();
                    let mut dx = Tensor::zeros(shape);
                    dx.data_mut()[index * chw..(index + 1) * chw].copy_from_slice(d_out.data());
                    accumulate(&mut adj[*x], &dx);
                }
                Node::ConcatBatch { parts } => {
                    let mut off = 0;
                    for p in parts {
                        let len = self.values[*p].numel();
                        let mut dp = Tensor::zeros(self.values[*p].shape().to_vec());
                        dp.data_mut().copy_from_slice(&d_out.data()[off..off + len]);
                        accumulate(&mut adj[*p], &dp);
                        off += len;
                    }
                }
                Node::Matmul { a, b } => {
                    // dA = dY B^T, dB = A^T dY
                    let bt = ops::transpose2(&self.values[*b])?;
                    let da = ops::matmul(&d_out, &bt)?;
                    let at = ops::transpose2(&self.values[*a])?;
                    let db = ops::matmul(&at, &d_out)?;
                    accumulate(&mut adj[*a], &da);
                    accumulate(&mut adj[*b], &db);
                }
                Node::MatmulNt { a, b } => {
                    // Y = A B^T: dA = dY B, dB = dY^T A
                    let da = ops::matmul(&d_out, &self.values[*b])?;
                    let dt = ops::transpose2(&d_out)?;
                    let db = ops::matmul(&dt, &self.values[*a])?;
                    accumulate(&mut adj[*a], &da);
                    accumulate(&mut adj[*b], &db);
                }
                Node::SliceCols { x, from } => {
                    let (n, k) = self.values[*x].dims2()?;
                    let width = d_out.shape()[1];
                    let mut dx = Tensor::zeros(vec![n, k]);
                    for r in 0..n {
                        for c in 0..width {
                            dx.data_mut()[r * k + from + c] = d_out.data()[r * width + c];
                        }
                    }
                    accumulate(&mut adj[*x], &dx);
                }
                Node::ConcatCols { parts } => {
                    let mut off = 0;
                    for p in parts {
                        let (_, pk) = self.values[*p].dims2()?;
                        let dp = ops::slice_cols(&d_out, off, off + pk)?;
                        accumulate(&mut adj[*p], &dp);
                        off += pk;
                    }
                }
                Node::LayerNorm { x, gain, bias, eps } => {
                    let (dx, dg, db) = ops::layer_norm_backward(
                        &self.values[*x],
                        &self.values[*gain],
                        S::from_f64(*eps),
                        &d_out,
                    )?;
                    accumulate(&mut adj[*x], &dx);
                    accumulate(&mut adj[*gain], &dg);
                    accumulate(&mut adj[*bias], &db);
                }
                Node::NchwToTokens { x } => {
                    let (_, _, h, w) = self.values[*x].dims4()?;
                    let dx = ops::tokens_to_nchw(&d_out, h, w)?;
                    accumulate(&mut adj[*x], &dx);
                }
                Node::TokensToNchw { x, .. } => {
                    let dx = ops::nchw_to_tokens(&d_out)?;
                    accumulate(&mut adj[*x], &dx);
                }
            }
        }
        Ok(adj)
    }
}

fn accumulate<S: Scalar>(into: &mut Tensor<S>, grad: &Tensor<S>) {
    debug_assert_eq!(into.shape(), grad.shape());
    for (a, &g) in into.data_mut().iter_mut().zip(grad.data()) {
        *a = *a + g;
    }
}

/// Gap between the winner and the best value at a different input index in
/// every replicate-padded pooling window. A repeated clamped element is the
/// same input, not a tie.
fn max_window_margin<S: Scalar>(x: &Tensor<S>, k: usize, stride: usize) -> f64 {
    let Ok((n, c, h, w)) = x.dims4() else { return f64::INFINITY };
    let pad = (k - 1) / 2;
    let clamp = |i: isize, extent: usize| i.clamp(0, extent as isize - 1) as usize;
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut margin = f64::INFINITY;
    for p in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                let mut runner = f64::NEG_INFINITY;
                for ky in 0..k {
                    let iy = clamp((oy * stride + ky) as isize - pad as isize, h);
                    for kx in 0..k {
                        let ix = clamp((ox * stride + kx) as isize - pad as isize, w);
                        let idx = (p * h + iy) * w + ix;
                        let v = x.data()[idx].as_f64();
                        if idx == best_idx {
                            continue;
                        }
                        if v > best {
                            runner = best;
                            best = v;
                            best_idx = idx;
                        } else if v > runner {
                            runner = v;
                        }
                    }
                }
                if runner.is_finite() {
                    margin = margin.min(best - runner);
                }
            }
        }
    }
    margin
}

/// Gap between the best and second-best channel at every position.
fn channel_max_margin<S: Scalar>(x: &Tensor<S>) -> f64 {
    let Ok((n, c, h, w)) = x.dims4() else { return f64::INFINITY };
    if c < 2 {
        return f64::INFINITY;
    }
    let hw = h * w;
    let mut margin = f64::INFINITY;
    for bi in 0..n {
        for i in 0..hw {
            let mut best = f64::NEG_INFINITY;
            let mut runner = f64::NEG_INFINITY;
            for ch in 0..c {
                let v = x.data()[(bi * c + ch) * hw + i].as_f64();
                if v > best {
                    runner = best;
                    best = v;
                } else if v > runner {
                    runner = v;
                }
            }
            margin = margin.min(best - runner);
        }
    }
    margin
}

impl<S: Scalar> Backend for Tape<S> {
    type S = S;
    type Val = VarId;

    fn constant(&mut self, t: &Tensor<S>) -> VarId {
        self.push(Node::Leaf, t.clone())
    }

    fn param(&mut self, name: &str, t: &Tensor<S>) -> VarId {
        let mut value = t.clone();
        if let Some(p) = self.perturbation {
            if p.param == self.params_seen {
                let v = value.data()[p.elem];
                value.data_mut()[p.elem] = v + S::from_f64(p.delta);
            }
        }
        self.params_seen += 1;
        let id = self.push(Node::Leaf, value);
        self.params.push((name.to_string(), id));
        id
    }

    fn shape(&self, v: &VarId) -> Vec<usize> {
        self.values[*v].shape().to_vec()
    }

    fn tensor(&self, v: &VarId) -> Tensor<S> {
        self.values[*v].clone()
    }

    fn conv2d(&mut self, x: &VarId, w: &VarId, b: Option<&VarId>, meta: &ConvMeta) -> Result<VarId> {
        let out = ops::conv2d_raw(
            &self.values[*x],
            meta,
            &self.values[*w],
            b.map(|id| &self.values[*id]),
        )?;
        Ok(self.push(Node::Conv2d { x: *x, w: *w, b: b.copied(), meta: *meta }, out))
    }

    fn conv1d_channels(&mut self, desc: &VarId, weight: &VarId) -> Result<VarId> {
        let out = ops::conv1d_channels(&self.values[*desc], &self.values[*weight])?;
        Ok(self.push(Node::Conv1dChannels { x: *desc, w: *weight }, out))
    }

    fn avg_pool2d(&mut self, x: &VarId, k: usize, stride: usize, padding: Padding) -> Result<VarId> {
        let out = ops::avg_pool2d(&self.values[*x], k, stride, padding)?;
        Ok(self.push(Node::AvgPool { x: *x, k, stride, padding }, out))
    }

    fn max_pool2d(&mut self, x: &VarId, k: usize, stride: usize) -> Result<VarId> {
        let out = ops::max_pool2d(&self.values[*x], k, stride)?;
        Ok(self.push(Node::MaxPool { x: *x, k, stride }, out))
    }

    fn global_avg_pool(&mut self, x: &VarId) -> Result<VarId> {
        let out = ops::global_avg_pool(&self.values[*x])?;
        Ok(self.push(Node::GlobalAvgPool { x: *x }, out))
    }

    fn spatial_descriptor_pool(&mut self, x: &VarId) -> Result<VarId> {
        let out = ops::spatial_descriptor_pool(&self.values[*x])?;
        Ok(self.push(Node::SpatialDescriptorPool { x: *x }, out))
    }

    fn activation(&mut self, x: &VarId, kind: Activation) -> Result<VarId> {
        let out = ops::activation(&self.values[*x], kind);
        Ok(self.push(Node::Activation { x: *x, kind }, out))
    }

    fn softmax(&mut self, x: &VarId) -> Result<VarId> {
        let out = ops::softmax(&self.values[*x])?;
        Ok(self.push(Node::Softmax { x: *x }, out))
    }

    fn linear(&mut self, x: &VarId, w: &VarId, b: Option<&VarId>) -> Result<VarId> {
        let out = ops::linear(&self.values[*x], &self.values[*w], b.map(|id| &self.values[*id]))?;
        Ok(self.push(Node::Linear { x: *x, w: *w, b: b.copied() }, out))
    }

    fn add(&mut self, a: &VarId, b: &VarId) -> Result<VarId> {
        let out = ops::add(&self.values[*a], &self.values[*b])?;
        Ok(self.push(Node::Add { a: *a, b: *b }, out))
    }

    fn mul(&mut self, a: &VarId, b: &VarId) -> Result<VarId> {
        let out = ops::mul(&self.values[*a], &self.values[*b])?;
        Ok(self.push(Node::Mul { a: *a, b: *b }, out))
    }

    fn scale(&mut self, x: &VarId, c: S) -> Result<VarId> {
        let out = ops::scale(&self.values[*x], c);
        Ok(self.push(Node::Scale { x: *x, c: c.as_f64() }, out))
    }

    fn sum(&mut self, x: &VarId) -> Result<VarId> {
        let out = Tensor::scalar(ops::sum_all(&self.values[*x]));
        Ok(self.push(Node::Sum { x: *x }, out))
    }

    fn mul_channel_gate(&mut self, x: &VarId, gate: &VarId) -> Result<VarId> {
        let out = ops::mul_channel_gate(&self.values[*x], &self.values[*gate])?;
        Ok(self.push(Node::MulChannelGate { x: *x, g: *gate }, out))
    }

    fn mul_spatial_gate(&mut self, x: &VarId, gate: &VarId) -> Result<VarId> {
        let out = ops::mul_spatial_gate(&self.values[*x], &self.values[*gate])?;
        Ok(self.push(Node::MulSpatialGate { x: *x, g: *gate }, out))
    }

    fn mul_batch_scalar(&mut self, x: &VarId, a: &VarId) -> Result<VarId> {
        let out = ops::mul_batch_scalar(&self.values[*x], &self.values[*a])?;
        Ok(self.push(Node::MulBatchScalar { x: *x, a: *a }, out))
    }

    fn mul_global_scalar(&mut self, x: &VarId, s: &VarId) -> Result<VarId> {
        let out = ops::mul_global_scalar(&self.values[*x], &self.values[*s])?;
        Ok(self.push(Node::MulGlobalScalar { x: *x, s: *s }, out))
    }

    fn column(&mut self, x: &VarId, j: usize) -> Result<VarId> {
        let out = ops::column(&self.values[*x], j)?;
        Ok(self.push(Node::Column { x: *x, j }, out))
    }

    fn slice_channels(&mut self, x: &VarId, from: usize, to: usize) -> Result<VarId> {
        let out = ops::slice_channels(&self.values[*x], from, to)?;
        Ok(self.push(Node::SliceChannels { x: *x, from }, out))
    }

    fn concat_channels(&mut self, a: &VarId, b: &VarId) -> Result<VarId> {
        let out = ops::concat_channels(&self.values[*a], &self.values[*b])?;
        Ok(self.push(Node::ConcatChannels { a: *a, b: *b }, out))
    }

    fn slice_batch(&mut self, x: &VarId, index: usize) -> Result<VarId> {
        let out = ops::slice_batch(&self.values[*x], index)?;
        Ok(self.push(Node::SliceBatch { x: *x, index }, out))
    }

    fn concat_batch(&mut self, parts: &[VarId]) -> Result<VarId> {
        let tensors: Vec<&Tensor<S>> = parts.iter().map(|id| &self.values[*id]).collect();
        let out = ops::concat_batch(&tensors)?;
        Ok(self.push(Node::ConcatBatch { parts: parts.to_vec() }, out))
    }

    fn matmul(&mut self, a: &VarId, b: &VarId) -> Result<VarId> {
        let out = ops::matmul(&self.values[*a], &self.values[*b])?;
        Ok(self.push(Node::Matmul { a: *a, b: *b }, out))
    }

    fn matmul_nt(&mut self, a: &VarId, b: &VarId) -> Result<VarId> {
        let out = ops::matmul_nt(&self.values[*a], &self.values[*b])?;
        Ok(self.push(Node::MatmulNt { a: *a, b: *b }, out))
    }

    fn slice_cols(&mut self, x: &VarId, from: usize, to: usize) -> Result<VarId> {
        let out = ops::slice_cols(&self.values[*x], from, to)?;
        Ok(self.push(Node::SliceCols { x: *x, from }, out))
    }

    fn concat_cols(&mut self, parts: &[VarId]) -> Result<VarId> {
        let tensors: Vec<&Tensor<S>> = parts.iter().map(|id| &self.values[*id]).collect();
        let out = ops::concat_cols(&tensors)?;
        Ok(self.push(Node::ConcatCols { parts: parts.to_vec() }, out))
    }

    fn layer_norm(&mut self, x: &VarId, gain: &VarId, bias: &VarId, eps: S) -> Result<VarId> {
        let out = ops::layer_norm(
            &self.values[*x],
            &self.values[*gain],
            &self.values[*bias],
            eps,
        )?;
        Ok(self.push(Node::LayerNorm { x: *x, gain: *gain, bias: *bias, eps: eps.as_f64() }, out))
    }

    fn nchw_to_tokens(&mut self, x: &VarId) -> Result<VarId> {
        let out = ops::nchw_to_tokens(&self.values[*x])?;
        Ok(self.push(Node::NchwToTokens { x: *x }, out))
    }

    fn tokens_to_nchw(&mut self, x: &VarId, h: usize, w: usize) -> Result<VarId> {
        let out = ops::tokens_to_nchw(&self.values[*x], h, w)?;
        Ok(self.push(Node::TokensToNchw { x: *x }, out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut t = Tape::<f64>::new();
        let x = t.param("x", &Tensor::from_fn(vec![1, 2, 2, 2], |i| i as f64));
        let loss = t.sum(&x).unwrap();
        let adj = t.backward(loss).unwrap();
        for g in adj[x].data() {
            assert_eq!(*g, 1.0);
        }
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut t = Tape::<f64>::new();
        let x = t.param("x", &Tensor::zeros(vec![1, 1, 2, 2]));
        let s = t.activation(&x, Activation::Sigmoid).unwrap();
        let loss = t.sum(&s).unwrap();
        let adj = t.backward(loss).unwrap();
        for g in adj[x].data() {
            assert!((g - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::<f64>::new();
        let x = t.param("x", &Tensor::zeros(vec![1, 1, 2, 2]));
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn replay_matches_eager_bitwise() {
        use crate::backend::{Backend, Eager};
        let x = Tensor::from_fn(vec![1, 4, 5, 5], |i| ((i * 37) % 11) as f64 * 0.21 - 1.0);
        let w = Tensor::from_fn(vec![4, 4, 3, 3], |i| ((i * 13) % 7) as f64 * 0.1 - 0.3);
        let meta = ConvMeta {
            in_channels: 4,
            out_channels: 4,
            kernel_h: 3,
            kernel_w: 3,
            stride: 1,
            groups: 1,
            padding: Padding::Zero,
        };

        let mut eager = Eager::<f64>::default();
        let ex = eager.constant(&x);
        let ew = eager.constant(&w);
        let ey = eager.conv2d(&ex, &ew, None, &meta).unwrap();
        let ey = eager.activation(&ey, Activation::Gelu).unwrap();

        let mut tape = Tape::<f64>::new();
        let tx = tape.param("x", &x);
        let tw = tape.param("w", &w);
        let ty = tape.conv2d(&tx, &tw, None, &meta).unwrap();
        let ty = tape.activation(&ty, Activation::Gelu).unwrap();

        assert_eq!(tape.value(ty).data(), ey.data());
    }
}
