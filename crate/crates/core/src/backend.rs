//! Evaluation backend abstraction.
//!
//! Module forwards are written once against this trait. [`Eager`] evaluates
//! tensors directly for the forward/bench paths; [`crate::tape::Tape`]
//! implements the same surface while recording the computation graph for
//! reverse-mode differentiation. Both route through the identical kernels in
//! [`crate::ops`], so a taped replay reproduces eager values bit-for-bit.

use std::marker::PhantomData;

use crate::error::Result;
use crate::ops;
use crate::ops::{Activation, ConvMeta, Padding};
use crate::tensor::{Scalar, Tensor};

pub trait Backend {
    type S: Scalar;
    type Val: Clone;

    /// Inject a tensor the gradient pass should treat as constant.
    fn constant(&mut self, t: &Tensor<Self::S>) -> Self::Val;
    /// Inject a named differentiable leaf.
    fn param(&mut self, name: &str, t: &Tensor<Self::S>) -> Self::Val;
    fn shape(&self, v: &Self::Val) -> Vec<usize>;
    /// Materialize a value (used by callers that need concrete outputs).
    fn tensor(&self, v: &Self::Val) -> Tensor<Self::S>;

    fn conv2d(
        &mut self,
        x: &Self::Val,
        weight: &Self::Val,
        bias: Option<&Self::Val>,
        meta: &ConvMeta,
    ) -> Result<Self::Val>;
    fn conv1d_channels(&mut self, desc: &Self::Val, weight: &Self::Val) -> Result<Self::Val>;
    fn avg_pool2d(&mut self, x: &Self::Val, k: usize, stride: usize, padding: Padding) -> Result<Self::Val>;
    fn max_pool2d(&mut self, x: &Self::Val, k: usize, stride: usize) -> Result<Self::Val>;
    fn global_avg_pool(&mut self, x: &Self::Val) -> Result<Self::Val>;
    fn spatial_descriptor_pool(&mut self, x: &Self::Val) -> Result<Self::Val>;
    fn activation(&mut self, x: &Self::Val, kind: Activation) -> Result<Self::Val>;
    fn softmax(&mut self, x: &Self::Val) -> Result<Self::Val>;
    fn linear(&mut self, x: &Self::Val, w: &Self::Val, bias: Option<&Self::Val>) -> Result<Self::Val>;
    fn add(&mut self, a: &Self::Val, b: &Self::Val) -> Result<Self::Val>;
    fn mul(&mut self, a: &Self::Val, b: &Self::Val) -> Result<Self::Val>;
    fn scale(&mut self, x: &Self::Val, c: Self::S) -> Result<Self::Val>;
    fn sum(&mut self, x: &Self::Val) -> Result<Self::Val>;
    fn mul_channel_gate(&mut self, x: &Self::Val, gate: &Self::Val) -> Result<Self::Val>;
    fn mul_spatial_gate(&mut self, x: &Self::Val, gate: &Self::Val) -> Result<Self::Val>;
    fn mul_batch_scalar(&mut self, x: &Self::Val, a: &Self::Val) -> Result<Self::Val>;
    fn mul_global_scalar(&mut self, x: &Self::Val, s: &Self::Val) -> Result<Self::Val>;
    fn column(&mut self, x: &Self::Val, j: usize) -> Result<Self::Val>;
    fn slice_channels(&mut self, x: &Self::Val, from: usize, to: usize) -> Result<Self::Val>;
    fn concat_channels(&mut self, a: &Self::Val, b: &Self::Val) -> Result<Self::Val>;
    fn slice_batch(&mut self, x: &Self::Val, index: usize) -> Result<Self::Val>;
    fn concat_batch(&mut self, parts: &[Self::Val]) -> Result<Self::Val>;
    fn matmul(&mut self, a: &Self::Val, b: &Self::Val) -> Result<Self::Val>;
    fn matmul_nt(&mut self, a: &Self::Val, b: &Self::Val) -> Result<Self::Val>;
    fn slice_cols(&mut self, x: &Self::Val, from: usize, to: usize) -> Result<Self::Val>;
    fn concat_cols(&mut self, parts: &[Self::Val]) -> Result<Self::Val>;
    fn layer_norm(
        &mut self,
        x: &Self::Val,
        gain: &Self::Val,
        bias: &Self::Val,
        eps: Self::S,
    ) -> Result<Self::Val>;
    fn nchw_to_tokens(&mut self, x: &Self::Val) -> Result<Self::Val>;
    fn tokens_to_nchw(&mut self, x: &Self::Val, h: usize, w: usize) -> Result<Self::Val>;
}

/// Direct evaluation: values are tensors, nothing is recorded.
pub struct Eager<S>(PhantomData<S>);

impl<S> Default for Eager<S> {
    fn default() -> Self {
        Eager(PhantomData)
    }
}

impl<S: Scalar> Backend for Eager<S> {
    type S = S;
    type Val = Tensor<S>;

    fn constant(&mut self, t: &Tensor<S>) -> Tensor<S> {
        t.clone()
    }
    fn param(&mut self, _name: &str, t: &Tensor<S>) -> Tensor<S> {
        t.clone()
    }
    fn shape(&self, v: &Tensor<S>) -> Vec<usize> {
        v.shape().to_vec()
    }
    fn tensor(&self, v: &Tensor<S>) -> Tensor<S> {
        v.clone()
    }

    fn conv2d(
        &mut self,
        x: &Tensor<S>,
        weight: &Tensor<S>,
        bias: Option<&Tensor<S>>,
        meta: &ConvMeta,
    ) -> Result<Tensor<S>> {
        ops::conv2d_raw(x, meta, weight, bias)
    }
    fn conv1d_channels(&mut self, desc: &Tensor<S>, weight: &Tensor<S>) -> Result<Tensor<S>> {
        ops::conv1d_channels(desc, weight)
    }
    fn avg_pool2d(&mut self, x: &Tensor<S>, k: usize, stride: usize, padding: Padding) -> Result<Tensor<S>> {
        ops::avg_pool2d(x, k, stride, padding)
    }
    fn max_pool2d(&mut self, x: &Tensor<S>, k: usize, stride: usize) -> Result<Tensor<S>> {
        ops::max_pool2d(x, k, stride)
    }
    fn global_avg_pool(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        ops::global_avg_pool(x)
    }
    fn spatial_descriptor_pool(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        ops::spatial_descriptor_pool(x)
    }
    fn activation(&mut self, x: &Tensor<S>, kind: Activation) -> Result<Tensor<S>> {
        Ok(ops::activation(x, kind))
    }
    fn softmax(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        ops::softmax(x)
    }
    fn linear(&mut self, x: &Tensor<S>, w: &Tensor<S>, bias: Option<&Tensor<S>>) -> Result<Tensor<S>> {
        ops::linear(x, w, bias)
    }
    fn add(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        ops::add(a, b)
    }
    fn mul(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        ops::mul(a, b)
    }
    fn scale(&mut self, x: &Tensor<S>, c: S) -> Result<Tensor<S>> {
        Ok(ops::scale(x, c))
    }
    fn sum(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(Tensor::scalar(ops::sum_all(x)))
    }
    fn mul_channel_gate(&mut self, x: &Tensor<S>, gate: &Tensor<S>) -> Result<Tensor<S>> {
        ops::mul_channel_gate(x, gate)
    }
    fn mul_spatial_gate(&mut self, x: &Tensor<S>, gate: &Tensor<S>) -> Result<Tensor<S>> {
        ops::mul_spatial_gate(x, gate)
    }
    fn mul_batch_scalar(&mut self, x: &Tensor<S>, a: &Tensor<S>) -> Result<Tensor<S>> {
        ops::mul_batch_scalar(x, a)
    }
    fn mul_global_scalar(&mut self, x: &Tensor<S>, s: &Tensor<S>) -> Result<Tensor<S>> {
        ops::mul_global_scalar(x, s)
    }
    fn column(&mut self, x: &Tensor<S>, j: usize) -> Result<Tensor<S>> {
        ops::column(x, j)
    }
    fn slice_channels(&mut self, x: &Tensor<S>, from: usize, to: usize) -> Result<Tensor<S>> {
        ops::slice_channels(x, from, to)
    }
    fn concat_channels(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        ops::concat_channels(a, b)
    }
    fn slice_batch(&mut self, x: &Tensor<S>, index: usize) -> Result<Tensor<S>> {
        ops::slice_batch(x, index)
    }
    fn concat_batch(&mut self, parts: &[Tensor<S>]) -> Result<Tensor<S>> {
        let refs: Vec<&Tensor<S>> = parts.iter().collect();
        ops::concat_batch(&refs)
    }
    fn matmul(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        ops::matmul(a, b)
    }
    fn matmul_nt(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        ops::matmul_nt(a, b)
    }
    fn slice_cols(&mut self, x: &Tensor<S>, from: usize, to: usize) -> Result<Tensor<S>> {
        ops::slice_cols(x, from, to)
    }
    fn concat_cols(&mut self, parts: &[Tensor<S>]) -> Result<Tensor<S>> {
        let refs: Vec<&Tensor<S>> = parts.iter().collect();
        ops::concat_cols(&refs)
    }
    fn layer_norm(&mut self, x: &Tensor<S>, gain: &Tensor<S>, bias: &Tensor<S>, eps: S) -> Result<Tensor<S>> {
        ops::layer_norm(x, gain, bias, eps)
    }
    fn nchw_to_tokens(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        ops::nchw_to_tokens(x)
    }
    fn tokens_to_nchw(&mut self, x: &Tensor<S>, h: usize, w: usize) -> Result<Tensor<S>> {
        ops::tokens_to_nchw(x, h, w)
    }
}
