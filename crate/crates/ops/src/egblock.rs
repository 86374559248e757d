//! Ghost-style feature expansion: a primary convolution emits half the
//! output channels, a cheap depthwise convolution derives the other half
//! from them, and the two halves are concatenated. A residual chain of
//! channel-preserving blocks stacks y_i = y_{i-1} + block(y_{i-1}).

use dyfus_core::backend::{Backend, Eager};
use dyfus_core::error::{Error, Result};
use dyfus_core::init::Rng;
use dyfus_core::ops::{Activation, ConvMeta, ConvSpec, Padding};
use dyfus_core::tensor::{Scalar, Tensor};

use crate::params::{join, visit_conv, visit_conv_mut, ParamSet};

#[derive(Debug, Clone)]
pub struct EgBlockParams<S> {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Standard 3x3, Cin -> Cout/2, with bias.
    pub primary: ConvSpec<S>,
    /// Depthwise 3x3 over the primary's Cout/2 channels, with bias.
    pub cheap: ConvSpec<S>,
    pub act: Activation,
}

impl<S: Scalar> EgBlockParams<S> {
    pub fn init(in_channels: usize, out_channels: usize, rng: &mut Rng) -> Result<Self> {
        if out_channels % 2 != 0 || out_channels == 0 {
            return Err(Error::config(format!(
                "ghost block output channels must be even and positive, got {out_channels}"
            )));
        }
        let half = out_channels / 2;
        let p_meta = ConvMeta {
            in_channels,
            out_channels: half,
            kernel_h: 3,
            kernel_w: 3,
            stride: 1,
            groups: 1,
            padding: Padding::Zero,
        };
        let c_meta = ConvMeta {
            in_channels: half,
            out_channels: half,
            kernel_h: 3,
            kernel_w: 3,
            stride: 1,
            groups: half,
            padding: Padding::Zero,
        };
        let primary = ConvSpec::new(
            p_meta,
            rng.fan_in_tensor(p_meta.weight_shape(), in_channels * 9),
            Some(Tensor::zeros(vec![half])),
        )?;
        let cheap = ConvSpec::new(
            c_meta,
            rng.fan_in_tensor(c_meta.weight_shape(), 9),
            Some(Tensor::zeros(vec![half])),
        )?;
        Ok(EgBlockParams { in_channels, out_channels, primary, cheap, act: Activation::Relu })
    }

    /// All-zero weights: the block emits zeros, so a residual chain of these
    /// is the identity.
    pub fn zeroed(in_channels: usize, out_channels: usize) -> Result<Self> {
        let mut p = Self::init(in_channels, out_channels, &mut Rng::new(0, 0))?;
        p.primary.weight = Tensor::zeros(p.primary.weight.shape().to_vec());
        p.cheap.weight = Tensor::zeros(p.cheap.weight.shape().to_vec());
        Ok(p)
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.in_channels != channels {
            return Err(Error::shape(format!(
                "ghost block built for {} input channels, got {channels}",
                self.in_channels
            )));
        }
        if self.out_channels != 2 * self.primary.meta.out_channels {
            return Err(Error::config(
                "ghost block output channels must be exactly twice the primary's",
            ));
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> EgBlockParams<T> {
        EgBlockParams {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            primary: self.primary.cast(),
            cheap: self.cheap.cast(),
            act: self.act,
        }
    }
}

impl<S: Scalar> ParamSet<S> for EgBlockParams<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        visit_conv(&self.primary, &join(prefix, "primary"), f);
        visit_conv(&self.cheap, &join(prefix, "cheap"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        visit_conv_mut(&mut self.primary, &join(prefix, "primary"), f);
        visit_conv_mut(&mut self.cheap, &join(prefix, "cheap"), f);
    }
}

pub fn forward_b<B: Backend>(
    b: &mut B,
    x: &B::Val,
    p: &EgBlockParams<B::S>,
    prefix: &str,
) -> Result<B::Val> {
    let shape = b.shape(x);
    p.validate(shape[1])?;

    let pw = b.param(&join(prefix, "primary.weight"), &p.primary.weight);
    let pb = p.primary.bias.as_ref().map(|t| b.param(&join(prefix, "primary.bias"), t));
    let primary = b.conv2d(x, &pw, pb.as_ref(), &p.primary.meta)?;
    let primary = b.activation(&primary, p.act)?;

    let cw = b.param(&join(prefix, "cheap.weight"), &p.cheap.weight);
    let cb = p.cheap.bias.as_ref().map(|t| b.param(&join(prefix, "cheap.bias"), t));
    let ghost = b.conv2d(&primary, &cw, cb.as_ref(), &p.cheap.meta)?;
    let ghost = b.activation(&ghost, p.act)?;

    b.concat_channels(&primary, &ghost)
}

pub fn egblock_forward<S: Scalar>(x: &Tensor<S>, p: &EgBlockParams<S>) -> Result<Tensor<S>> {
    let mut b = Eager::<S>::default();
    forward_b(&mut b, x, p, "egblock")
}

/// Residual chain: every block must preserve the channel count.
pub fn chain_forward_b<B: Backend>(
    b: &mut B,
    x: &B::Val,
    blocks: &[EgBlockParams<B::S>],
    prefix: &str,
) -> Result<B::Val> {
    let channels = b.shape(x)[1];
    for (i, blk) in blocks.iter().enumerate() {
        if blk.in_channels != channels || blk.out_channels != channels {
            return Err(Error::config(format!(
                "residual chain block {i} maps {} -> {} channels, must preserve {channels}",
                blk.in_channels, blk.out_channels
            )));
        }
    }
    let mut y = x.clone();
    for (i, blk) in blocks.iter().enumerate() {
        let delta = forward_b(b, &y, blk, &join(prefix, &format!("block{i}")))?;
        y = b.add(&y, &delta)?;
    }
    Ok(y)
}

pub fn egblock_chain<S: Scalar>(x: &Tensor<S>, blocks: &[EgBlockParams<S>]) -> Result<Tensor<S>> {
    let mut b = Eager::<S>::default();
    chain_forward_b(&mut b, x, blocks, "chain")
}
