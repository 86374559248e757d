//! Cascaded dual-domain gating: an adaptive-kernel 1-D convolution over the
//! pooled channel descriptor gates channels, then a 7x7 convolution over the
//! mean/max channel descriptor gates positions.

use dyfus_core::backend::{Backend, Eager};
use dyfus_core::error::{Error, Result};
use dyfus_core::init::Rng;
use dyfus_core::ops::{Activation, ConvMeta, ConvSpec, Padding};
use dyfus_core::tensor::{Scalar, Tensor};

use crate::params::{join, visit_conv, visit_conv_mut, ParamSet};

pub const DEFAULT_ECA_B: f64 = 1.0;
pub const DEFAULT_ECA_GAMMA: f64 = 2.0;

/// Adaptive 1-D kernel size: t = (log2(C) + b) / gamma rounded to the
/// nearest odd integer, ties resolved downward, never below 1.
pub fn eca_kernel_size(channels: usize, b: f64, gamma: f64) -> usize {
    assert!(channels >= 1 && gamma > 0.0);
    let t = ((channels as f64).log2() + b) / gamma;
    // nearest odd via k = 2*ceil((t-2)/2) + 1, which rounds half-way cases down
    let k = 2.0 * ((t - 2.0) / 2.0).ceil() + 1.0;
    (k.max(1.0)) as usize
}

#[derive(Debug, Clone)]
pub struct DgaParams<S> {
    pub channels: usize,
    pub eca_b: f64,
    pub eca_gamma: f64,
    /// Learned 1-D kernel of adaptive odd length.
    pub eca_kernel: Tensor<S>,
    /// 7x7, 2 -> 1 channels over the mean/max descriptor planes, no bias.
    pub spatial: ConvSpec<S>,
}

fn spatial_meta() -> ConvMeta {
    ConvMeta {
        in_channels: 2,
        out_channels: 1,
        kernel_h: 7,
        kernel_w: 7,
        stride: 1,
        groups: 1,
        padding: Padding::Zero,
    }
}

impl<S: Scalar> DgaParams<S> {
    pub fn init(channels: usize, eca_b: f64, eca_gamma: f64, rng: &mut Rng) -> Result<Self> {
        if channels == 0 {
            return Err(Error::config("gating needs at least one channel"));
        }
        if eca_gamma <= 0.0 {
            return Err(Error::config("eca_gamma: divisor must be positive"));
        }
        let k = eca_kernel_size(channels, eca_b, eca_gamma);
        if k > channels {
            return Err(Error::config(format!(
                "eca kernel {k} exceeds channel count {channels}"
            )));
        }
        let eca_kernel = rng.fan_in_tensor(vec![k], k);
        let meta = spatial_meta();
        let spatial = ConvSpec::new(meta, rng.fan_in_tensor(meta.weight_shape(), 98), None)?;
        Ok(DgaParams { channels, eca_b, eca_gamma, eca_kernel, spatial })
    }

    pub fn zeroed(channels: usize) -> Result<Self> {
        let mut p = Self::init(channels, DEFAULT_ECA_B, DEFAULT_ECA_GAMMA, &mut Rng::new(0, 0))?;
        p.eca_kernel = Tensor::zeros(p.eca_kernel.shape().to_vec());
        p.spatial.weight = Tensor::zeros(p.spatial.weight.shape().to_vec());
        Ok(p)
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.channels != channels {
            return Err(Error::shape(format!(
                "gating built for {} channels, input has {channels}",
                self.channels
            )));
        }
        let k = self.eca_kernel.numel();
        if k % 2 == 0 || k == 0 {
            return Err(Error::config("eca kernel length must be odd"));
        }
        if k > channels {
            return Err(Error::config(format!("eca kernel {k} exceeds channel count {channels}")));
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> DgaParams<T> {
        DgaParams {
            channels: self.channels,
            eca_b: self.eca_b,
            eca_gamma: self.eca_gamma,
            eca_kernel: self.eca_kernel.cast(),
            spatial: self.spatial.cast(),
        }
    }
}

impl<S: Scalar> ParamSet<S> for DgaParams<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        f(&join(prefix, "eca_kernel"), &self.eca_kernel);
        visit_conv(&self.spatial, &join(prefix, "spatial"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        f(&join(prefix, "eca_kernel"), &mut self.eca_kernel);
        visit_conv_mut(&mut self.spatial, &join(prefix, "spatial"), f);
    }
}

/// Forward pass: returns (output, channel gate `[N, C]`, spatial gate
/// `[N, 1, H, W]`).
pub fn forward_b<B: Backend>(
    b: &mut B,
    x: &B::Val,
    p: &DgaParams<B::S>,
    prefix: &str,
) -> Result<(B::Val, B::Val, B::Val)> {
    let shape = b.shape(x);
    p.validate(shape[1])?;

    let eca = b.param(&join(prefix, "eca_kernel"), &p.eca_kernel);
    let desc = b.global_avg_pool(x)?;
    let mixed = b.conv1d_channels(&desc, &eca)?;
    let c_gate = b.activation(&mixed, Activation::Sigmoid)?;
    let gated = b.mul_channel_gate(x, &c_gate)?;

    let sw = b.param(&join(prefix, "spatial.weight"), &p.spatial.weight);
    let planes = b.spatial_descriptor_pool(&gated)?;
    let sconv = b.conv2d(&planes, &sw, None, &p.spatial.meta)?;
    let s_gate = b.activation(&sconv, Activation::Sigmoid)?;
    let y = b.mul_spatial_gate(&gated, &s_gate)?;
    Ok((y, c_gate, s_gate))
}

/// Eager forward: `(y, c_gate, s_gate)` tensors.
pub fn dga_forward<S: Scalar>(
    x: &Tensor<S>,
    p: &DgaParams<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let mut b = Eager::<S>::default();
    forward_b(&mut b, x, p, "dga")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adaptive_kernel_size_reference_points() {
        // t = (log2(C) + 1) / 2 with the usual b=1, gamma=2
        assert_eq!(eca_kernel_size(256, 1.0, 2.0), 5); // t = 4.5 -> 5
        assert_eq!(eca_kernel_size(64, 1.0, 2.0), 3); // t = 3.5 -> 3
        assert_eq!(eca_kernel_size(2, 1.0, 2.0), 1); // t = 1.0 -> 1
        assert_eq!(eca_kernel_size(8, 1.0, 2.0), 1); // t = 2.0, tie -> down
        assert_eq!(eca_kernel_size(32, 1.0, 2.0), 3); // t = 3.0 -> 3
    }

    #[test]
    fn adaptive_kernel_size_is_odd_and_monotone() {
        let mut last = 0;
        for c in 1..=4096 {
            let k = eca_kernel_size(c, 1.0, 2.0);
            assert_eq!(k % 2, 1);
            assert!(k >= last, "k({c}) = {k} dropped below k = {last}");
            last = k;
        }
    }

    #[test]
    fn zero_weights_quarter_the_input() {
        let p = DgaParams::<f64>::zeroed(8).unwrap();
        let x = Rng::new(61, 1).tensor(vec![1, 8, 6, 6], 1.0);
        let (y, c_gate, s_gate) = dga_forward(&x, &p).unwrap();
        for g in c_gate.data().iter().chain(s_gate.data()) {
            assert!((g - 0.5).abs() < 1e-12);
        }
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gates_lie_strictly_inside_the_unit_interval() {
        let p = DgaParams::<f32>::init(8, 1.0, 2.0, &mut Rng::new(62, 0)).unwrap();
        let x = Rng::new(63, 1).tensor(vec![2, 8, 5, 5], 3.0);
        let (_, c_gate, s_gate) = dga_forward(&x, &p).unwrap();
        for g in c_gate.data().iter().chain(s_gate.data()) {
            assert!(*g > 0.0 && *g < 1.0);
        }
    }

    #[test]
    fn oversized_eca_kernel_rejected() {
        // C=2 forces k=1 via the formula; force a bigger kernel by hand
        let mut p = DgaParams::<f32>::init(2, 1.0, 2.0, &mut Rng::new(64, 0)).unwrap();
        p.eca_kernel = Tensor::zeros(vec![3]);
        let x = Tensor::zeros(vec![1, 2, 8, 8]);
        assert!(matches!(dga_forward(&x, &p), Err(Error::Config(_))));
    }
}
