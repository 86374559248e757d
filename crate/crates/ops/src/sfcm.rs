//! Spatial aggregation with channel gating: a pointwise channel mix plus
//! depthwise 3x3 and 5x5 branches summed into one tensor, then reweighted
//! per channel by a bottleneck-sigmoid gate computed from the aggregated
//! tensor's pooled descriptor.

use dyfus_core::backend::{Backend, Eager};
use dyfus_core::error::{Error, Result};
use dyfus_core::init::Rng;
use dyfus_core::ops::{Activation, ConvMeta, ConvSpec, Padding};
use dyfus_core::tensor::{Scalar, Tensor};

use crate::params::{join, visit_conv, visit_conv_mut, ParamSet};

pub const DEFAULT_REDUCTION: usize = 16;

#[derive(Debug, Clone)]
pub struct SfcmParams<S> {
    pub channels: usize,
    /// 1x1 channel mixing, C -> C.
    pub pw: ConvSpec<S>,
    /// Depthwise 3x3.
    pub dw3: ConvSpec<S>,
    /// Depthwise 5x5.
    pub dw5: ConvSpec<S>,
    /// `[max(1, C/r), C]`
    pub bottleneck_w1: Tensor<S>,
    /// `[C, max(1, C/r)]`
    pub bottleneck_w2: Tensor<S>,
    pub reduction: usize,
    /// Test hook: replace the gate with a constant, e.g. 1.0 to collapse the
    /// modulation to the identity.
    pub frozen_beta: Option<f64>,
}

fn dw_meta(channels: usize, k: usize) -> ConvMeta {
    ConvMeta {
        in_channels: channels,
        out_channels: channels,
        kernel_h: k,
        kernel_w: k,
        stride: 1,
        groups: channels,
        padding: Padding::Zero,
    }
}

fn pw_meta(channels: usize) -> ConvMeta {
    ConvMeta {
        in_channels: channels,
        out_channels: channels,
        kernel_h: 1,
        kernel_w: 1,
        stride: 1,
        groups: 1,
        padding: Padding::Zero,
    }
}

pub fn bottleneck_width(channels: usize, reduction: usize) -> usize {
    (channels / reduction).max(1)
}

impl<S: Scalar> SfcmParams<S> {
    pub fn init(channels: usize, reduction: usize, rng: &mut Rng) -> Result<Self> {
        if channels == 0 {
            return Err(Error::config("modulation needs at least one channel"));
        }
        if reduction == 0 {
            return Err(Error::config("r: reduction ratio must be >= 1"));
        }
        let hidden = bottleneck_width(channels, reduction);
        let pw = ConvSpec::new(
            pw_meta(channels),
            rng.fan_in_tensor(pw_meta(channels).weight_shape(), channels),
            None,
        )?;
        let dw3 = ConvSpec::new(
            dw_meta(channels, 3),
            rng.fan_in_tensor(dw_meta(channels, 3).weight_shape(), 9),
            None,
        )?;
        let dw5 = ConvSpec::new(
            dw_meta(channels, 5),
            rng.fan_in_tensor(dw_meta(channels, 5).weight_shape(), 25),
            None,
        )?;
        let bottleneck_w1 = rng.fan_in_tensor(vec![hidden, channels], channels);
        let bottleneck_w2 = rng.fan_in_tensor(vec![channels, hidden], hidden);
        Ok(SfcmParams {
            channels,
            pw,
            dw3,
            dw5,
            bottleneck_w1,
            bottleneck_w2,
            reduction,
            frozen_beta: None,
        })
    }

    /// Identity configuration: pw is the identity channel map, both depthwise
    /// branches are zero, and the gate is frozen at 1.
    pub fn identity(channels: usize) -> Result<Self> {
        let hidden = bottleneck_width(channels, DEFAULT_REDUCTION);
        Ok(SfcmParams {
            channels,
            pw: ConvSpec::identity_1x1(channels),
            dw3: ConvSpec::new(dw_meta(channels, 3), Tensor::zeros(dw_meta(channels, 3).weight_shape()), None)?,
            dw5: ConvSpec::new(dw_meta(channels, 5), Tensor::zeros(dw_meta(channels, 5).weight_shape()), None)?,
            bottleneck_w1: Tensor::zeros(vec![hidden, channels]),
            bottleneck_w2: Tensor::zeros(vec![channels, hidden]),
            reduction: DEFAULT_REDUCTION,
            frozen_beta: Some(1.0),
        })
    }

    pub fn with_frozen_beta(mut self, beta: f64) -> Self {
        self.frozen_beta = Some(beta);
        self
    }

    pub fn zero_bottleneck(mut self) -> Self {
        self.bottleneck_w1 = Tensor::zeros(self.bottleneck_w1.shape().to_vec());
        self.bottleneck_w2 = Tensor::zeros(self.bottleneck_w2.shape().to_vec());
        self
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.channels != channels {
            return Err(Error::shape(format!(
                "modulation built for {} channels, input has {channels}",
                self.channels
            )));
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> SfcmParams<T> {
        SfcmParams {
            channels: self.channels,
            pw: self.pw.cast(),
            dw3: self.dw3.cast(),
            dw5: self.dw5.cast(),
            bottleneck_w1: self.bottleneck_w1.cast(),
            bottleneck_w2: self.bottleneck_w2.cast(),
            reduction: self.reduction,
            frozen_beta: self.frozen_beta,
        }
    }
}

impl<S: Scalar> ParamSet<S> for SfcmParams<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        visit_conv(&self.pw, &join(prefix, "pw"), f);
        visit_conv(&self.dw3, &join(prefix, "dw3"), f);
        visit_conv(&self.dw5, &join(prefix, "dw5"), f);
        f(&join(prefix, "bottleneck_w1"), &self.bottleneck_w1);
        f(&join(prefix, "bottleneck_w2"), &self.bottleneck_w2);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        visit_conv_mut(&mut self.pw, &join(prefix, "pw"), f);
        visit_conv_mut(&mut self.dw3, &join(prefix, "dw3"), f);
        visit_conv_mut(&mut self.dw5, &join(prefix, "dw5"), f);
        f(&join(prefix, "bottleneck_w1"), &mut self.bottleneck_w1);
        f(&join(prefix, "bottleneck_w2"), &mut self.bottleneck_w2);
    }
}

/// Forward pass: returns (gated output, aggregated tensor, gate `[N, C]`).
pub fn forward_b<B: Backend>(
    b: &mut B,
    x: &B::Val,
    p: &SfcmParams<B::S>,
    prefix: &str,
) -> Result<(B::Val, B::Val, B::Val)> {
    let shape = b.shape(x);
    p.validate(shape[1])?;
    let n = shape[0];

    let pw_w = b.param(&join(prefix, "pw.weight"), &p.pw.weight);
    let dw3_w = b.param(&join(prefix, "dw3.weight"), &p.dw3.weight);
    let dw5_w = b.param(&join(prefix, "dw5.weight"), &p.dw5.weight);
    let z_pw = b.conv2d(x, &pw_w, None, &p.pw.meta)?;
    let z_3 = b.conv2d(x, &dw3_w, None, &p.dw3.meta)?;
    let z_5 = b.conv2d(x, &dw5_w, None, &p.dw5.meta)?;
    let z_partial = b.add(&z_pw, &z_3)?;
    let z = b.add(&z_partial, &z_5)?;

    let beta = if let Some(fb) = p.frozen_beta {
        b.constant(&Tensor::full(vec![n, p.channels], B::S::from_f64(fb)))
    } else {
        let w1 = b.param(&join(prefix, "bottleneck_w1"), &p.bottleneck_w1);
        let w2 = b.param(&join(prefix, "bottleneck_w2"), &p.bottleneck_w2);
        let desc = b.global_avg_pool(&z)?;
        let hidden = b.linear(&desc, &w1, None)?;
        let hidden = b.activation(&hidden, Activation::Relu)?;
        let logits = b.linear(&hidden, &w2, None)?;
        b.activation(&logits, Activation::Sigmoid)?
    };
    let y = b.mul_channel_gate(&z, &beta)?;
    Ok((y, z, beta))
}

/// Eager forward: `(y, z, beta)` tensors.
pub fn sfcm_forward<S: Scalar>(
    x: &Tensor<S>,
    p: &SfcmParams<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let mut b = Eager::<S>::default();
    forward_b(&mut b, x, p, "sfcm")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> Rng {
        Rng::new(7, 0)
    }

    #[test]
    fn zero_bottleneck_halves_the_aggregate() {
        let p = SfcmParams::<f64>::init(8, 16, &mut rng()).unwrap().zero_bottleneck();
        let x = rng().tensor(vec![1, 8, 6, 6], 1.0);
        let (y, z, beta) = sfcm_forward(&x, &p).unwrap();
        for g in beta.data() {
            assert!((g - 0.5).abs() < 1e-12);
        }
        for (a, b) in y.data().iter().zip(z.data()) {
            assert!((a - b / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_params_reproduce_the_input() {
        let p = SfcmParams::<f64>::identity(5).unwrap();
        let x = rng().tensor(vec![2, 5, 4, 4], 1.0);
        let (y, z, _) = sfcm_forward(&x, &p).unwrap();
        assert_eq!(z.data(), x.data(), "identity pw with zero depthwise must hand back x");
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn gate_is_spatially_uniform_and_open() {
        let p = SfcmParams::<f32>::init(6, 4, &mut rng()).unwrap();
        let x = Rng::new(21, 1).tensor(vec![2, 6, 5, 5], 2.0);
        let (y, z, beta) = sfcm_forward(&x, &p).unwrap();
        for g in beta.data() {
            assert!(*g > 0.0 && *g < 1.0);
        }
        // y / z must equal the same per-channel factor at every position
        for bi in 0..2 {
            for c in 0..6 {
                let g = beta.data()[bi * 6 + c];
                for i in 0..25 {
                    let idx = (bi * 6 + c) * 25 + i;
                    assert!((y.data()[idx] - z.data()[idx] * g).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let p = SfcmParams::<f32>::init(4, 16, &mut rng()).unwrap();
        let x = Tensor::zeros(vec![1, 5, 4, 4]);
        assert!(matches!(sfcm_forward(&x, &p), Err(Error::Shape(_))));
    }
}
