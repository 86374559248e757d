//! Content-gated three-band decomposition.
//!
//! The input runs through three parallel band proxies: a replicate-padded
//! 3x3 mean pool (low), the identity (mid), and a learnable depthwise 3x3
//! convolution (high), mixed by per-sample softmax weights computed from the
//! pooled channel descriptor. Replicate padding on both non-identity bands
//! keeps the constant-input behavior exact: the low band preserves constants
//! and a zero-sum high-band kernel annihilates them, everywhere including
//! borders.

use dyfus_core::backend::{Backend, Eager};
use dyfus_core::error::{Error, Result};
use dyfus_core::init::{laplacian_3x3, Rng};
use dyfus_core::ops::{Activation, ConvMeta, ConvSpec, Padding};
use dyfus_core::tensor::{Scalar, Tensor};

use crate::params::{join, visit_conv, visit_conv_mut, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HighBandInit {
    Laplacian,
    Random,
}

#[derive(Debug, Clone)]
pub struct DmsdParams<S> {
    pub channels: usize,
    /// `[hidden, C]`, hidden = max(4, C/4).
    pub gate_w1: Tensor<S>,
    /// `[3, hidden]`, one output logit per band.
    pub gate_w2: Tensor<S>,
    /// Depthwise 3x3, replicate padding, no bias.
    pub high_band: ConvSpec<S>,
    /// Test hook: construction-time frozen band weights, bypassing the gate.
    pub frozen_alpha: Option<[f64; 3]>,
}

pub fn gate_hidden_width(channels: usize) -> usize {
    (channels / 4).max(4)
}

pub fn high_band_meta(channels: usize) -> ConvMeta {
    ConvMeta {
        in_channels: channels,
        out_channels: channels,
        kernel_h: 3,
        kernel_w: 3,
        stride: 1,
        groups: channels,
        padding: Padding::Replicate,
    }
}

impl<S: Scalar> DmsdParams<S> {
    pub fn init(channels: usize, rng: &mut Rng, high_init: HighBandInit) -> Result<Self> {
        if channels == 0 {
            return Err(Error::config("band decomposition needs at least one channel"));
        }
        let hidden = gate_hidden_width(channels);
        let gate_w1 = rng.fan_in_tensor(vec![hidden, channels], channels);
        let gate_w2 = rng.fan_in_tensor(vec![3, hidden], hidden);
        let meta = high_band_meta(channels);
        let weight = match high_init {
            HighBandInit::Laplacian => {
                let stamp = laplacian_3x3::<S>();
                Tensor::from_fn(meta.weight_shape(), |i| stamp[i % 9])
            }
            HighBandInit::Random => rng.fan_in_tensor(meta.weight_shape(), 9),
        };
        let high_band = ConvSpec::new(meta, weight, None)?;
        Ok(DmsdParams { channels, gate_w1, gate_w2, high_band, frozen_alpha: None })
    }

    pub fn with_frozen_alpha(mut self, alpha: [f64; 3]) -> Self {
        self.frozen_alpha = Some(alpha);
        self
    }

    /// Zero gate weights, so the gate emits uniform band weights.
    pub fn zero_gate(mut self) -> Self {
        self.gate_w1 = Tensor::zeros(self.gate_w1.shape().to_vec());
        self.gate_w2 = Tensor::zeros(self.gate_w2.shape().to_vec());
        self
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.channels != channels {
            return Err(Error::shape(format!(
                "band decomposition built for {} channels, input has {channels}",
                self.channels
            )));
        }
        if self.gate_w2.shape()[0] != 3 {
            return Err(Error::config("gate must emit exactly three band logits"));
        }
        let m = &self.high_band.meta;
        if m.groups != m.in_channels || m.in_channels != m.out_channels {
            return Err(Error::config("high band kernel must be depthwise"));
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> DmsdParams<T> {
        DmsdParams {
            channels: self.channels,
            gate_w1: self.gate_w1.cast(),
            gate_w2: self.gate_w2.cast(),
            high_band: self.high_band.cast(),
            frozen_alpha: self.frozen_alpha,
        }
    }
}

impl<S: Scalar> ParamSet<S> for DmsdParams<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        f(&join(prefix, "gate_w1"), &self.gate_w1);
        f(&join(prefix, "gate_w2"), &self.gate_w2);
        visit_conv(&self.high_band, &join(prefix, "high"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        f(&join(prefix, "gate_w1"), &mut self.gate_w1);
        f(&join(prefix, "gate_w2"), &mut self.gate_w2);
        visit_conv_mut(&mut self.high_band, &join(prefix, "high"), f);
    }
}

/// Band weights for a batch: either the frozen hook replicated per sample or
/// softmax(gate_w2 . gelu(gate_w1 . GAP(x))) per sample.
fn band_weights<B: Backend>(
    b: &mut B,
    x: &B::Val,
    p: &DmsdParams<B::S>,
    prefix: &str,
) -> Result<B::Val> {
    let n = b.shape(x)[0];
    if let Some(alpha) = p.frozen_alpha {
        let t = Tensor::from_fn(vec![n, 3], |i| B::S::from_f64(alpha[i % 3]));
        return Ok(b.constant(&t));
    }
    let w1 = b.param(&join(prefix, "gate_w1"), &p.gate_w1);
    let w2 = b.param(&join(prefix, "gate_w2"), &p.gate_w2);
    let desc = b.global_avg_pool(x)?;
    let hidden = b.linear(&desc, &w1, None)?;
    let hidden = b.activation(&hidden, Activation::Gelu)?;
    let logits = b.linear(&hidden, &w2, None)?;
    b.softmax(&logits)
}

/// Forward pass on any backend. Returns (output, band weights `[N, 3]`).
pub fn forward_b<B: Backend>(
    b: &mut B,
    x: &B::Val,
    p: &DmsdParams<B::S>,
    prefix: &str,
) -> Result<(B::Val, B::Val)> {
    let shape = b.shape(x);
    p.validate(shape[1])?;
    if shape[2] < 3 || shape[3] < 3 {
        return Err(Error::shape(format!(
            "band decomposition needs spatial extents >= 3, got {}x{}",
            shape[2], shape[3]
        )));
    }

    let alpha = band_weights(b, x, p, prefix)?;
    let low = b.avg_pool2d(x, 3, 1, Padding::Replicate)?;
    let hw = b.param(&join(prefix, "high.weight"), &p.high_band.weight);
    let high = b.conv2d(x, &hw, None, &p.high_band.meta)?;

    let a_low = b.column(&alpha, 0)?;
    let a_mid = b.column(&alpha, 1)?;
    let a_high = b.column(&alpha, 2)?;
    let t_low = b.mul_batch_scalar(&low, &a_low)?;
    let t_mid = b.mul_batch_scalar(x, &a_mid)?;
    let t_high = b.mul_batch_scalar(&high, &a_high)?;
    let partial = b.add(&t_low, &t_mid)?;
    let y = b.add(&partial, &t_high)?;
    Ok((y, alpha))
}

/// Eager forward: `(y, alpha)` tensors.
pub fn dmsd_forward<S: Scalar>(
    x: &Tensor<S>,
    p: &DmsdParams<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let mut b = Eager::<S>::default();
    forward_b(&mut b, x, p, "dmsd")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    Low,
    High,
}

/// The spatial kernels realizing a band proxy: one fixed box kernel for the
/// low band, the current per-channel depthwise kernels for the high band.
pub fn band_kernels<S: Scalar>(p: &DmsdParams<S>, band: Band) -> Vec<Tensor<f64>> {
    match band {
        Band::Low => vec![dyfus_spectral::box_kernel_3x3::<f64>()],
        Band::High => {
            let c = p.channels;
            (0..c)
                .map(|ch| {
                    Tensor::from_fn(vec![3, 3], |i| p.high_band.weight.data()[ch * 9 + i].as_f64())
                })
                .collect()
        }
    }
}

/// Frequency-response magnitude maps for a band's kernels, sampled on a
/// `grid x grid` lattice over [-pi, pi]^2.
pub fn dmsd_band_response<S: Scalar>(
    p: &DmsdParams<S>,
    band: Band,
    grid: usize,
) -> Result<Vec<Tensor<f64>>> {
    band_kernels(p, band)
        .iter()
        .map(|k| dyfus_spectral::kernel_freq_response(k, grid))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use dyfus_core::max_rel_diff;

    fn rng() -> Rng {
        Rng::new(42, 0)
    }

    #[test]
    fn zero_gate_gives_uniform_band_weights() {
        let p = DmsdParams::<f64>::init(4, &mut rng(), HighBandInit::Laplacian)
            .unwrap()
            .zero_gate();
        let x = rng().tensor(vec![2, 4, 5, 5], 1.0);
        let (_, alpha) = dmsd_forward(&x, &p).unwrap();
        for a in alpha.data() {
            assert!((a - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn frozen_mid_band_is_exact_identity() {
        let p = DmsdParams::<f64>::init(4, &mut rng(), HighBandInit::Laplacian)
            .unwrap()
            .with_frozen_alpha([0.0, 1.0, 0.0]);
        let x = rng().tensor(vec![1, 4, 6, 6], 1.0);
        let (y, _) = dmsd_forward(&x, &p).unwrap();
        assert_eq!(y.data(), x.data(), "mid-only mix must reproduce the input exactly");
    }

    #[test]
    fn constant_input_band_behavior() {
        let p = DmsdParams::<f64>::init(3, &mut rng(), HighBandInit::Laplacian).unwrap();
        let c = 1.4142f64;
        let x = Tensor::full(vec![1, 3, 5, 5], c);

        let low = dyfus_core::ops::avg_pool2d(&x, 3, 1, Padding::Replicate).unwrap();
        for v in low.data() {
            assert!((v - c).abs() < 1e-12);
        }
        let high = dyfus_core::ops::conv2d(&x, &p.high_band).unwrap();
        for v in high.data() {
            assert!(v.abs() < 1e-12, "zero-sum high band must annihilate constants");
        }
    }

    #[test]
    fn frozen_gate_mix_is_linear_in_input() {
        let p = DmsdParams::<f64>::init(4, &mut rng(), HighBandInit::Random)
            .unwrap()
            .with_frozen_alpha([0.2, 0.5, 0.3]);
        let mut r = rng();
        let x = r.tensor(vec![1, 4, 6, 6], 1.0);
        let w = r.tensor(vec![1, 4, 6, 6], 1.0);
        let (a, bb) = (0.7, -1.3);

        let combo = Tensor::from_fn(vec![1, 4, 6, 6], |i| a * x.data()[i] + bb * w.data()[i]);
        let (y_combo, _) = dmsd_forward(&combo, &p).unwrap();
        let (yx, _) = dmsd_forward(&x, &p).unwrap();
        let (yw, _) = dmsd_forward(&w, &p).unwrap();
        let lin = Tensor::from_fn(vec![1, 4, 6, 6], |i| a * yx.data()[i] + bb * yw.data()[i]);
        assert!(max_rel_diff(&y_combo, &lin) < 1e-6);
    }

    #[test]
    fn band_weights_rows_sum_to_one() {
        let p = DmsdParams::<f32>::init(8, &mut rng(), HighBandInit::Laplacian).unwrap();
        let x = Rng::new(9, 1).tensor(vec![3, 8, 4, 4], 2.0);
        let (_, alpha) = dmsd_forward(&x, &p).unwrap();
        for row in 0..3 {
            let s: f32 = alpha.data()[row * 3..(row + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            for a in &alpha.data()[row * 3..(row + 1) * 3] {
                assert!(*a > 0.0 && *a < 1.0);
            }
        }
    }

    #[test]
    fn band_response_reference_points() {
        let p = DmsdParams::<f64>::init(2, &mut rng(), HighBandInit::Laplacian).unwrap();
        let low = dmsd_band_response(&p, Band::Low, 5).unwrap();
        // grid 5 lattice: index 2 is DC, corners are (+-pi, +-pi)
        let g = &low[0];
        assert!((g.data()[2 * 5 + 2] - 1.0).abs() < 1e-12);
        assert!((g.data()[0] - 1.0 / 9.0).abs() < 1e-12);

        let high = dmsd_band_response(&p, Band::High, 5).unwrap();
        assert_eq!(high.len(), 2);
        for g in &high {
            assert!(g.data()[2 * 5 + 2].abs() < 1e-12, "Laplacian high band must be zero at DC");
        }
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let p = DmsdParams::<f32>::init(4, &mut rng(), HighBandInit::Laplacian).unwrap();
        let x = Tensor::zeros(vec![1, 3, 5, 5]);
        assert!(matches!(dmsd_forward(&x, &p), Err(Error::Shape(_))));
    }
}
