//! The split / frequency-path / concat / fuse pipeline: a fraction of the
//! channels runs through band decomposition then cooperative modulation, is
//! concatenated back with the untouched bypass channels, and fused by a 1x1
//! convolution. The fusion stage can be disabled for the concat-only
//! variant.

use dyfus_core::backend::{Backend, Eager};
use dyfus_core::error::{Error, Result};
use dyfus_core::init::Rng;
use dyfus_core::ops::{split_point, ConvMeta, ConvSpec, Padding};
use dyfus_core::tensor::{Scalar, Tensor};

use crate::dmsd::{self, DmsdParams, HighBandInit};
use crate::params::{join, visit_conv, visit_conv_mut, ParamSet};
use crate::sfcm::{self, SfcmParams};

pub const DEFAULT_SPLIT_RATIO: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct DyFusNetParams<S> {
    pub channels: usize,
    /// Fraction of channels routed through the frequency path.
    pub split_ratio: f64,
    pub dmsd: DmsdParams<S>,
    pub sfcm: SfcmParams<S>,
    /// 1x1 fusion over the concatenated channels; None is the concat-only
    /// variant.
    pub fuse: Option<ConvSpec<S>>,
}

fn fuse_meta(channels: usize) -> ConvMeta {
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

impl<S: Scalar> DyFusNetParams<S> {
    pub fn init(
        channels: usize,
        split_ratio: f64,
        reduction: usize,
        fuse_1x1: bool,
        high_init: HighBandInit,
        rng: &mut Rng,
    ) -> Result<Self> {
        let routed = split_point(channels, split_ratio)?;
        let dmsd = DmsdParams::init(routed, rng, high_init)?;
        let sfcm = SfcmParams::init(routed, reduction, rng)?;
        let fuse = if fuse_1x1 {
            let meta = fuse_meta(channels);
            let weight = rng.fan_in_tensor(meta.weight_shape(), channels);
            let bias = Tensor::zeros(vec![channels]);
            Some(ConvSpec::new(meta, weight, Some(bias))?)
        } else {
            None
        };
        Ok(DyFusNetParams { channels, split_ratio, dmsd, sfcm, fuse })
    }

    /// Identity configuration: frequency path frozen to the identity and the
    /// fusion replaced by the identity channel map.
    pub fn identity(channels: usize, split_ratio: f64) -> Result<Self> {
        let routed = split_point(channels, split_ratio)?;
        let dmsd = DmsdParams::init(routed, &mut Rng::new(0, 0), HighBandInit::Laplacian)?
            .with_frozen_alpha([0.0, 1.0, 0.0]);
        let sfcm = SfcmParams::identity(routed)?;
        Ok(DyFusNetParams {
            channels,
            split_ratio,
            dmsd,
            sfcm,
            fuse: Some(ConvSpec::identity_1x1(channels)),
        })
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.channels != channels {
            return Err(Error::config(format!(
                "fusion pipeline built for {} channels, input has {channels}",
                self.channels
            )));
        }
        let routed = split_point(channels, self.split_ratio)?;
        if self.dmsd.channels != routed || self.sfcm.channels != routed {
            return Err(Error::config(format!(
                "split ratio {} routes {routed} channels but the frequency path is built for {}",
                self.split_ratio, self.dmsd.channels
            )));
        }
        if let Some(fuse) = &self.fuse {
            if fuse.meta.in_channels != channels || fuse.meta.out_channels != channels {
                return Err(Error::config("fusion conv must map C -> C over the concat result"));
            }
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> DyFusNetParams<T> {
        DyFusNetParams {
            channels: self.channels,
            split_ratio: self.split_ratio,
            dmsd: self.dmsd.cast(),
            sfcm: self.sfcm.cast(),
            fuse: self.fuse.as_ref().map(|f| f.cast()),
        }
    }
}

impl<S: Scalar> ParamSet<S> for DyFusNetParams<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        self.dmsd.visit(&join(prefix, "dmsd"), f);
        self.sfcm.visit(&join(prefix, "sfcm"), f);
        if let Some(fuse) = &self.fuse {
            visit_conv(fuse, &join(prefix, "fuse"), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        self.dmsd.visit_mut(&join(prefix, "dmsd"), f);
        self.sfcm.visit_mut(&join(prefix, "sfcm"), f);
        if let Some(fuse) = &mut self.fuse {
            visit_conv_mut(fuse, &join(prefix, "fuse"), f);
        }
    }
}

pub fn forward_b<B: Backend>(
    b: &mut B,
    x: &B::Val,
    p: &DyFusNetParams<B::S>,
    prefix: &str,
) -> Result<B::Val> {
    let shape = b.shape(x);
    p.validate(shape[1])?;
    let routed = split_point(shape[1], p.split_ratio)?;

    let x1 = b.slice_channels(x, 0, routed)?;
    let (band_mix, _alpha) = dmsd::forward_b(b, &x1, &p.dmsd, &join(prefix, "dmsd"))?;
    let (freq, _z, _beta) = sfcm::forward_b(b, &band_mix, &p.sfcm, &join(prefix, "sfcm"))?;

    let merged = if routed == shape[1] {
        freq
    } else {
        let x2 = b.slice_channels(x, routed, shape[1])?;
        b.concat_channels(&freq, &x2)?
    };

    match &p.fuse {
        Some(fuse) => {
            let w = b.param(&join(prefix, "fuse.weight"), &fuse.weight);
            let bias = fuse.bias.as_ref().map(|t| b.param(&join(prefix, "fuse.bias"), t));
            b.conv2d(&merged, &w, bias.as_ref(), &fuse.meta)
        }
        None => Ok(merged),
    }
}

pub fn dyfusnet_forward<S: Scalar>(x: &Tensor<S>, p: &DyFusNetParams<S>) -> Result<Tensor<S>> {
    let mut b = Eager::<S>::default();
    forward_b(&mut b, x, p, "dyfusnet")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_identity_pipeline_is_bit_exact() {
        let p = DyFusNetParams::<f64>::identity(8, 0.5).unwrap();
        let x = Rng::new(3, 1).tensor(vec![1, 8, 6, 6], 1.0);
        let y = dyfusnet_forward(&x, &p).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn degenerate_split_runs_the_whole_tensor_through_the_frequency_path() {
        let mut rng = Rng::new(5, 0);
        let p = DyFusNetParams::<f64>::init(6, 1.0, 16, true, HighBandInit::Laplacian, &mut rng)
            .unwrap();
        let x = Rng::new(6, 1).tensor(vec![1, 6, 5, 5], 1.0);
        let y = dyfusnet_forward(&x, &p).unwrap();
        assert_eq!(y.shape(), x.shape());

        // must equal fuse(freq(x)) computed by hand
        let (band_mix, _) = dmsd::dmsd_forward(&x, &p.dmsd).unwrap();
        let (freq, _, _) = sfcm::sfcm_forward(&band_mix, &p.sfcm).unwrap();
        let fused = dyfus_core::ops::conv2d(&freq, p.fuse.as_ref().unwrap()).unwrap();
        assert_eq!(y.data(), fused.data());
    }

    #[test]
    fn output_channels_match_input_channels() {
        let mut rng = Rng::new(8, 0);
        for &(c, e) in &[(8usize, 0.25f64), (8, 0.75), (12, 0.5)] {
            let p =
                DyFusNetParams::<f32>::init(c, e, 16, true, HighBandInit::Random, &mut rng).unwrap();
            let x = Rng::new(9, 1).tensor(vec![2, c, 6, 6], 1.0);
            let y = dyfusnet_forward(&x, &p).unwrap();
            assert_eq!(y.shape(), x.shape());
        }
    }

    #[test]
    fn concat_only_variant_skips_fusion() {
        let mut rng = Rng::new(10, 0);
        let p = DyFusNetParams::<f64>::init(8, 0.5, 16, false, HighBandInit::Laplacian, &mut rng)
            .unwrap();
        let x = Rng::new(11, 1).tensor(vec![1, 8, 5, 5], 1.0);
        let y = dyfusnet_forward(&x, &p).unwrap();
        // bypass half must pass through untouched
        let hw = 25;
        for ch in 4..8 {
            for i in 0..hw {
                assert_eq!(y.data()[ch * hw + i], x.data()[ch * hw + i]);
            }
        }
    }

    #[test]
    fn mismatched_frequency_path_is_config_error() {
        let mut rng = Rng::new(12, 0);
        let mut p =
            DyFusNetParams::<f32>::init(8, 0.5, 16, true, HighBandInit::Laplacian, &mut rng)
                .unwrap();
        p.split_ratio = 0.75; // now routes 6 channels; path is built for 4
        let x = Tensor::zeros(vec![1, 8, 5, 5]);
        assert!(matches!(dyfusnet_forward(&x, &p), Err(Error::Config(_))));
    }
}
