//! Analytic multiply-accumulate and parameter accounting.
//!
//! Counting convention: convolutions, linear maps, and matrix products
//! contribute `outputs x taps` MACs; pooling windows count one accumulate
//! per tap; elementwise products (gates, band mixing, branch blending) count
//! one per output element. Additions, activations, and normalizations are
//! free. Parameter counts always come from the actual parameter tensors, so
//! they cannot drift from what the manifest serializes.

use std::ops::{Add, AddAssign};

use dyfus_core::error::Result;
use dyfus_core::ops::ConvMeta;
use dyfus_core::tensor::Scalar;

use crate::aifi::AifiParams;
use crate::deconv::DeconvParams;
use crate::dga::DgaParams;
use crate::dmsd::DmsdParams;
use crate::dyfusnet::DyFusNetParams;
use crate::egblock::EgBlockParams;
use crate::esfc::EsfcParams;
use crate::params::ParamSet;
use crate::sfcm::SfcmParams;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Cost {
    pub macs: u64,
    pub params: u64,
}

impl Cost {
    pub fn new(macs: u64, params: u64) -> Self {
        Cost { macs, params }
    }
}

impl Add for Cost {
    type Output = Cost;
    fn add(self, rhs: Cost) -> Cost {
        Cost { macs: self.macs + rhs.macs, params: self.params + rhs.params }
    }
}

impl AddAssign for Cost {
    fn add_assign(&mut self, rhs: Cost) {
        self.macs += rhs.macs;
        self.params += rhs.params;
    }
}

/// MACs of one grouped convolution applied to an `n x cin x h x w` input:
/// n * cout * h' * w' * (cin/groups) * kh * kw.
pub fn conv2d_macs(meta: &ConvMeta, n: usize, h: usize, w: usize) -> Result<u64> {
    let (oh, ow) = meta.out_spatial(h, w)?;
    Ok((n * meta.out_channels * oh * ow * (meta.in_channels / meta.groups) * meta.kernel_h
        * meta.kernel_w) as u64)
}

pub fn conv2d_params(meta: &ConvMeta, has_bias: bool) -> u64 {
    let w = meta.out_channels * (meta.in_channels / meta.groups) * meta.kernel_h * meta.kernel_w;
    (w + if has_bias { meta.out_channels } else { 0 }) as u64
}

pub fn linear_macs(n: usize, cout: usize, cin: usize) -> u64 {
    (n * cout * cin) as u64
}

pub fn avg_pool_macs(n: usize, c: usize, oh: usize, ow: usize, k: usize) -> u64 {
    (n * c * oh * ow * k * k) as u64
}

pub fn dmsd_macs<S: Scalar>(p: &DmsdParams<S>, n: usize, h: usize, w: usize) -> Result<u64> {
    let c = p.channels;
    let hidden = p.gate_w1.shape()[0];
    let gate = linear_macs(n, hidden, c) + linear_macs(n, 3, hidden);
    let low = avg_pool_macs(n, c, h, w, 3);
    let high = conv2d_macs(&p.high_band.meta, n, h, w)?;
    let mix = 3 * (n * c * h * w) as u64;
    Ok(gate + low + high + mix)
}

pub fn sfcm_macs<S: Scalar>(p: &SfcmParams<S>, n: usize, h: usize, w: usize) -> Result<u64> {
    let c = p.channels;
    let hidden = p.bottleneck_w1.shape()[0];
    let convs = conv2d_macs(&p.pw.meta, n, h, w)?
        + conv2d_macs(&p.dw3.meta, n, h, w)?
        + conv2d_macs(&p.dw5.meta, n, h, w)?;
    let gate = linear_macs(n, hidden, c) + linear_macs(n, c, hidden);
    let apply = (n * c * h * w) as u64;
    Ok(convs + gate + apply)
}

pub fn dyfusnet_macs<S: Scalar>(
    p: &DyFusNetParams<S>,
    n: usize,
    h: usize,
    w: usize,
) -> Result<u64> {
    let mut macs = dmsd_macs(&p.dmsd, n, h, w)? + sfcm_macs(&p.sfcm, n, h, w)?;
    if let Some(fuse) = &p.fuse {
        macs += conv2d_macs(&fuse.meta, n, h, w)?;
    }
    Ok(macs)
}

pub fn deconv_macs<S: Scalar>(p: &DeconvParams<S>, n: usize, h: usize, w: usize) -> Result<u64> {
    let k = p.experts.len();
    let c = p.channels;
    let mut macs = linear_macs(n, k, c);
    for e in &p.experts {
        macs += conv2d_macs(&e.meta, n, h, w)?;
    }
    macs += (k * n * c * h * w) as u64; // per-expert blend products
    Ok(macs)
}

pub fn egblock_macs<S: Scalar>(p: &EgBlockParams<S>, n: usize, h: usize, w: usize) -> Result<u64> {
    Ok(conv2d_macs(&p.primary.meta, n, h, w)? + conv2d_macs(&p.cheap.meta, n, h, w)?)
}

pub fn dga_macs<S: Scalar>(p: &DgaParams<S>, n: usize, h: usize, w: usize) -> Result<u64> {
    let c = p.channels;
    let eca = (n * c * p.eca_kernel.numel()) as u64;
    let channel_gate = (n * c * h * w) as u64;
    let spatial_conv = conv2d_macs(&p.spatial.meta, n, h, w)?;
    let spatial_gate = (n * c * h * w) as u64;
    Ok(eca + channel_gate + spatial_conv + spatial_gate)
}

pub fn esfc_macs<S: Scalar>(p: &EsfcParams<S>, n: usize, h: usize, w: usize) -> Result<u64> {
    let mut macs = deconv_macs(&p.deconv, n, h, w)?;
    for blk in &p.chain {
        macs += egblock_macs(blk, n, h, w)?;
    }
    macs += 2 * (n * p.channels * h * w) as u64; // branch blending
    macs += dga_macs(&p.dga, n, h, w)?;
    Ok(macs)
}

pub fn aifi_macs<S: Scalar>(p: &AifiParams<S>, n: usize, h: usize, w: usize) -> u64 {
    let t = h * w;
    let d = p.embed_dim;
    let proj = 4 * linear_macs(t, d, d);
    let attn = 2 * (t * t * d) as u64;
    let ffn = linear_macs(t, p.ffn_dim, d) + linear_macs(t, d, p.ffn_dim);
    (n as u64) * (proj + attn + ffn)
}

pub fn dmsd_cost<S: Scalar>(p: &DmsdParams<S>, n: usize, h: usize, w: usize) -> Result<Cost> {
    Ok(Cost::new(dmsd_macs(p, n, h, w)?, p.param_count()))
}

pub fn dyfusnet_cost<S: Scalar>(
    p: &DyFusNetParams<S>,
    n: usize,
    h: usize,
    w: usize,
) -> Result<Cost> {
    Ok(Cost::new(dyfusnet_macs(p, n, h, w)?, p.param_count()))
}

pub fn esfc_cost<S: Scalar>(p: &EsfcParams<S>, n: usize, h: usize, w: usize) -> Result<Cost> {
    Ok(Cost::new(esfc_macs(p, n, h, w)?, p.param_count()))
}

pub fn aifi_cost<S: Scalar>(p: &AifiParams<S>, n: usize, h: usize, w: usize) -> Cost {
    Cost::new(aifi_macs(p, n, h, w), p.param_count())
}

/// MACs of the explicit transform path at one plane size: a forward radix-2
/// 2-D FFT is H*W/2 * log2(H*W) complex butterflies, one complex multiply
/// each, at 4 real MACs per complex multiply. The band path runs one forward
/// and three inverse transforms per channel plus a mask product and the
/// same three-way mix as the simulated path.
pub fn fft_band_path_macs(n: usize, c: usize, h: usize, w: usize) -> u64 {
    let hw = (h * w) as u64;
    let log2hw = (hw as f64).log2() as u64;
    let per_transform = hw / 2 * log2hw * 4;
    let planes = (n * c) as u64;
    let transforms = planes * 4 * per_transform;
    let mask = planes * 3 * hw * 2; // complex scalar product per retained bin
    let mix = 3 * planes * hw;
    transforms + mask + mix
}

#[cfg(test)]
mod tests {
    use super::*;
    use dyfus_core::init::Rng;
    use dyfus_core::ops::Padding;

    #[test]
    fn one_by_one_conv_is_c_squared_hw() {
        let meta = ConvMeta {
            in_channels: 16,
            out_channels: 16,
            kernel_h: 1,
            kernel_w: 1,
            stride: 1,
            groups: 1,
            padding: Padding::Zero,
        };
        assert_eq!(conv2d_macs(&meta, 1, 10, 12).unwrap(), 16 * 16 * 10 * 12);
    }

    #[test]
    fn ghost_block_mac_ratio_is_half_plus_half_over_c() {
        // egblock(C -> C) vs a standard 3x3 C -> C conv:
        // ratio = 1/2 + 1/(2C), i.e. 2*C*egblock = (C+1)*standard exactly
        for c in [4usize, 8, 16, 64] {
            let p = EgBlockParams::<f32>::init(c, c, &mut Rng::new(1, 0)).unwrap();
            let eg = egblock_macs(&p, 1, 14, 14).unwrap();
            let std_meta = ConvMeta {
                in_channels: c,
                out_channels: c,
                kernel_h: 3,
                kernel_w: 3,
                stride: 1,
                groups: 1,
                padding: Padding::Zero,
            };
            let standard = conv2d_macs(&std_meta, 1, 14, 14).unwrap();
            assert_eq!(2 * (c as u64) * eg, ((c + 1) as u64) * standard, "C = {c}");
        }
    }

    #[test]
    fn expert_count_grows_params_by_one_kernel_plus_gate_row() {
        let c = 6usize;
        let mut rng = Rng::new(2, 0);
        let p2 = DeconvParams::<f32>::init(c, 2, &mut rng).unwrap();
        let p3 = DeconvParams::<f32>::init(c, 3, &mut rng).unwrap();
        let added = p3.param_count() - p2.param_count();
        assert_eq!(added, (c * c * 9 + c) as u64);
    }

    #[test]
    fn param_count_matches_tensor_sizes() {
        let p = DmsdParams::<f32>::init(8, &mut Rng::new(3, 0), crate::dmsd::HighBandInit::Laplacian)
            .unwrap();
        // gate_w1 [4,8]? hidden = max(4, 8/4) = 4 -> 32 + gate_w2 [3,4] = 12 + dw 8*9 = 72
        assert_eq!(p.param_count(), 32 + 12 + 72);
    }
}
