//! Grouped 2-D cross-correlation and the 1-D channel-descriptor convolution.
//!
//! Convolution here is cross-correlation (no kernel flip) with "same"
//! padding: pad = (k-1)/2 on each side, which is why kernels must be odd.
//! Zero padding skips out-of-range taps; replicate padding clamps the index
//! to the border. The backward passes reuse the identical index arithmetic,
//! scattering into whatever input element the forward pass read.

use crate::error::{Error, Result};
use crate::parallel::for_each_plane;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Zero,
    Replicate,
}

/// Static description of a grouped convolution, separate from its weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvMeta {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub groups: usize,
    pub padding: Padding,
}

impl ConvMeta {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_h % 2 == 0 || self.kernel_w % 2 == 0 {
            return Err(Error::config(format!(
                "kernel extents must be odd, got {}x{}",
                self.kernel_h, self.kernel_w
            )));
        }
        if self.stride == 0 {
            return Err(Error::config("stride must be >= 1"));
        }
        if self.groups == 0
            || self.in_channels % self.groups != 0
            || self.out_channels % self.groups != 0
        {
            return Err(Error::config(format!(
                "groups {} must divide in_channels {} and out_channels {}",
                self.groups, self.in_channels, self.out_channels
            )));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel_h,
            self.kernel_w,
        ]
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (ph, pw) = ((self.kernel_h - 1) / 2, (self.kernel_w - 1) / 2);
        if h + 2 * ph < self.kernel_h || w + 2 * pw < self.kernel_w {
            return Err(Error::shape(format!(
                "kernel {}x{} larger than padded input {}x{}",
                self.kernel_h, self.kernel_w, h, w
            )));
        }
        Ok((
            (h + 2 * ph - self.kernel_h) / self.stride + 1,
            (w + 2 * pw - self.kernel_w) / self.stride + 1,
        ))
    }
}

/// A convolution with its learned weights attached.
#[derive(Debug, Clone)]
pub struct ConvSpec<S> {
    pub meta: ConvMeta,
    /// Shape `[out_channels, in_channels/groups, kernel_h, kernel_w]`.
    pub weight: Tensor<S>,
    /// Shape `[out_channels]` when present.
    pub bias: Option<Tensor<S>>,
}

impl<S: Scalar> ConvSpec<S> {
    pub fn new(meta: ConvMeta, weight: Tensor<S>, bias: Option<Tensor<S>>) -> Result<Self> {
        meta.validate()?;
        if weight.shape() != meta.weight_shape().as_slice() {
            return Err(Error::shape(format!(
                "conv weight shape {:?} does not match meta {:?}",
                weight.shape(),
                meta.weight_shape()
            )));
        }
        if let Some(b) = &bias {
            if b.shape() != [meta.out_channels] {
                return Err(Error::shape(format!(
                    "conv bias shape {:?}, expected [{}]",
                    b.shape(),
                    meta.out_channels
                )));
            }
        }
        Ok(ConvSpec { meta, weight, bias })
    }

    /// 1x1 convolution whose weight is the identity channel map.
    pub fn identity_1x1(channels: usize) -> Self {
        let meta = ConvMeta {
            in_channels: channels,
            out_channels: channels,
            kernel_h: 1,
            kernel_w: 1,
            stride: 1,
            groups: 1,
            padding: Padding::Zero,
        };
        let mut w = Tensor::zeros(meta.weight_shape());
        for c in 0..channels {
            w.data_mut()[c * channels + c] = S::one();
        }
        ConvSpec { meta, weight: w, bias: None }
    }

    pub fn cast<T: Scalar>(&self) -> ConvSpec<T> {
        ConvSpec {
            meta: self.meta,
            weight: self.weight.cast(),
            bias: self.bias.as_ref().map(|b| b.cast()),
        }
    }
}

/// Grouped 2-D cross-correlation of a `[N, Cin, H, W]` input.
pub fn conv2d<S: Scalar>(x: &Tensor<S>, spec: &ConvSpec<S>) -> Result<Tensor<S>> {
    conv2d_raw(x, &spec.meta, &spec.weight, spec.bias.as_ref())
}

pub fn conv2d_raw<S: Scalar>(
    x: &Tensor<S>,
    meta: &ConvMeta,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
) -> Result<Tensor<S>> {
    meta.validate()?;
    let (n, cin, h, w) = x.dims4()?;
    if cin != meta.in_channels {
        return Err(Error::shape(format!(
            "conv input has {} channels, spec expects {}",
            cin, meta.in_channels
        )));
    }
    if weight.shape() != meta.weight_shape().as_slice() {
        return Err(Error::shape(format!(
            "conv weight shape {:?} does not match meta {:?}",
            weight.shape(),
            meta.weight_shape()
        )));
    }
    let (oh, ow) = meta.out_spatial(h, w)?;
    let cout = meta.out_channels;
    let cig = meta.in_channels / meta.groups;
    let cog = cout / meta.groups;
    let (kh, kw) = (meta.kernel_h, meta.kernel_w);
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let stride = meta.stride;
    let zero_pad = meta.padding == Padding::Zero;

    let xd = x.data();
    let wd = weight.data();
    let mut out = Tensor::zeros(vec![n, cout, oh, ow]);
    let plane = oh * ow;
    for_each_plane(out.data_mut(), plane, |p, chunk| {
        let bi = p / cout;
        let co = p % cout;
        let g = co / cog;
        let base_bias = bias.map_or(S::zero(), |b| b.data()[co]);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = base_bias;
                for cl in 0..cig {
                    let ci = g * cig + cl;
                    let xoff = (bi * cin + ci) * h;
                    let woff = ((co * cig) + cl) * kh;
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - ph as isize;
                        let (iy, y_ok) = clamp_index(iy, h, zero_pad);
                        if !y_ok {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pw as isize;
                            let (ix, x_ok) = clamp_index(ix, w, zero_pad);
                            if !x_ok {
                                continue;
                            }
                            acc = acc
                                + wd[(woff + ky) * kw + kx] * xd[(xoff + iy) * w + ix];
                        }
                    }
                }
                chunk[oy * ow + ox] = acc;
            }
        }
    });
    Ok(out)
}

/// Resolve a padded index: returns (index, in_range). Replicate padding
/// clamps so the flag is always true; zero padding flags out-of-range taps.
#[inline(always)]
fn clamp_index(i: isize, extent: usize, zero_pad: bool) -> (usize, bool) {
    if i < 0 {
        if zero_pad {
            (0, false)
        } else {
            (0, true)
        }
    } else if i as usize >= extent {
        if zero_pad {
            (0, false)
        } else {
            (extent - 1, true)
        }
    } else {
        (i as usize, true)
    }
}

/// Gradients of [`conv2d_raw`] with respect to input, weight, and bias.
pub fn conv2d_backward<S: Scalar>(
    x: &Tensor<S>,
    meta: &ConvMeta,
    weight: &Tensor<S>,
    has_bias: bool,
    d_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>, Option<Tensor<S>>)> {
    let (n, cin, h, w) = x.dims4()?;
    let (_, cout, oh, ow) = d_out.dims4()?;
    let cig = meta.in_channels / meta.groups;
    let cog = cout / meta.groups;
    let (kh, kw) = (meta.kernel_h, meta.kernel_w);
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let stride = meta.stride;
    let zero_pad = meta.padding == Padding::Zero;

    let xd = x.data();
    let wd = weight.data();
    let dd = d_out.data();
    let mut dx = Tensor::zeros(x.shape().to_vec());
    let mut dw = Tensor::zeros(weight.shape().to_vec());
    let mut db = if has_bias { Some(Tensor::zeros(vec![cout])) } else { None };

    let dxd = dx.data_mut();
    let dwd = dw.data_mut();
    for bi in 0..n {
        for co in 0..cout {
            let g = co / cog;
            for oy in 0..oh {
                for ox in 0..ow {
                    let go = dd[((bi * cout + co) * oh + oy) * ow + ox];
                    if let Some(db) = db.as_mut() {
                        db.data_mut()[co] = db.data_mut()[co] + go;
                    }
                    for cl in 0..cig {
                        let ci = g * cig + cl;
                        let xoff = (bi * cin + ci) * h;
                        let woff = ((co * cig) + cl) * kh;
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - ph as isize;
                            let (iy, y_ok) = clamp_index(iy, h, zero_pad);
                            if !y_ok {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pw as isize;
                                let (ix, x_ok) = clamp_index(ix, w, zero_pad);
                                if !x_ok {
                                    continue;
                                }
                                let xi = (xoff + iy) * w + ix;
                                let wi = (woff + ky) * kw + kx;
                                dxd[xi] = dxd[xi] + wd[wi] * go;
                                dwd[wi] = dwd[wi] + xd[xi] * go;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((dx, dw, db))
}

/// 1-D convolution over the channel axis of an `[N, C]` descriptor with a
/// rank-1 odd kernel and zero padding.
pub fn conv1d_channels<S: Scalar>(desc: &Tensor<S>, weight: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c) = desc.dims2()?;
    let k = weight.numel();
    if weight.rank() != 1 {
        return Err(Error::contract("conv1d_channels weight must be rank-1"));
    }
    if k % 2 == 0 {
        return Err(Error::config(format!("conv1d_channels kernel must be odd, got {k}")));
    }
    if k > c {
        return Err(Error::config(format!(
            "conv1d_channels kernel {k} exceeds channel count {c}"
        )));
    }
    let half = (k - 1) / 2;
    let wd = weight.data();
    let xd = desc.data();
    let mut out = Tensor::zeros(vec![n, c]);
    let od = out.data_mut();
    for bi in 0..n {
        for ch in 0..c {
            let mut acc = S::zero();
            for j in 0..k {
                let src = ch as isize + j as isize - half as isize;
                if src >= 0 && (src as usize) < c {
                    acc = acc + wd[j] * xd[bi * c + src as usize];
                }
            }
            od[bi * c + ch] = acc;
        }
    }
    Ok(out)
}

pub fn conv1d_channels_backward<S: Scalar>(
    desc: &Tensor<S>,
    weight: &Tensor<S>,
    d_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let (n, c) = desc.dims2()?;
    let k = weight.numel();
    let half = (k - 1) / 2;
    let wd = weight.data();
    let xd = desc.data();
    let dd = d_out.data();
    let mut dx = Tensor::zeros(vec![n, c]);
    let mut dw = Tensor::zeros(vec![k]);
    for bi in 0..n {
        for ch in 0..c {
            let go = dd[bi * c + ch];
            for j in 0..k {
                let src = ch as isize + j as isize - half as isize;
                if src >= 0 && (src as usize) < c {
                    let xi = bi * c + src as usize;
                    dx.data_mut()[xi] = dx.data_mut()[xi] + wd[j] * go;
                    dw.data_mut()[j] = dw.data_mut()[j] + xd[xi] * go;
                }
            }
        }
    }
    Ok((dx, dw))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(shape: Vec<usize>) -> Tensor<f32> {
        Tensor::full(shape, 1.0)
    }

    fn meta(cin: usize, cout: usize, k: usize, stride: usize, groups: usize) -> ConvMeta {
        ConvMeta {
            in_channels: cin,
            out_channels: cout,
            kernel_h: k,
            kernel_w: k,
            stride,
            groups,
            padding: Padding::Zero,
        }
    }

    #[test]
    fn box_sum_counting() {
        // All-ones 3x3 input with an all-ones 3x3 kernel: center sees the
        // full box, corners only a 2x2 quadrant.
        let x = ones(vec![1, 1, 3, 3]);
        let spec = ConvSpec::new(meta(1, 1, 3, 1, 1), ones(vec![1, 1, 3, 3]), None).unwrap();
        let y = conv2d(&x, &spec).unwrap();
        assert_eq!(y.data()[4], 9.0);
        assert_eq!(y.data()[0], 4.0);
        assert_eq!(y.data()[2], 4.0);
        assert_eq!(y.data()[6], 4.0);
        assert_eq!(y.data()[8], 4.0);
    }

    #[test]
    fn identity_kernel_is_exact() {
        let x = Tensor::from_fn(vec![2, 3, 4, 4], |i| (i as f32) * 0.37 - 5.0);
        let spec = ConvSpec::identity_1x1(3);
        let y = conv2d(&x, &spec).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn even_kernel_rejected() {
        let m = meta(1, 1, 2, 1, 1);
        assert!(m.validate().is_err());
    }

    #[test]
    fn groups_must_divide() {
        let m = meta(4, 6, 3, 1, 4);
        assert!(m.validate().is_err());
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let x = ones(vec![1, 2, 4, 4]);
        let spec = ConvSpec::new(meta(3, 1, 1, 1, 1), ones(vec![1, 3, 1, 1]), None).unwrap();
        assert!(matches!(conv2d(&x, &spec), Err(Error::Shape(_))));
    }

    #[test]
    fn conv1d_window_sums() {
        let desc = Tensor::new(vec![1, 4], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::new(vec![3], vec![1.0f32, 1.0, 1.0]).unwrap();
        let y = conv1d_channels(&desc, &w).unwrap();
        assert_eq!(y.data(), &[3.0, 6.0, 9.0, 7.0]);
    }

    #[test]
    fn conv1d_identity_and_zero() {
        let desc = Tensor::new(vec![1, 4], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let w1 = Tensor::new(vec![1], vec![1.0f32]).unwrap();
        assert_eq!(conv1d_channels(&desc, &w1).unwrap().data(), desc.data());

        let zeros = Tensor::new(vec![1, 3], vec![0.0f32; 3]).unwrap();
        let w = Tensor::new(vec![3], vec![0.3f32, -1.0, 2.0]).unwrap();
        assert_eq!(conv1d_channels(&zeros, &w).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn conv1d_even_kernel_rejected() {
        let desc = Tensor::new(vec![1, 4], vec![0.0f32; 4]).unwrap();
        let w = Tensor::new(vec![2], vec![1.0f32, 1.0]).unwrap();
        assert!(matches!(conv1d_channels(&desc, &w), Err(Error::Config(_))));
    }

    #[test]
    fn stride_two_halves_even_extents() {
        let x = ones(vec![1, 1, 8, 8]);
        let spec = ConvSpec::new(meta(1, 1, 3, 2, 1), ones(vec![1, 1, 3, 3]), None).unwrap();
        let y = conv2d(&x, &spec).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
    }

    #[test]
    fn replicate_padding_keeps_constant_input_constant_for_zero_sum_kernel() {
        let x = Tensor::full(vec![1, 1, 5, 5], 3.0f32);
        let mut w = Tensor::zeros(vec![1, 1, 3, 3]);
        // zero-sum kernel: center 8/8, neighbors -1/8
        for (i, v) in [-0.125f32, -0.125, -0.125, -0.125, 1.0, -0.125, -0.125, -0.125, -0.125]
            .iter()
            .enumerate()
        {
            w.data_mut()[i] = *v;
        }
        let m = ConvMeta { padding: Padding::Replicate, ..meta(1, 1, 3, 1, 1) };
        let spec = ConvSpec::new(m, w, None).unwrap();
        let y = conv2d(&x, &spec).unwrap();
        for v in y.data() {
            assert!(v.abs() < 1e-6, "zero-sum kernel on constant input gave {v}");
        }
    }
}
