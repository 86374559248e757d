//! Pooling and descriptor reductions.
//!
//! Pooling uses the same "same"-padding rule as convolution, pad = (k-1)/2,
//! which is zero for even windows, so a k=2/stride=2 pool is the unpadded
//! case. Replicate padding clamps to the border; with zero padding the mean
//! still divides by the full window so pooling stays a fixed linear map.

use crate::error::{Error, Result};
use crate::ops::conv::Padding;
use crate::parallel::for_each_plane;
use crate::tensor::{Scalar, Tensor};

fn pooled_extent(h: usize, k: usize, stride: usize) -> Result<usize> {
    let pad = (k - 1) / 2;
    if h + 2 * pad < k {
        return Err(Error::shape(format!("pool window {k} larger than padded extent {h}")));
    }
    Ok((h + 2 * pad - k) / stride + 1)
}

pub fn avg_pool2d<S: Scalar>(
    x: &Tensor<S>,
    k: usize,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<S>> {
    if k == 0 || stride == 0 {
        return Err(Error::config("pool window and stride must be >= 1"));
    }
    let (n, c, h, w) = x.dims4()?;
    let oh = pooled_extent(h, k, stride)?;
    let ow = pooled_extent(w, k, stride)?;
    let pad = (k - 1) / 2;
    let inv = S::from_f64(1.0 / (k * k) as f64);
    let xd = x.data();
    let mut out = Tensor::zeros(vec![n, c, oh, ow]);
    for_each_plane(out.data_mut(), oh * ow, |p, chunk| {
        let xoff = p * h;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = S::zero();
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let iy = match resolve(iy, h, padding) {
                        Some(i) => i,
                        None => continue,
                    };
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if let Some(ix) = resolve(ix, w, padding) {
                            acc = acc + xd[(xoff + iy) * w + ix];
                        }
                    }
                }
                chunk[oy * ow + ox] = acc * inv;
            }
        }
    });
    Ok(out)
}

/// Max pooling with replicate padding, so the border never competes with an
/// artificial pad value.
pub fn max_pool2d<S: Scalar>(x: &Tensor<S>, k: usize, stride: usize) -> Result<Tensor<S>> {
    if k == 0 || stride == 0 {
        return Err(Error::config("pool window and stride must be >= 1"));
    }
    let (n, c, h, w) = x.dims4()?;
    let oh = pooled_extent(h, k, stride)?;
    let ow = pooled_extent(w, k, stride)?;
    let pad = (k - 1) / 2;
    let xd = x.data();
    let mut out = Tensor::zeros(vec![n, c, oh, ow]);
    for_each_plane(out.data_mut(), oh * ow, |p, chunk| {
        let xoff = p * h;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = S::neg_infinity();
                for ky in 0..k {
                    let iy = clamp((oy * stride + ky) as isize - pad as isize, h);
                    for kx in 0..k {
                        let ix = clamp((ox * stride + kx) as isize - pad as isize, w);
                        let v = xd[(xoff + iy) * w + ix];
                        if v > best {
                            best = v;
                        }
                    }
                }
                chunk[oy * ow + ox] = best;
            }
        }
    });
    let _ = (n, c);
    Ok(out)
}

#[inline(always)]
fn clamp(i: isize, extent: usize) -> usize {
    i.clamp(0, extent as isize - 1) as usize
}

#[inline(always)]
fn resolve(i: isize, extent: usize, padding: Padding) -> Option<usize> {
    match padding {
        Padding::Replicate => Some(clamp(i, extent)),
        Padding::Zero => {
            if i < 0 || i as usize >= extent {
                None
            } else {
                Some(i as usize)
            }
        }
    }
}

pub fn avg_pool2d_backward<S: Scalar>(
    x_shape: &[usize],
    k: usize,
    stride: usize,
    padding: Padding,
    d_out: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (h, w) = (x_shape[2], x_shape[3]);
    let (_, _, oh, ow) = d_out.dims4()?;
    let pad = (k - 1) / 2;
    let inv = S::from_f64(1.0 / (k * k) as f64);
    let dd = d_out.data();
    let planes = x_shape[0] * x_shape[1];
    let mut dx = Tensor::zeros(x_shape.to_vec());
    let dxd = dx.data_mut();
    for p in 0..planes {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = dd[(p * oh + oy) * ow + ox] * inv;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let iy = match resolve(iy, h, padding) {
                        Some(i) => i,
                        None => continue,
                    };
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if let Some(ix) = resolve(ix, w, padding) {
                            let xi = (p * h + iy) * w + ix;
                            dxd[xi] = dxd[xi] + g;
                        }
                    }
                }
            }
        }
    }
    Ok(dx)
}

/// Routes each window's gradient to the first maximal element in scan order,
/// matching the deterministic forward tie-break.
pub fn max_pool2d_backward<S: Scalar>(
    x: &Tensor<S>,
    k: usize,
    stride: usize,
    d_out: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (n, c, h, w) = x.dims4()?;
    let (_, _, oh, ow) = d_out.dims4()?;
    let pad = (k - 1) / 2;
    let xd = x.data();
    let dd = d_out.data();
    let mut dx = Tensor::zeros(x.shape().to_vec());
    let dxd = dx.data_mut();
    for p in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = S::neg_infinity();
                let mut best_idx = 0usize;
                for ky in 0..k {
                    let iy = clamp((oy * stride + ky) as isize - pad as isize, h);
                    for kx in 0..k {
                        let ix = clamp((ox * stride + kx) as isize - pad as isize, w);
                        let xi = (p * h + iy) * w + ix;
                        if xd[xi] > best {
                            best = xd[xi];
                            best_idx = xi;
                        }
                    }
                }
                dxd[best_idx] = dxd[best_idx] + dd[(p * oh + oy) * ow + ox];
            }
        }
    }
    Ok(dx)
}

/// Per-channel spatial mean: `[N, C, H, W] -> [N, C]`.
pub fn global_avg_pool<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c, h, w) = x.dims4()?;
    let inv = S::from_f64(1.0 / (h * w) as f64);
    let xd = x.data();
    let mut out = Tensor::zeros(vec![n, c]);
    let od = out.data_mut();
    for p in 0..n * c {
        let mut acc = S::zero();
        for i in 0..h * w {
            acc = acc + xd[p * h * w + i];
        }
        od[p] = acc * inv;
    }
    Ok(out)
}

pub fn global_avg_pool_backward<S: Scalar>(
    x_shape: &[usize],
    d_out: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (h, w) = (x_shape[2], x_shape[3]);
    let inv = S::from_f64(1.0 / (h * w) as f64);
    let dd = d_out.data();
    let mut dx = Tensor::zeros(x_shape.to_vec());
    let dxd = dx.data_mut();
    for p in 0..x_shape[0] * x_shape[1] {
        let g = dd[p] * inv;
        for i in 0..h * w {
            dxd[p * h * w + i] = g;
        }
    }
    Ok(dx)
}

/// Channel-axis descriptor: plane 0 is the per-position channel mean, plane 1
/// the per-position channel max. `[N, C, H, W] -> [N, 2, H, W]`.
pub fn spatial_descriptor_pool<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c, h, w) = x.dims4()?;
    if c == 0 {
        return Err(Error::shape("spatial_descriptor_pool needs at least one channel"));
    }
    let inv = S::from_f64(1.0 / c as f64);
    let xd = x.data();
    let hw = h * w;
    let mut out = Tensor::zeros(vec![n, 2, h, w]);
    let od = out.data_mut();
    for bi in 0..n {
        for i in 0..hw {
            let mut acc = S::zero();
            let mut best = S::neg_infinity();
            for ch in 0..c {
                let v = xd[(bi * c + ch) * hw + i];
                acc = acc + v;
                if v > best {
                    best = v;
                }
            }
            od[(bi * 2) * hw + i] = acc * inv;
            od[(bi * 2 + 1) * hw + i] = best;
        }
    }
    Ok(out)
}

pub fn spatial_descriptor_pool_backward<S: Scalar>(
    x: &Tensor<S>,
    d_out: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let xd = x.data();
    let dd = d_out.data();
    let inv = S::from_f64(1.0 / c as f64);
    let mut dx = Tensor::zeros(x.shape().to_vec());
    let dxd = dx.data_mut();
    for bi in 0..n {
        for i in 0..hw {
            let g_mean = dd[(bi * 2) * hw + i] * inv;
            let g_max = dd[(bi * 2 + 1) * hw + i];
            let mut best = S::neg_infinity();
            let mut best_ch = 0usize;
            for ch in 0..c {
                let v = xd[(bi * c + ch) * hw + i];
                if v > best {
                    best = v;
                    best_ch = ch;
                }
            }
            for ch in 0..c {
                let xi = (bi * c + ch) * hw + i;
                dxd[xi] = dxd[xi] + g_mean;
                if ch == best_ch {
                    dxd[xi] = dxd[xi] + g_max;
                }
            }
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_replicate_mean_is_constant() {
        let x = Tensor::full(vec![1, 2, 5, 5], 2.75f32);
        let y = avg_pool2d(&x, 3, 1, Padding::Replicate).unwrap();
        assert_eq!(y.shape(), &[1, 2, 5, 5]);
        for v in y.data() {
            assert_eq!(*v, 2.75);
        }
    }

    #[test]
    fn unpadded_two_by_two_mean() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let y = avg_pool2d(&x, 2, 2, Padding::Zero).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data()[0], 2.5);
    }

    #[test]
    fn max_of_two_by_two() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let y = max_pool2d(&x, 2, 2).unwrap();
        assert_eq!(y.data()[0], 4.0);
    }

    #[test]
    fn max_pool_constant_stays_constant() {
        let x = Tensor::full(vec![1, 1, 4, 4], -1.5f32);
        let y = max_pool2d(&x, 3, 1).unwrap();
        for v in y.data() {
            assert_eq!(*v, -1.5);
        }
    }

    #[test]
    fn oversized_window_is_shape_error() {
        // even windows get pad (k-1)/2 = k/2 - 1 < k/2, so k=2 cannot cover a
        // 1-extent input
        let x = Tensor::full(vec![1, 1, 1, 1], 0.0f32);
        assert!(matches!(avg_pool2d(&x, 2, 1, Padding::Zero), Err(Error::Shape(_))));
        assert!(matches!(avg_pool2d(&x, 3, 1, Padding::Zero), Ok(_)));
    }

    #[test]
    fn gap_values_and_permutation_invariance() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().data()[0], 2.5);

        let shuffled = Tensor::new(vec![1, 1, 2, 2], vec![4.0f32, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(
            global_avg_pool(&x).unwrap().data(),
            global_avg_pool(&shuffled).unwrap().data()
        );
    }

    #[test]
    fn descriptor_planes() {
        // channels (1, 3) at each position -> mean 2, max 3
        let mut x = Tensor::zeros(vec![1, 2, 2, 2]);
        for i in 0..4 {
            x.data_mut()[i] = 1.0f32;
            x.data_mut()[4 + i] = 3.0;
        }
        let d = spatial_descriptor_pool(&x).unwrap();
        assert_eq!(d.shape(), &[1, 2, 2, 2]);
        assert_eq!(&d.data()[0..4], &[2.0, 2.0, 2.0, 2.0]);
        assert_eq!(&d.data()[4..8], &[3.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn descriptor_single_channel_planes_match() {
        let x = Tensor::from_fn(vec![1, 1, 3, 3], |i| i as f32 - 4.0);
        let d = spatial_descriptor_pool(&x).unwrap();
        assert_eq!(&d.data()[0..9], &d.data()[9..18]);
        assert_eq!(&d.data()[0..9], x.data());
    }
}
