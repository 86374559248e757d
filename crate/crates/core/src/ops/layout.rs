//! Channel splits, concatenation, slicing, and token reshaping.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Leading-channel count for a split ratio: round(ratio * C), clamped to at
/// least one channel. A ratio of exactly 1 keeps every channel; any smaller
/// ratio must leave a non-empty bypass half.
pub fn split_point(channels: usize, ratio: f64) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::config(format!("e: split ratio {ratio} outside (0, 1]")));
    }
    if ratio == 1.0 {
        return Ok(channels);
    }
    let c1 = (ratio * channels as f64).round() as usize;
    let c1 = c1.max(1);
    if c1 >= channels {
        return Err(Error::config(format!(
            "e: split ratio {ratio} rounds to {c1} of {channels} channels, leaving an empty bypass (only e = 1 may)"
        )));
    }
    Ok(c1)
}

/// Split `[N, C, H, W]` into the leading `round(e*C)` channels and the rest.
/// With e = 1 the second half has zero channels.
pub fn split_channels<S: Scalar>(
    x: &Tensor<S>,
    ratio: f64,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let (_, c, _, _) = x.dims4()?;
    let c1 = split_point(c, ratio)?;
    let a = slice_channels(x, 0, c1)?;
    let b = slice_channels(x, c1, c)?;
    Ok((a, b))
}

pub fn slice_channels<S: Scalar>(x: &Tensor<S>, from: usize, to: usize) -> Result<Tensor<S>> {
    let (n, c, h, w) = x.dims4()?;
    if from > to || to > c {
        return Err(Error::shape(format!(
            "channel slice {from}..{to} out of range for {c} channels"
        )));
    }
    let hw = h * w;
    let width = to - from;
    let mut out = Tensor::zeros(vec![n, width, h, w]);
    for bi in 0..n {
        for ch in 0..width {
            let src = ((bi * c) + from + ch) * hw;
            let dst = ((bi * width) + ch) * hw;
            out.data_mut()[dst..dst + hw].copy_from_slice(&x.data()[src..src + hw]);
        }
    }
    Ok(out)
}

/// Scatter an adjoint for a channel slice back into the full input shape.
pub fn slice_channels_backward<S: Scalar>(
    x_shape: &[usize],
    from: usize,
    d_out: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (n, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (_, width, _, _) = d_out.dims4()?;
    let hw = h * w;
    let mut dx = Tensor::zeros(vec![n, c, h, w]);
    for bi in 0..n {
        for ch in 0..width {
            let dst = ((bi * c) + from + ch) * hw;
            let src = ((bi * width) + ch) * hw;
            dx.data_mut()[dst..dst + hw].copy_from_slice(&d_out.data()[src..src + hw]);
        }
    }
    Ok(dx)
}

/// Concatenate along the channel axis; batch and spatial extents must agree.
/// Either side may have zero channels.
pub fn concat_channels<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (na, ca, ha, wa) = a.dims4()?;
    let (nb, cb, hb, wb) = b.dims4()?;
    if ca == 0 {
        return Ok(b.clone());
    }
    if cb == 0 {
        return Ok(a.clone());
    }
    if na != nb || ha != hb || wa != wb {
        return Err(Error::shape(format!(
            "concat_channels: {:?} and {:?} disagree outside the channel axis",
            a.shape(),
            b.shape()
        )));
    }
    let hw = ha * wa;
    let c = ca + cb;
    let mut out = Tensor::zeros(vec![na, c, ha, wa]);
    for bi in 0..na {
        for ch in 0..ca {
            let dst = ((bi * c) + ch) * hw;
            let src = ((bi * ca) + ch) * hw;
            out.data_mut()[dst..dst + hw].copy_from_slice(&a.data()[src..src + hw]);
        }
        for ch in 0..cb {
            let dst = ((bi * c) + ca + ch) * hw;
            let src = ((bi * cb) + ch) * hw;
            out.data_mut()[dst..dst + hw].copy_from_slice(&b.data()[src..src + hw]);
        }
    }
    Ok(out)
}

/// Extract column `j` of `[N, K]` as a rank-1 `[N]` tensor.
pub fn column<S: Scalar>(x: &Tensor<S>, j: usize) -> Result<Tensor<S>> {
    let (n, k) = x.dims2()?;
    if j >= k {
        return Err(Error::shape(format!("column {j} out of range for width {k}")));
    }
    let mut out = Tensor::zeros(vec![n]);
    for bi in 0..n {
        out.data_mut()[bi] = x.data()[bi * k + j];
    }
    Ok(out)
}

pub fn slice_cols<S: Scalar>(x: &Tensor<S>, from: usize, to: usize) -> Result<Tensor<S>> {
    let (n, k) = x.dims2()?;
    if from > to || to > k {
        return Err(Error::shape(format!("column slice {from}..{to} out of range for width {k}")));
    }
    let width = to - from;
    let mut out = Tensor::zeros(vec![n, width]);
    for r in 0..n {
        out.data_mut()[r * width..(r + 1) * width]
            .copy_from_slice(&x.data()[r * k + from..r * k + to]);
    }
    Ok(out)
}

pub fn concat_cols<S: Scalar>(parts: &[&Tensor<S>]) -> Result<Tensor<S>> {
    if parts.is_empty() {
        return Err(Error::contract("concat_cols needs at least one part"));
    }
    let n = parts[0].dims2()?.0;
    let mut width = 0;
    for p in parts {
        let (pn, pk) = p.dims2()?;
        if pn != n {
            return Err(Error::shape("concat_cols: row counts differ"));
        }
        width += pk;
    }
    let mut out = Tensor::zeros(vec![n, width]);
    for r in 0..n {
        let mut off = 0;
        for p in parts {
            let pk = p.shape()[1];
            out.data_mut()[r * width + off..r * width + off + pk]
                .copy_from_slice(&p.data()[r * pk..(r + 1) * pk]);
            off += pk;
        }
    }
    Ok(out)
}

/// Extract one batch element of `[N, C, H, W]` as `[1, C, H, W]`.
pub fn slice_batch<S: Scalar>(x: &Tensor<S>, index: usize) -> Result<Tensor<S>> {
    let (n, c, h, w) = x.dims4()?;
    if index >= n {
        return Err(Error::shape(format!("batch index {index} out of range for {n}")));
    }
    let chw = c * h * w;
    let mut out = Tensor::zeros(vec![1, c, h, w]);
    out.data_mut().copy_from_slice(&x.data()[index * chw..(index + 1) * chw]);
    Ok(out)
}

pub fn concat_batch<S: Scalar>(parts: &[&Tensor<S>]) -> Result<Tensor<S>> {
    if parts.is_empty() {
        return Err(Error::contract("concat_batch needs at least one part"));
    }
    let (_, c, h, w) = parts[0].dims4()?;
    let mut n = 0;
    for p in parts {
        let (pn, pc, ph, pw) = p.dims4()?;
        if (pc, ph, pw) != (c, h, w) {
            return Err(Error::shape("concat_batch: element shapes differ"));
        }
        n += pn;
    }
    let chw = c * h * w;
    let mut out = Tensor::zeros(vec![n, c, h, w]);
    let mut off = 0;
    for p in parts {
        out.data_mut()[off..off + p.numel()].copy_from_slice(p.data());
        off += p.numel();
    }
    let _ = chw;
    Ok(out)
}

/// `[1, C, h, w] -> [h*w, C]` token matrix (row t is position t in raster
/// order). Single-batch by construction; callers loop over the batch.
pub fn nchw_to_tokens<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c, h, w) = x.dims4()?;
    if n != 1 {
        return Err(Error::contract("nchw_to_tokens expects a single batch element"));
    }
    let hw = h * w;
    let mut out = Tensor::zeros(vec![hw, c]);
    for ch in 0..c {
        for i in 0..hw {
            out.data_mut()[i * c + ch] = x.data()[ch * hw + i];
        }
    }
    Ok(out)
}

pub fn tokens_to_nchw<S: Scalar>(x: &Tensor<S>, h: usize, w: usize) -> Result<Tensor<S>> {
    let (t, c) = x.dims2()?;
    if t != h * w {
        return Err(Error::shape(format!("{t} tokens cannot reshape to {h}x{w}")));
    }
    let hw = h * w;
    let mut out = Tensor::zeros(vec![1, c, h, w]);
    for ch in 0..c {
        for i in 0..hw {
            out.data_mut()[ch * hw + i] = x.data()[i * c + ch];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_half_and_full() {
        let x = Tensor::from_fn(vec![1, 8, 2, 2], |i| i as f32);
        let (a, b) = split_channels(&x, 0.5).unwrap();
        assert_eq!(a.shape(), &[1, 4, 2, 2]);
        assert_eq!(b.shape(), &[1, 4, 2, 2]);

        let (a, b) = split_channels(&x, 1.0).unwrap();
        assert_eq!(a.shape(), &[1, 8, 2, 2]);
        assert_eq!(b.shape(), &[1, 0, 2, 2]);
    }

    #[test]
    fn split_ratio_validation() {
        let x = Tensor::zeros(vec![1, 8, 2, 2]);
        assert!(matches!(split_channels::<f32>(&x, 0.0), Err(Error::Config(_))));
        assert!(matches!(split_channels::<f32>(&x, 1.5), Err(Error::Config(_))));
        // 0.97 * 8 rounds to 8, which would leave an empty bypass at e < 1
        assert!(matches!(split_channels::<f32>(&x, 0.97), Err(Error::Config(_))));
    }

    #[test]
    fn split_concat_roundtrip_bit_exact() {
        let x = Tensor::from_fn(vec![2, 8, 3, 3], |i| (i as f32) * 0.13 - 4.0);
        for ratio in [0.25, 0.5, 0.75, 1.0] {
            let (a, b) = split_channels(&x, ratio).unwrap();
            let back = concat_channels(&a, &b).unwrap();
            assert_eq!(back.data(), x.data(), "roundtrip at ratio {ratio}");
        }
    }

    #[test]
    fn concat_counts_channels() {
        let a = Tensor::zeros(vec![1, 3, 2, 2]);
        let b = Tensor::zeros(vec![1, 5, 2, 2]);
        assert_eq!(concat_channels::<f32>(&a, &b).unwrap().shape(), &[1, 8, 2, 2]);

        let bad = Tensor::zeros(vec![1, 5, 3, 2]);
        assert!(matches!(concat_channels::<f32>(&a, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn token_roundtrip() {
        let x = Tensor::from_fn(vec![1, 3, 2, 4], |i| i as f64);
        let t = nchw_to_tokens(&x).unwrap();
        assert_eq!(t.shape(), &[8, 3]);
        let back = tokens_to_nchw(&t, 2, 4).unwrap();
        assert_eq!(back.data(), x.data());
    }
}
