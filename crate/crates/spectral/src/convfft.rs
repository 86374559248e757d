//! Cross-correlation through the transform domain with circular boundary
//! semantics. Doubles as an independent oracle for the direct convolution:
//! away from the padded border the two must agree.

use dyfus_core::error::{Error, Result};
use dyfus_core::tensor::{Scalar, Tensor};

use crate::fft::{fft2, ifft2, ComplexGrid};

/// Embed a small centered kernel into an H x W grid with the center tap at
/// the origin and the remaining taps wrapped circularly.
fn embed_kernel<S: Scalar>(kernel: &Tensor<S>, h: usize, w: usize) -> Result<Tensor<S>> {
    let (kh, kw) = kernel.dims2()?;
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::config("conv2d_via_fft needs odd kernel extents"));
    }
    if kh > h || kw > w {
        return Err(Error::shape(format!(
            "kernel {kh}x{kw} larger than grid {h}x{w} after padding"
        )));
    }
    let (ch, cw) = (kh / 2, kw / 2);
    let mut out = Tensor::zeros(vec![h, w]);
    for m in 0..kh {
        for n in 0..kw {
            let y = (m + h - ch) % h;
            let x = (n + w - cw) % w;
            out.data_mut()[y * w + x] = kernel.data()[m * kw + n];
        }
    }
    Ok(out)
}

/// Circular cross-correlation of a rank-2 input with a small odd kernel:
/// y[p] = sum_t x[(p + t - center) mod extents] * k[t], computed as
/// IFFT(FFT(x) * conj(FFT(k_embedded))).
pub fn conv2d_via_fft<S: Scalar>(x: &Tensor<S>, kernel: &Tensor<S>) -> Result<Tensor<S>> {
    let (h, w) = x.dims2()?;
    let xs = fft2(x)?;
    let ks = fft2(&embed_kernel(kernel, h, w)?)?;
    let mut prod = ComplexGrid::zeros(h, w);
    for i in 0..h * w {
        let (xr, xi) = (xs.data[2 * i], xs.data[2 * i + 1]);
        let (kr, ki) = (ks.data[2 * i], ks.data[2 * i + 1]);
        // multiply by the conjugate: correlation, matching direct conv2d
        prod.data[2 * i] = xr * kr + xi * ki;
        prod.data[2 * i + 1] = xi * kr - xr * ki;
    }
    ifft2(&prod)
}

/// Direct circular cross-correlation, the independent check for the FFT path.
pub fn circular_correlate_direct<S: Scalar>(
    x: &Tensor<S>,
    kernel: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (h, w) = x.dims2()?;
    let (kh, kw) = kernel.dims2()?;
    let (ch, cw) = (kh / 2, kw / 2);
    let mut out = Tensor::zeros(vec![h, w]);
    for y in 0..h {
        for xx in 0..w {
            let mut acc = S::zero();
            for m in 0..kh {
                for n in 0..kw {
                    let iy = (y + m + h - ch) % h;
                    let ix = (xx + n + w - cw) % w;
                    acc = acc + kernel.data()[m * kw + n] * x.data()[iy * w + ix];
                }
            }
            out.data_mut()[y * w + xx] = acc;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dyfus_core::max_rel_diff;

    #[test]
    fn delta_kernel_is_identity() {
        let x = Tensor::from_fn(vec![8, 8], |i| (i as f64) * 0.173 - 5.0);
        let mut k = Tensor::<f64>::zeros(vec![3, 3]);
        k.data_mut()[4] = 1.0;
        let y = conv2d_via_fft(&x, &k).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn box_kernel_preserves_constants() {
        let x = Tensor::full(vec![8, 8], 2.5f64);
        let k = Tensor::full(vec![3, 3], 1.0f64 / 9.0);
        let y = conv2d_via_fft(&x, &k).unwrap();
        for v in y.data() {
            assert!((v - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn fft_path_matches_direct_circular() {
        let x = Tensor::from_fn(vec![16, 16], |i| ((i * 31) % 23) as f64 * 0.17 - 1.9);
        let k = Tensor::from_fn(vec![3, 3], |i| ((i * 7) % 5) as f64 * 0.3 - 0.6);
        let a = conv2d_via_fft(&x, &k).unwrap();
        let b = circular_correlate_direct(&x, &k).unwrap();
        assert!(max_rel_diff(&a, &b) < 1e-10);
    }

    #[test]
    fn oversized_kernel_is_shape_error() {
        let x = Tensor::<f64>::zeros(vec![2, 2]);
        let k = Tensor::<f64>::zeros(vec![3, 3]);
        assert!(conv2d_via_fft(&x, &k).is_err());
    }
}
