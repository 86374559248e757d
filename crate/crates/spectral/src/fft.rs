//! Radix-2 2-D discrete Fourier transform.
//!
//! Power-of-two extents only. The forward transform is unnormalized; the
//! inverse divides by H*W, so ifft2(fft2(x)) reproduces x and Parseval reads
//! sum |x|^2 = sum |X|^2 / (H*W).

use dyfus_core::error::{Error, Result};
use dyfus_core::tensor::{Scalar, Tensor};

/// Complex samples on an H x W grid, stored interleaved (re, im) row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid<S> {
    pub height: usize,
    pub width: usize,
    /// 2 * height * width scalars.
    pub data: Vec<S>,
}

impl<S: Scalar> ComplexGrid<S> {
    pub fn zeros(height: usize, width: usize) -> Self {
        ComplexGrid { height, width, data: vec![S::zero(); 2 * height * width] }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> (S, S) {
        let i = 2 * (y * self.width + x);
        (self.data[i], self.data[i + 1])
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, re: S, im: S) {
        let i = 2 * (y * self.width + x);
        self.data[i] = re;
        self.data[i + 1] = im;
    }

    /// Sum of squared magnitudes over all bins.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64() * v.as_f64()).sum()
    }
}

fn require_pow2(n: usize, what: &str) -> Result<()> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::shape(format!("{what} extent {n} is not a power of two")));
    }
    Ok(())
}

/// In-place iterative radix-2 transform of one line of `n` complex values at
/// stride `stride` pairs. `sign` is -1 for forward, +1 for inverse.
fn fft_line<S: Scalar>(data: &mut [S], offset: usize, stride: usize, n: usize, sign: f64) {
    // bit-reversal permutation
    let mut j = 0usize;
    for i in 0..n {
        if i < j {
            let (a, b) = (offset + 2 * i * stride, offset + 2 * j * stride);
            data.swap(a, b);
            data.swap(a + 1, b + 1);
        }
        let mut m = n >> 1;
        while m >= 1 && j & m != 0 {
            j ^= m;
            m >>= 1;
        }
        j |= m;
    }
    // butterflies
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * std::f64::consts::PI / len as f64;
        let (wr0, wi0) = (S::from_f64(ang.cos()), S::from_f64(ang.sin()));
        let half = len / 2;
        let mut start = 0;
        while start < n {
            let mut wr = S::one();
            let mut wi = S::zero();
            for k in 0..half {
                let a = offset + 2 * (start + k) * stride;
                let b = offset + 2 * (start + k + half) * stride;
                let (br, bi) = (data[b], data[b + 1]);
                let tr = wr * br - wi * bi;
                let ti = wr * bi + wi * br;
                data[b] = data[a] - tr;
                data[b + 1] = data[a + 1] - ti;
                data[a] = data[a] + tr;
                data[a + 1] = data[a + 1] + ti;
                let nwr = wr * wr0 - wi * wi0;
                wi = wr * wi0 + wi * wr0;
                wr = nwr;
            }
            start += len;
        }
        len <<= 1;
    }
}

fn fft2_inplace<S: Scalar>(grid: &mut ComplexGrid<S>, sign: f64) {
    let (h, w) = (grid.height, grid.width);
    for row in 0..h {
        fft_line(&mut grid.data, 2 * row * w, 1, w, sign);
    }
    for col in 0..w {
        fft_line(&mut grid.data, 2 * col, w, h, sign);
    }
}

/// Forward 2-D DFT of a real rank-2 tensor.
pub fn fft2<S: Scalar>(x: &Tensor<S>) -> Result<ComplexGrid<S>> {
    let (h, w) = x.dims2()?;
    require_pow2(h, "fft2 height")?;
    require_pow2(w, "fft2 width")?;
    let mut grid = ComplexGrid::zeros(h, w);
    for (i, &v) in x.data().iter().enumerate() {
        grid.data[2 * i] = v;
    }
    fft2_inplace(&mut grid, -1.0);
    Ok(grid)
}

/// Inverse 2-D DFT; returns the real part (imaginary residue of a spectrum
/// that came from real data is rounding noise).
pub fn ifft2<S: Scalar>(spectrum: &ComplexGrid<S>) -> Result<Tensor<S>> {
    require_pow2(spectrum.height, "ifft2 height")?;
    require_pow2(spectrum.width, "ifft2 width")?;
    let mut grid = spectrum.clone();
    fft2_inplace(&mut grid, 1.0);
    let norm = S::from_f64(1.0 / (grid.height * grid.width) as f64);
    let data: Vec<S> = (0..grid.height * grid.width).map(|i| grid.data[2 * i] * norm).collect();
    Tensor::new(vec![grid.height, grid.width], data)
}

/// Relative energy mismatch between the spatial and spectral domains:
/// |E_spatial - E_spectral/(H*W)| / E_spatial, zero for zero input.
pub fn parseval_check<S: Scalar>(x: &Tensor<S>) -> Result<f64> {
    let spectrum = fft2(x)?;
    let spatial: f64 = x.data().iter().map(|v| v.as_f64() * v.as_f64()).sum();
    if spatial == 0.0 {
        return Ok(0.0);
    }
    let spectral = spectrum.energy() / (spectrum.height * spectrum.width) as f64;
    Ok((spatial - spectral).abs() / spatial)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_impulse_has_flat_unit_spectrum() {
        let mut x = Tensor::<f64>::zeros(vec![8, 8]);
        x.data_mut()[0] = 1.0;
        let spec = fft2(&x).unwrap();
        for y in 0..8 {
            for xx in 0..8 {
                let (re, im) = spec.at(y, xx);
                assert!((re - 1.0).abs() < 1e-12 && im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_input_is_a_single_dc_bin() {
        let c = 0.75f64;
        let x = Tensor::full(vec![4, 8], c);
        let spec = fft2(&x).unwrap();
        let (re, im) = spec.at(0, 0);
        assert!((re - c * 32.0).abs() < 1e-10 && im.abs() < 1e-12);
        for y in 0..4 {
            for xx in 0..8 {
                if (y, xx) != (0, 0) {
                    let (re, im) = spec.at(y, xx);
                    assert!(re.abs() < 1e-10 && im.abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn roundtrip_and_parseval() {
        let x = Tensor::from_fn(vec![8, 8], |i| ((i * 2654435761) % 1000) as f64 / 500.0 - 1.0);
        let back = ifft2(&fft2(&x).unwrap()).unwrap();
        for (a, b) in x.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(parseval_check(&x).unwrap() < 1e-12);
    }

    #[test]
    fn zero_input_has_zero_parseval_error_by_convention() {
        let x = Tensor::<f64>::zeros(vec![4, 4]);
        assert_eq!(parseval_check(&x).unwrap(), 0.0);
    }

    #[test]
    fn non_power_of_two_rejected() {
        let x = Tensor::<f64>::zeros(vec![6, 8]);
        assert!(fft2(&x).is_err());
    }
}
