//! Transfer-function magnitudes of small spatial kernels.
//!
//! For a kernel k the response at (w1, w2) is |sum_{m,n} k[m,n] *
//! exp(-i(w1*m + w2*n))| with taps centered on the kernel midpoint. This is
//! what makes "average pooling is a low-pass, the identity is all-pass, a
//! zero-sum kernel kills DC" quantitative.

use dyfus_core::error::{Error, Result};
use dyfus_core::tensor::{Scalar, Tensor};

/// Magnitude of one kernel at one normalized frequency (radians).
pub fn response_at<S: Scalar>(kernel: &Tensor<S>, w1: f64, w2: f64) -> Result<f64> {
    let (kh, kw) = kernel.dims2()?;
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::config("frequency response needs odd kernel extents"));
    }
    let (ch, cw) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut re = 0.0f64;
    let mut im = 0.0f64;
    for m in 0..kh {
        for n in 0..kw {
            let tap = kernel.data()[m * kw + n].as_f64();
            let phase = -(w1 * (m as isize - ch) as f64 + w2 * (n as isize - cw) as f64);
            re += tap * phase.cos();
            im += tap * phase.sin();
        }
    }
    Ok((re * re + im * im).sqrt())
}

/// Magnitudes sampled on a `grid x grid` lattice over [-pi, pi]^2.
/// `grid` must be odd and >= 3 so the lattice hits DC and both Nyquist axes.
pub fn kernel_freq_response<S: Scalar>(kernel: &Tensor<S>, grid: usize) -> Result<Tensor<f64>> {
    if grid < 3 || grid % 2 == 0 {
        return Err(Error::config(format!("response grid must be odd and >= 3, got {grid}")));
    }
    let step = 2.0 * std::f64::consts::PI / (grid - 1) as f64;
    let mut out = Tensor::zeros(vec![grid, grid]);
    for i in 0..grid {
        let w1 = -std::f64::consts::PI + step * i as f64;
        for j in 0..grid {
            let w2 = -std::f64::consts::PI + step * j as f64;
            out.data_mut()[i * grid + j] = response_at(kernel, w1, w2)?;
        }
    }
    Ok(out)
}

/// The 3x3 box kernel (all 1/9), the transfer function of a stride-1 mean
/// pool away from borders.
pub fn box_kernel_3x3<S: Scalar>() -> Tensor<S> {
    Tensor::full(vec![3, 3], S::from_f64(1.0 / 9.0))
}

pub fn identity_kernel_3x3<S: Scalar>() -> Tensor<S> {
    let mut k = Tensor::zeros(vec![3, 3]);
    k.data_mut()[4] = S::one();
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn box_kernel_dc_and_nyquist() {
        let k = box_kernel_3x3::<f64>();
        assert!((response_at(&k, 0.0, 0.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((response_at(&k, PI, PI).unwrap() - 1.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn identity_kernel_is_all_pass() {
        let k = identity_kernel_3x3::<f64>();
        let grid = kernel_freq_response(&k, 9).unwrap();
        for v in grid.data() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn laplacian_kills_dc() {
        let lap = dyfus_core::init::laplacian_3x3::<f64>();
        let k = Tensor::new(vec![3, 3], lap.to_vec()).unwrap();
        assert!(response_at(&k, 0.0, 0.0).unwrap().abs() < 1e-12);
        // corner response: edge taps cancel against corner taps exactly once
        assert!((response_at(&k, PI, PI).unwrap() - 1.0).abs() < 1e-12);
        // the spectral peak of this stencil sits on the axes, not the corner
        assert!((response_at(&k, PI, 0.0).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn even_grid_rejected() {
        let k = box_kernel_3x3::<f64>();
        assert!(kernel_freq_response(&k, 8).is_err());
    }
}
