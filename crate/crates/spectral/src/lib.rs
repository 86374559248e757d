//! Ground-truth frequency machinery: a radix-2 2-D FFT with round-trip and
//! Parseval guarantees, convolution through the transform domain, an explicit
//! three-band spectral split, and transfer-function evaluation for small
//! kernels. Power-of-two extents only, by design: this crate exists to
//! characterize and benchmark the explicit-transform pipeline, not to be a
//! general FFT library.

pub mod bands;
pub mod convfft;
pub mod fft;
pub mod response;

pub use bands::{band_energies, band_split_fft, BandMasks, DEFAULT_R1, DEFAULT_R2};
pub use convfft::{circular_correlate_direct, conv2d_via_fft};
pub use fft::{fft2, ifft2, parseval_check, ComplexGrid};
pub use response::{box_kernel_3x3, identity_kernel_3x3, kernel_freq_response, response_at};
