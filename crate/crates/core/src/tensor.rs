//! Dense row-major tensors of rank 1, 2, or 4.
//!
//! Rank-4 layout is fixed to batch-channel-height-width. The element type is
//! generic over [`Scalar`] so forward/bench paths run in `f32` while gradient
//! verification runs in `f64`.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// Counts tensor buffer allocations; the benchmark reports the per-iteration
/// delta as its allocation metric.
static ALLOC_COUNT: AtomicU64 = AtomicU64::new(0);

pub fn alloc_count() -> u64 {
    ALLOC_COUNT.load(Ordering::Relaxed)
}

fn note_alloc() {
    ALLOC_COUNT.fetch_add(1, Ordering::Relaxed);
}

/// Element type of every tensor: `f32` or `f64`.
pub trait Scalar:
    num_traits::Float + fmt::Display + fmt::Debug + FromStr + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    /// Standard normal CDF, evaluated through `erf` in double precision.
    fn std_normal_cdf(self) -> Self;
    /// Largest representable value strictly below one.
    fn below_one() -> Self;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn std_normal_cdf(self) -> Self {
        (0.5 * (1.0 + libm::erf(self as f64 / std::f64::consts::SQRT_2))) as f32
    }
    fn below_one() -> Self {
        1.0f32.next_down()
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn std_normal_cdf(self) -> Self {
        0.5 * (1.0 + libm::erf(self / std::f64::consts::SQRT_2))
    }
    fn below_one() -> Self {
        1.0f64.next_down()
    }
}

/// Dense tensor. Shape extents are all positive except that a rank-4 channel
/// extent of zero is allowed, which is what a degenerate channel split
/// (ratio 1) produces for its bypass half.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if !matches!(shape.len(), 1 | 2 | 4) {
            return Err(Error::contract(format!(
                "tensor rank must be 1, 2 or 4, got {}",
                shape.len()
            )));
        }
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::shape(format!(
                "data length {} does not match shape {:?} (numel {})",
                data.len(),
                shape,
                numel
            )));
        }
        note_alloc();
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        note_alloc();
        Tensor { shape, data: vec![S::zero(); numel] }
    }

    pub fn full(shape: Vec<usize>, value: S) -> Self {
        let numel: usize = shape.iter().product();
        note_alloc();
        Tensor { shape, data: vec![value; numel] }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> S) -> Self {
        let numel: usize = shape.iter().product();
        note_alloc();
        Tensor { shape, data: (0..numel).map(|i| f(i)).collect() }
    }

    pub fn scalar(value: S) -> Self {
        Tensor::new(vec![1], vec![value]).expect("scalar tensor")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    /// Extents of a rank-4 tensor as (batch, channels, height, width).
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        if self.rank() != 4 {
            return Err(Error::contract(format!(
                "expected rank-4 tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok((self.shape[0], self.shape[1], self.shape[2], self.shape[3]))
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        if self.rank() != 2 {
            return Err(Error::contract(format!(
                "expected rank-2 tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Tensor<S> {
        note_alloc();
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        note_alloc();
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.as_f64())).collect(),
        }
    }

    /// Text dump: a `shape:` header line followed by the elements in
    /// row-major order. Values use the shortest round-trippable decimal
    /// form, so dump -> parse -> dump is byte-identical.
    pub fn write_dump<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "shape:")?;
        for d in &self.shape {
            write!(w, " {d}")?;
        }
        writeln!(w)?;
        let per_line = match self.rank() {
            4 => self.shape[3].max(1),
            2 => self.shape[1],
            _ => 16,
        };
        for chunk in self.data.chunks(per_line.max(1)) {
            let line: Vec<String> = chunk.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read_dump<R: BufRead>(mut r: R) -> Result<Self> {
        let mut header = String::new();
        r.read_line(&mut header)
            .map_err(|e| Error::integrity(format!("dump read: {e}")))?;
        let header = header.trim();
        let rest = header
            .strip_prefix("shape:")
            .ok_or_else(|| Error::integrity("dump missing `shape:` header"))?;
        let shape: Vec<usize> = rest
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| Error::integrity("bad extent in dump header")))
            .collect::<Result<_>>()?;
        let mut body = String::new();
        r.read_to_string(&mut body)
            .map_err(|e| Error::integrity(format!("dump read: {e}")))?;
        let data: Vec<S> = body
            .split_whitespace()
            .map(|t| t.parse::<S>().map_err(|_| Error::integrity(format!("bad scalar `{t}` in dump"))))
            .collect::<Result<_>>()?;
        Tensor::new(shape, data)
    }
}

/// Row-major offset into a rank-4 tensor.
#[inline(always)]
pub fn idx4(c: usize, h: usize, w: usize, n: usize, ch: usize, y: usize, x: usize) -> usize {
    ((n * c + ch) * h + y) * w + x
}

/// Relative difference |a-b| / max(1, |b|), the tolerance metric used by the
/// oracle-equivalence and gradient suites.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Maximum relative difference between two equally-shaped tensors.
pub fn max_rel_diff<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "max_rel_diff shape mismatch");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| rel_diff(x.as_f64(), y.as_f64()))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_rank3() {
        assert!(Tensor::<f32>::new(vec![1, 2, 3], vec![0.0; 6]).is_err());
    }

    #[test]
    fn rejects_length_mismatch() {
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn zero_channel_split_half_is_representable() {
        let t = Tensor::<f32>::new(vec![1, 0, 3, 3], vec![]).unwrap();
        assert_eq!(t.numel(), 0);
    }

    #[test]
    fn dump_roundtrip_is_byte_identical() {
        let t = Tensor::<f32>::new(vec![1, 2, 2, 2], vec![1.0, -0.5, 3.25, 0.1, 7.0, 2.5e-3, 9.0, 4.0])
            .unwrap();
        let mut buf = Vec::new();
        t.write_dump(&mut buf).unwrap();
        let back = Tensor::<f32>::read_dump(&buf[..]).unwrap();
        assert_eq!(back, t);
        let mut buf2 = Vec::new();
        back.write_dump(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn std_normal_cdf_reference_points() {
        assert!((f64::std_normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((f64::std_normal_cdf(1.0) - 0.8413447460685429).abs() < 1e-12);
    }
}
