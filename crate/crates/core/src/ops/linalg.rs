//! Dense linear maps, row softmax, matrix products, and layer normalization.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// `y = x W^T + b` for `x: [N, Cin]`, `w: [Cout, Cin]`.
pub fn linear<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    bias: Option<&Tensor<S>>,
) -> Result<Tensor<S>> {
    let (n, cin) = x.dims2()?;
    let (cout, wcin) = w.dims2()?;
    if wcin != cin {
        return Err(Error::shape(format!(
            "linear: input width {cin} does not match weight {:?}",
            w.shape()
        )));
    }
    if let Some(b) = bias {
        if b.numel() != cout {
            return Err(Error::shape("linear bias length mismatch"));
        }
    }
    let mut out = Tensor::zeros(vec![n, cout]);
    for bi in 0..n {
        for o in 0..cout {
            let mut acc = bias.map_or(S::zero(), |b| b.data()[o]);
            for i in 0..cin {
                acc = acc + w.data()[o * cin + i] * x.data()[bi * cin + i];
            }
            out.data_mut()[bi * cout + o] = acc;
        }
    }
    Ok(out)
}

pub fn linear_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    has_bias: bool,
    d_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>, Option<Tensor<S>>)> {
    let (n, cin) = x.dims2()?;
    let (cout, _) = w.dims2()?;
    let mut dx = Tensor::zeros(vec![n, cin]);
    let mut dw = Tensor::zeros(vec![cout, cin]);
    let mut db = if has_bias { Some(Tensor::zeros(vec![cout])) } else { None };
    for bi in 0..n {
        for o in 0..cout {
            let go = d_out.data()[bi * cout + o];
            if let Some(db) = db.as_mut() {
                db.data_mut()[o] = db.data_mut()[o] + go;
            }
            for i in 0..cin {
                dx.data_mut()[bi * cin + i] = dx.data_mut()[bi * cin + i] + go * w.data()[o * cin + i];
                dw.data_mut()[o * cin + i] = dw.data_mut()[o * cin + i] + go * x.data()[bi * cin + i];
            }
        }
    }
    Ok((dx, dw, db))
}

/// Numerically stabilized softmax across the last axis. Accepts a rank-1
/// vector (one row) or a rank-2 `[rows, cols]` tensor.
pub fn softmax<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let (rows, cols) = match x.rank() {
        1 => (1, x.numel()),
        2 => x.dims2()?,
        r => return Err(Error::contract(format!("softmax expects rank 1 or 2, got {r}"))),
    };
    if cols == 0 {
        return Err(Error::shape("softmax over an empty row"));
    }
    let mut out = Tensor::zeros(x.shape().to_vec());
    for r in 0..rows {
        let row = &x.data()[r * cols..(r + 1) * cols];
        let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
        let mut denom = S::zero();
        for (o, &v) in out.data_mut()[r * cols..(r + 1) * cols].iter_mut().zip(row) {
            let e = (v - max).exp();
            *o = e;
            denom = denom + e;
        }
        for o in &mut out.data_mut()[r * cols..(r + 1) * cols] {
            *o = *o / denom;
        }
    }
    Ok(out)
}

/// Softmax over a rank-1 vector, returning a rank-1 result.
pub fn softmax_vec<S: Scalar>(v: &Tensor<S>) -> Result<Tensor<S>> {
    if v.rank() != 1 {
        return Err(Error::contract("softmax_vec expects a rank-1 tensor"));
    }
    softmax(v)
}

/// VJP through softmax given the forward output `y`.
pub fn softmax_backward<S: Scalar>(y: &Tensor<S>, d_out: &Tensor<S>) -> Result<Tensor<S>> {
    let (rows, cols) = match y.rank() {
        1 => (1, y.numel()),
        _ => y.dims2()?,
    };
    let mut dx = Tensor::zeros(y.shape().to_vec());
    for r in 0..rows {
        let base = r * cols;
        let mut dot = S::zero();
        for i in 0..cols {
            dot = dot + d_out.data()[base + i] * y.data()[base + i];
        }
        for i in 0..cols {
            dx.data_mut()[base + i] = y.data()[base + i] * (d_out.data()[base + i] - dot);
        }
    }
    Ok(dx)
}

/// `[M, K] @ [K, N]`.
pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::shape(format!(
            "matmul: inner extents {k} and {k2} differ"
        )));
    }
    let mut out = Tensor::zeros(vec![m, n]);
    for i in 0..m {
        for j in 0..n {
            let mut acc = S::zero();
            for t in 0..k {
                acc = acc + a.data()[i * k + t] * b.data()[t * n + j];
            }
            out.data_mut()[i * n + j] = acc;
        }
    }
    Ok(out)
}

/// `[M, K] @ [N, K]^T`, used for attention scores.
pub fn matmul_nt<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (m, k) = a.dims2()?;
    let (n, k2) = b.dims2()?;
    if k != k2 {
        return Err(Error::shape(format!(
            "matmul_nt: inner extents {k} and {k2} differ"
        )));
    }
    let mut out = Tensor::zeros(vec![m, n]);
    for i in 0..m {
        for j in 0..n {
            let mut acc = S::zero();
            for t in 0..k {
                acc = acc + a.data()[i * k + t] * b.data()[j * k + t];
            }
            out.data_mut()[i * n + j] = acc;
        }
    }
    Ok(out)
}

pub fn transpose2<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let (m, n) = x.dims2()?;
    let mut out = Tensor::zeros(vec![n, m]);
    for i in 0..m {
        for j in 0..n {
            out.data_mut()[j * m + i] = x.data()[i * n + j];
        }
    }
    Ok(out)
}

/// Row-wise layer normalization over `[T, D]` with per-feature gain/bias.
pub fn layer_norm<S: Scalar>(
    x: &Tensor<S>,
    gain: &Tensor<S>,
    bias: &Tensor<S>,
    eps: S,
) -> Result<Tensor<S>> {
    let (t, d) = x.dims2()?;
    if gain.numel() != d || bias.numel() != d {
        return Err(Error::shape("layer_norm gain/bias length must equal feature width"));
    }
    let inv_d = S::from_f64(1.0 / d as f64);
    let mut out = Tensor::zeros(vec![t, d]);
    for r in 0..t {
        let row = &x.data()[r * d..(r + 1) * d];
        let mean = row.iter().fold(S::zero(), |a, &v| a + v) * inv_d;
        let var = row.iter().fold(S::zero(), |a, &v| a + (v - mean) * (v - mean)) * inv_d;
        let inv_std = S::one() / (var + eps).sqrt();
        for i in 0..d {
            out.data_mut()[r * d + i] =
                gain.data()[i] * (row[i] - mean) * inv_std + bias.data()[i];
        }
    }
    Ok(out)
}

pub fn layer_norm_backward<S: Scalar>(
    x: &Tensor<S>,
    gain: &Tensor<S>,
    eps: S,
    d_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let (t, d) = x.dims2()?;
    let inv_d = S::from_f64(1.0 / d as f64);
    let mut dx = Tensor::zeros(vec![t, d]);
    let mut dgain = Tensor::zeros(vec![d]);
    let mut dbias = Tensor::zeros(vec![d]);
    for r in 0..t {
        let row = &x.data()[r * d..(r + 1) * d];
        let go = &d_out.data()[r * d..(r + 1) * d];
        let mean = row.iter().fold(S::zero(), |a, &v| a + v) * inv_d;
        let var = row.iter().fold(S::zero(), |a, &v| a + (v - mean) * (v - mean)) * inv_d;
        let inv_std = S::one() / (var + eps).sqrt();

        // d wrt normalized activations, then fold in the mean/var paths.
        let mut sum_dn = S::zero();
        let mut sum_dn_xhat = S::zero();
        for i in 0..d {
            let xhat = (row[i] - mean) * inv_std;
            let dn = go[i] * gain.data()[i];
            sum_dn = sum_dn + dn;
            sum_dn_xhat = sum_dn_xhat + dn * xhat;
            dgain.data_mut()[i] = dgain.data_mut()[i] + go[i] * xhat;
            dbias.data_mut()[i] = dbias.data_mut()[i] + go[i];
        }
        for i in 0..d {
            let xhat = (row[i] - mean) * inv_std;
            let dn = go[i] * gain.data()[i];
            dx.data_mut()[r * d + i] =
                inv_std * (dn - sum_dn * inv_d - xhat * sum_dn_xhat * inv_d);
        }
    }
    Ok((dx, dgain, dbias))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_identity_and_dot() {
        let x = Tensor::new(vec![1, 2], vec![2.0f32, 3.0]).unwrap();
        let eye = Tensor::new(vec![2, 2], vec![1.0f32, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(linear(&x, &eye, None).unwrap().data(), x.data());

        let w = Tensor::new(vec![1, 2], vec![1.0f32, 1.0]).unwrap();
        assert_eq!(linear(&x, &w, None).unwrap().data(), &[5.0]);
    }

    #[test]
    fn linear_shape_mismatch() {
        let x = Tensor::new(vec![1, 3], vec![0.0f32; 3]).unwrap();
        let w = Tensor::new(vec![2, 2], vec![0.0f32; 4]).unwrap();
        assert!(matches!(linear(&x, &w, None), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_symmetry_and_overflow() {
        let v = Tensor::new(vec![3], vec![0.0f32, 0.0, 0.0]).unwrap();
        let s = softmax_vec(&v).unwrap();
        for x in s.data() {
            assert!((x - 1.0 / 3.0).abs() < 1e-7);
        }

        let big = Tensor::new(vec![2], vec![1000.0f32, 0.0]).unwrap();
        let s = softmax_vec(&big).unwrap();
        assert!(s.all_finite());
        assert!((s.data()[0] - 1.0).abs() < 1e-6);
        assert!(s.data()[1] >= 0.0 && s.data()[1] < 1e-6);
    }

    #[test]
    fn softmax_shift_invariance() {
        let v = Tensor::new(vec![4], vec![0.3f64, -1.2, 2.0, 0.7]).unwrap();
        let shifted = v.map(|x| x + 17.3);
        let a = softmax_vec(&v).unwrap();
        let b = softmax_vec(&shifted).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-7);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = Tensor::new(vec![1, 4], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let gain = Tensor::full(vec![4], 1.0f64);
        let bias = Tensor::zeros(vec![4]);
        let y = layer_norm(&x, &gain, &bias, 1e-12).unwrap();
        let mean: f64 = y.data().iter().sum::<f64>() / 4.0;
        let var: f64 = y.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-9);
    }
}
