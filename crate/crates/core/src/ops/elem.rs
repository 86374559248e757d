//! Elementwise maps and the broadcast products used by gating.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
    Sigmoid,
}

/// GELU in its exact Gaussian-CDF form, x * Phi(x).
pub fn gelu_exact<S: Scalar>(x: S) -> S {
    x * x.std_normal_cdf()
}

/// Logistic sigmoid, clamped into the open interval (0, 1) so gates stay
/// strictly inside it even where `exp` saturates the float format.
pub fn sigmoid<S: Scalar>(x: S) -> S {
    let s = S::one() / (S::one() + (-x).exp());
    s.max(S::min_positive_value()).min(S::below_one())
}

pub fn activation<S: Scalar>(x: &Tensor<S>, kind: Activation) -> Tensor<S> {
    match kind {
        Activation::Relu => x.map(|v| if v > S::zero() { v } else { S::zero() }),
        Activation::Gelu => x.map(gelu_exact),
        Activation::Sigmoid => x.map(sigmoid),
    }
}

/// d activation / d input, evaluated elementwise at the forward input.
pub fn activation_backward<S: Scalar>(
    x: &Tensor<S>,
    kind: Activation,
    d_out: &Tensor<S>,
) -> Tensor<S> {
    let mut dx = Tensor::zeros(x.shape().to_vec());
    let inv_sqrt_2pi = S::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    for ((d, &xi), &g) in dx.data_mut().iter_mut().zip(x.data()).zip(d_out.data()) {
        *d = match kind {
            Activation::Relu => {
                if xi > S::zero() {
                    g
                } else {
                    S::zero()
                }
            }
            Activation::Gelu => {
                let pdf = inv_sqrt_2pi * (-(xi * xi) / S::from_f64(2.0)).exp();
                g * (xi.std_normal_cdf() + xi * pdf)
            }
            Activation::Sigmoid => {
                let s = sigmoid(xi);
                g * s * (S::one() - s)
            }
        };
    }
    dx
}

fn same_shape<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn add<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    same_shape(a, b, "add")?;
    let mut out = Tensor::zeros(a.shape().to_vec());
    for ((o, &x), &y) in out.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
        *o = x + y;
    }
    Ok(out)
}

pub fn mul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    same_shape(a, b, "mul")?;
    let mut out = Tensor::zeros(a.shape().to_vec());
    for ((o, &x), &y) in out.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
        *o = x * y;
    }
    Ok(out)
}

pub fn scale<S: Scalar>(x: &Tensor<S>, c: S) -> Tensor<S> {
    x.map(|v| v * c)
}

pub fn sum_all<S: Scalar>(x: &Tensor<S>) -> S {
    x.data().iter().fold(S::zero(), |acc, &v| acc + v)
}

/// `[N, C, H, W] * [N, C]`, the gate broadcast over spatial positions.
pub fn mul_channel_gate<S: Scalar>(x: &Tensor<S>, gate: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c, h, w) = x.dims4()?;
    let (gn, gc) = gate.dims2()?;
    if gn != n || gc != c {
        return Err(Error::shape(format!(
            "channel gate shape {:?} does not match input {:?}",
            gate.shape(),
            x.shape()
        )));
    }
    let hw = h * w;
    let mut out = Tensor::zeros(x.shape().to_vec());
    for p in 0..n * c {
        let g = gate.data()[p];
        for i in 0..hw {
            out.data_mut()[p * hw + i] = x.data()[p * hw + i] * g;
        }
    }
    Ok(out)
}

pub fn mul_channel_gate_backward<S: Scalar>(
    x: &Tensor<S>,
    gate: &Tensor<S>,
    d_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let mut dx = Tensor::zeros(x.shape().to_vec());
    let mut dg = Tensor::zeros(vec![n, c]);
    for p in 0..n * c {
        let g = gate.data()[p];
        let mut acc = S::zero();
        for i in 0..hw {
            let go = d_out.data()[p * hw + i];
            dx.data_mut()[p * hw + i] = go * g;
            acc = acc + go * x.data()[p * hw + i];
        }
        dg.data_mut()[p] = acc;
    }
    Ok((dx, dg))
}

/// `[N, C, H, W] * [N, 1, H, W]`, the gate broadcast over channels.
pub fn mul_spatial_gate<S: Scalar>(x: &Tensor<S>, gate: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c, h, w) = x.dims4()?;
    let (gn, gc, gh, gw) = gate.dims4()?;
    if gn != n || gc != 1 || gh != h || gw != w {
        return Err(Error::shape(format!(
            "spatial gate shape {:?} does not match input {:?}",
            gate.shape(),
            x.shape()
        )));
    }
    let hw = h * w;
    let mut out = Tensor::zeros(x.shape().to_vec());
    for bi in 0..n {
        for ch in 0..c {
            for i in 0..hw {
                out.data_mut()[(bi * c + ch) * hw + i] =
                    x.data()[(bi * c + ch) * hw + i] * gate.data()[bi * hw + i];
            }
        }
    }
    Ok(out)
}

pub fn mul_spatial_gate_backward<S: Scalar>(
    x: &Tensor<S>,
    gate: &Tensor<S>,
    d_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let mut dx = Tensor::zeros(x.shape().to_vec());
    let mut dg = Tensor::zeros(vec![n, 1, h, w]);
    for bi in 0..n {
        for ch in 0..c {
            for i in 0..hw {
                let xi = (bi * c + ch) * hw + i;
                let go = d_out.data()[xi];
                dx.data_mut()[xi] = go * gate.data()[bi * hw + i];
                dg.data_mut()[bi * hw + i] = dg.data_mut()[bi * hw + i] + go * x.data()[xi];
            }
        }
    }
    Ok((dx, dg))
}

/// `[N, C, H, W] * [N]`, one scalar per batch element.
pub fn mul_batch_scalar<S: Scalar>(x: &Tensor<S>, a: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c, h, w) = x.dims4()?;
    if a.rank() != 1 || a.numel() != n {
        return Err(Error::shape(format!(
            "batch scalar shape {:?} does not match batch {n}",
            a.shape()
        )));
    }
    let chw = c * h * w;
    let mut out = Tensor::zeros(x.shape().to_vec());
    for bi in 0..n {
        let s = a.data()[bi];
        for i in 0..chw {
            out.data_mut()[bi * chw + i] = x.data()[bi * chw + i] * s;
        }
    }
    Ok(out)
}

pub fn mul_batch_scalar_backward<S: Scalar>(
    x: &Tensor<S>,
    a: &Tensor<S>,
    d_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let (n, c, h, w) = x.dims4()?;
    let chw = c * h * w;
    let mut dx = Tensor::zeros(x.shape().to_vec());
    let mut da = Tensor::zeros(vec![n]);
    for bi in 0..n {
        let s = a.data()[bi];
        let mut acc = S::zero();
        for i in 0..chw {
            let go = d_out.data()[bi * chw + i];
            dx.data_mut()[bi * chw + i] = go * s;
            acc = acc + go * x.data()[bi * chw + i];
        }
        da.data_mut()[bi] = acc;
    }
    Ok((dx, da))
}

/// Multiply every element by a single learned scalar held in a `[1]` tensor.
pub fn mul_global_scalar<S: Scalar>(x: &Tensor<S>, s: &Tensor<S>) -> Result<Tensor<S>> {
    if s.numel() != 1 {
        return Err(Error::shape("global scalar must have exactly one element"));
    }
    Ok(scale(x, s.data()[0]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values() {
        let x = Tensor::new(vec![4], vec![-1.0f32, 0.0, 2.0, -0.5]).unwrap();
        let y = activation(&x, Activation::Relu);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn sigmoid_at_zero() {
        assert_eq!(sigmoid(0.0f64), 0.5);
    }

    #[test]
    fn gelu_reference_value() {
        // 1.0 * Phi(1.0) via the exact normal CDF
        let v = gelu_exact(1.0f64);
        assert!((v - 0.8413447460685429).abs() < 1e-12);
        let vf = gelu_exact(1.0f32);
        assert!((vf - 0.841345).abs() < 1e-6);
    }

    #[test]
    fn sigmoid_strictly_open_interval() {
        for &v in &[-80.0f32, -5.0, 0.0, 5.0, 80.0] {
            let s = sigmoid(v);
            assert!(s > 0.0 && s < 1.0, "sigmoid({v}) = {s} not in (0,1)");
        }
    }

    #[test]
    fn channel_gate_broadcast() {
        let x = Tensor::full(vec![1, 2, 2, 2], 1.0f32);
        let g = Tensor::new(vec![1, 2], vec![0.5f32, 2.0]).unwrap();
        let y = mul_channel_gate(&x, &g).unwrap();
        assert_eq!(&y.data()[0..4], &[0.5, 0.5, 0.5, 0.5]);
        assert_eq!(&y.data()[4..8], &[2.0, 2.0, 2.0, 2.0]);
    }
}
