//! Expert convolution with content-adaptive selection: K identically-shaped
//! expert kernels whose outputs are blended by per-sample softmax weights
//! from the pooled descriptor. Because convolution is linear in the kernel,
//! blending outputs equals convolving with the blended kernel; both routes
//! are implemented and tested against each other.

use dyfus_core::backend::{Backend, Eager};
use dyfus_core::error::{Error, Result};
use dyfus_core::init::Rng;
use dyfus_core::ops::{self, ConvMeta, ConvSpec, Padding};
use dyfus_core::tensor::{Scalar, Tensor};

use crate::params::{join, ParamSet};

pub const DEFAULT_EXPERTS: usize = 3;

#[derive(Debug, Clone)]
pub struct DeconvParams<S> {
    pub channels: usize,
    /// K >= 2 identically-shaped experts, bias-free so each extra expert
    /// contributes exactly one kernel plus C gate weights.
    pub experts: Vec<ConvSpec<S>>,
    /// `[K, C]` descriptor-to-logit map.
    pub gate_fc: Tensor<S>,
    /// Test hook: fixed selection weights instead of the gate.
    pub frozen_delta: Option<Vec<f64>>,
}

fn expert_meta(channels: usize) -> ConvMeta {
    ConvMeta {
        in_channels: channels,
        out_channels: channels,
        kernel_h: 3,
        kernel_w: 3,
        stride: 1,
        groups: 1,
        padding: Padding::Zero,
    }
}

impl<S: Scalar> DeconvParams<S> {
    pub fn init(channels: usize, experts: usize, rng: &mut Rng) -> Result<Self> {
        if experts < 2 {
            return Err(Error::config(format!("experts: need at least 2, got {experts}")));
        }
        let meta = expert_meta(channels);
        let fan_in = channels * 9;
        let experts = (0..experts)
            .map(|_| ConvSpec::new(meta, rng.fan_in_tensor(meta.weight_shape(), fan_in), None))
            .collect::<Result<Vec<_>>>()?;
        let k = experts.len();
        let gate_fc = rng.fan_in_tensor(vec![k, channels], channels);
        Ok(DeconvParams { channels, experts, gate_fc, frozen_delta: None })
    }

    pub fn with_frozen_delta(mut self, delta: Vec<f64>) -> Self {
        self.frozen_delta = Some(delta);
        self
    }

    pub fn zero_gate(mut self) -> Self {
        self.gate_fc = Tensor::zeros(self.gate_fc.shape().to_vec());
        self
    }

    pub fn expert_count(&self) -> usize {
        self.experts.len()
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.channels != channels {
            return Err(Error::shape(format!(
                "expert convolution built for {} channels, input has {channels}",
                self.channels
            )));
        }
        if self.experts.len() < 2 {
            return Err(Error::config("expert convolution needs at least two experts"));
        }
        let meta = self.experts[0].meta;
        for e in &self.experts {
            if e.meta != meta {
                return Err(Error::config("all experts must share identical shape metadata"));
            }
        }
        if let Some(d) = &self.frozen_delta {
            if d.len() != self.experts.len() {
                return Err(Error::config("frozen selection length must equal expert count"));
            }
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> DeconvParams<T> {
        DeconvParams {
            channels: self.channels,
            experts: self.experts.iter().map(|e| e.cast()).collect(),
            gate_fc: self.gate_fc.cast(),
            frozen_delta: self.frozen_delta.clone(),
        }
    }
}

impl<S: Scalar> ParamSet<S> for DeconvParams<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        for (i, e) in self.experts.iter().enumerate() {
            f(&join(prefix, &format!("expert{i}.weight")), &e.weight);
        }
        f(&join(prefix, "gate_fc"), &self.gate_fc);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        for (i, e) in self.experts.iter_mut().enumerate() {
            f(&join(prefix, &format!("expert{i}.weight")), &mut e.weight);
        }
        f(&join(prefix, "gate_fc"), &mut self.gate_fc);
    }
}

/// Forward pass: returns (blended output, selection weights `[N, K]`).
pub fn forward_b<B: Backend>(
    b: &mut B,
    x: &B::Val,
    p: &DeconvParams<B::S>,
    prefix: &str,
) -> Result<(B::Val, B::Val)> {
    let shape = b.shape(x);
    p.validate(shape[1])?;
    let n = shape[0];
    let k = p.experts.len();

    let delta = if let Some(d) = &p.frozen_delta {
        let t = Tensor::from_fn(vec![n, k], |i| B::S::from_f64(d[i % k]));
        b.constant(&t)
    } else {
        let gate = b.param(&join(prefix, "gate_fc"), &p.gate_fc);
        let desc = b.global_avg_pool(x)?;
        let logits = b.linear(&desc, &gate, None)?;
        b.softmax(&logits)?
    };

    let mut blended: Option<B::Val> = None;
    for (i, expert) in p.experts.iter().enumerate() {
        let w = b.param(&join(prefix, &format!("expert{i}.weight")), &expert.weight);
        let out = b.conv2d(x, &w, None, &expert.meta)?;
        let di = b.column(&delta, i)?;
        let weighted = b.mul_batch_scalar(&out, &di)?;
        blended = Some(match blended {
            Some(acc) => b.add(&acc, &weighted)?,
            None => weighted,
        });
    }
    Ok((blended.expect("at least two experts"), delta))
}

/// Eager forward: `(y, delta)` tensors.
pub fn deconv_forward<S: Scalar>(
    x: &Tensor<S>,
    p: &DeconvParams<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let mut b = Eager::<S>::default();
    forward_b(&mut b, x, p, "deconv")
}

/// The algebraically equivalent route: convolve each sample once with the
/// selection-blended kernel. Kept separate from the sum-of-outputs route so
/// the two can check each other.
pub fn deconv_forward_aggregated<S: Scalar>(
    x: &Tensor<S>,
    p: &DeconvParams<S>,
) -> Result<Tensor<S>> {
    let (n, c, _, _) = x.dims4()?;
    p.validate(c)?;
    let (_, delta) = deconv_forward(x, p)?;
    let meta = p.experts[0].meta;
    let wlen = p.experts[0].weight.numel();

    let mut per_batch = Vec::with_capacity(n);
    for bi in 0..n {
        let mut agg = Tensor::zeros(meta.weight_shape());
        for (ki, expert) in p.experts.iter().enumerate() {
            let d = delta.data()[bi * p.experts.len() + ki];
            for i in 0..wlen {
                agg.data_mut()[i] = agg.data_mut()[i] + d * expert.weight.data()[i];
            }
        }
        let xb = ops::slice_batch(x, bi)?;
        per_batch.push(ops::conv2d_raw(&xb, &meta, &agg, None)?);
    }
    let refs: Vec<&Tensor<S>> = per_batch.iter().collect();
    ops::concat_batch(&refs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dyfus_core::max_rel_diff;

    fn rng() -> Rng {
        Rng::new(31, 0)
    }

    #[test]
    fn zero_gate_blends_uniformly() {
        let p = DeconvParams::<f64>::init(4, 3, &mut rng()).unwrap().zero_gate();
        let x = rng().tensor(vec![2, 4, 5, 5], 1.0);
        let (y, delta) = deconv_forward(&x, &p).unwrap();
        for d in delta.data() {
            assert!((d - 1.0 / 3.0).abs() < 1e-12);
        }
        // mean of expert outputs
        let mut mean = Tensor::<f64>::zeros(y.shape().to_vec());
        for e in &p.experts {
            let out = ops::conv2d(&x, e).unwrap();
            for (m, v) in mean.data_mut().iter_mut().zip(out.data()) {
                *m += v / 3.0;
            }
        }
        assert!(max_rel_diff(&y, &mean) < 1e-12);
    }

    #[test]
    fn scalar_kernel_blend_reference() {
        // two 1x1 single-channel experts with kernels 2.0 and 4.0, frozen
        // selection (0.25, 0.75), all-ones input -> 0.25*2 + 0.75*4 = 3.5
        let meta = ConvMeta {
            in_channels: 1,
            out_channels: 1,
            kernel_h: 1,
            kernel_w: 1,
            stride: 1,
            groups: 1,
            padding: Padding::Zero,
        };
        let e1 = ConvSpec::new(meta, Tensor::full(vec![1, 1, 1, 1], 2.0f64), None).unwrap();
        let e2 = ConvSpec::new(meta, Tensor::full(vec![1, 1, 1, 1], 4.0f64), None).unwrap();
        let p = DeconvParams {
            channels: 1,
            experts: vec![e1, e2],
            gate_fc: Tensor::zeros(vec![2, 1]),
            frozen_delta: Some(vec![0.25, 0.75]),
        };
        let x = Tensor::full(vec![1, 1, 3, 3], 1.0f64);
        let (y, _) = deconv_forward(&x, &p).unwrap();
        for v in y.data() {
            assert!((v - 3.5).abs() < 1e-12);
        }
        let agg = deconv_forward_aggregated(&x, &p).unwrap();
        for v in agg.data() {
            assert!((v - 3.5).abs() < 1e-12);
        }
    }

    #[test]
    fn sum_of_outputs_equals_aggregated_kernel() {
        let p = DeconvParams::<f64>::init(4, 3, &mut rng()).unwrap();
        let x = Rng::new(32, 1).tensor(vec![2, 4, 6, 6], 1.0);
        let a = deconv_forward(&x, &p).unwrap().0;
        let b = deconv_forward_aggregated(&x, &p).unwrap();
        assert!(max_rel_diff(&a, &b) < 1e-10);
    }

    #[test]
    fn single_expert_rejected() {
        assert!(DeconvParams::<f32>::init(4, 1, &mut rng()).is_err());
    }

    #[test]
    fn divergent_expert_shapes_rejected() {
        let mut p = DeconvParams::<f32>::init(4, 2, &mut rng()).unwrap();
        let other = ConvMeta {
            in_channels: 4,
            out_channels: 4,
            kernel_h: 5,
            kernel_w: 5,
            stride: 1,
            groups: 1,
            padding: Padding::Zero,
        };
        p.experts[1] =
            ConvSpec::new(other, Tensor::zeros(other.weight_shape()), None).unwrap();
        let x = Tensor::zeros(vec![1, 4, 6, 6]);
        assert!(matches!(deconv_forward(&x, &p), Err(Error::Config(_))));
    }
}
