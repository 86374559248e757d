//! Single-layer intra-scale self-attention for the deepest pyramid level:
//! flatten to tokens, add fixed 2-D sinusoidal position encoding, one
//! multi-head self-attention block and one feedforward block, each with a
//! residual connection and post-normalization, reshape back.

use dyfus_core::backend::{Backend, Eager};
use dyfus_core::error::{Error, Result};
use dyfus_core::init::Rng;
use dyfus_core::ops::Activation;
use dyfus_core::tensor::{Scalar, Tensor};

use crate::params::{join, ParamSet};

pub const PE_TEMPERATURE: f64 = 10000.0;
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct AifiParams<S> {
    pub embed_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub wq: Tensor<S>,
    pub bq: Tensor<S>,
    pub wk: Tensor<S>,
    pub bk: Tensor<S>,
    pub wv: Tensor<S>,
    pub bv: Tensor<S>,
    pub wo: Tensor<S>,
    pub bo: Tensor<S>,
    pub ln1_gain: Tensor<S>,
    pub ln1_bias: Tensor<S>,
    pub ffn_w1: Tensor<S>,
    pub ffn_b1: Tensor<S>,
    pub ffn_w2: Tensor<S>,
    pub ffn_b2: Tensor<S>,
    pub ln2_gain: Tensor<S>,
    pub ln2_bias: Tensor<S>,
}

impl<S: Scalar> AifiParams<S> {
    pub fn init(embed_dim: usize, heads: usize, ffn_dim: usize, rng: &mut Rng) -> Result<Self> {
        if heads == 0 || embed_dim % heads != 0 {
            return Err(Error::config(format!(
                "aifi: embed dim {embed_dim} must be divisible by heads {heads}"
            )));
        }
        if embed_dim % 4 != 0 {
            return Err(Error::config(format!(
                "aifi: embed dim {embed_dim} must be divisible by 4 for the 2-D position encoding"
            )));
        }
        let d = embed_dim;
        let proj = |rng: &mut Rng| rng.fan_in_tensor(vec![d, d], d);
        Ok(AifiParams {
            embed_dim: d,
            heads,
            ffn_dim,
            wq: proj(rng),
            bq: Tensor::zeros(vec![d]),
            wk: proj(rng),
            bk: Tensor::zeros(vec![d]),
            wv: proj(rng),
            bv: Tensor::zeros(vec![d]),
            wo: proj(rng),
            bo: Tensor::zeros(vec![d]),
            ln1_gain: Tensor::full(vec![d], S::one()),
            ln1_bias: Tensor::zeros(vec![d]),
            ffn_w1: rng.fan_in_tensor(vec![ffn_dim, d], d),
            ffn_b1: Tensor::zeros(vec![ffn_dim]),
            ffn_w2: rng.fan_in_tensor(vec![d, ffn_dim], ffn_dim),
            ffn_b2: Tensor::zeros(vec![d]),
            ln2_gain: Tensor::full(vec![d], S::one()),
            ln2_bias: Tensor::zeros(vec![d]),
        })
    }

    pub fn cast<T: Scalar>(&self) -> AifiParams<T> {
        AifiParams {
            embed_dim: self.embed_dim,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
            wq: self.wq.cast(),
            bq: self.bq.cast(),
            wk: self.wk.cast(),
            bk: self.bk.cast(),
            wv: self.wv.cast(),
            bv: self.bv.cast(),
            wo: self.wo.cast(),
            bo: self.bo.cast(),
            ln1_gain: self.ln1_gain.cast(),
            ln1_bias: self.ln1_bias.cast(),
            ffn_w1: self.ffn_w1.cast(),
            ffn_b1: self.ffn_b1.cast(),
            ffn_w2: self.ffn_w2.cast(),
            ffn_b2: self.ffn_b2.cast(),
            ln2_gain: self.ln2_gain.cast(),
            ln2_bias: self.ln2_bias.cast(),
        }
    }
}

impl<S: Scalar> ParamSet<S> for AifiParams<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        for (name, t) in [
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("bk", &self.bk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("ffn_w1", &self.ffn_w1),
            ("ffn_b1", &self.ffn_b1),
            ("ffn_w2", &self.ffn_w2),
            ("ffn_b2", &self.ffn_b2),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
        ] {
            f(&join(prefix, name), t);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        for (name, t) in [
            ("wq", &mut self.wq),
            ("bq", &mut self.bq),
            ("wk", &mut self.wk),
            ("bk", &mut self.bk),
            ("wv", &mut self.wv),
            ("bv", &mut self.bv),
            ("wo", &mut self.wo),
            ("bo", &mut self.bo),
            ("ln1_gain", &mut self.ln1_gain),
            ("ln1_bias", &mut self.ln1_bias),
            ("ffn_w1", &mut self.ffn_w1),
            ("ffn_b1", &mut self.ffn_b1),
            ("ffn_w2", &mut self.ffn_w2),
            ("ffn_b2", &mut self.ffn_b2),
            ("ln2_gain", &mut self.ln2_gain),
            ("ln2_bias", &mut self.ln2_bias),
        ] {
            f(&join(prefix, name), t);
        }
    }
}

/// Fixed 2-D sinusoidal position encoding for an h x w token grid,
/// `[h*w, dim]`, laid out as four dim/4 groups: sin/cos over x, sin/cos
/// over y.
pub fn position_encoding_2d<S: Scalar>(h: usize, w: usize, dim: usize) -> Tensor<S> {
    let quarter = dim / 4;
    Tensor::from_fn(vec![h * w, dim], |i| {
        let (t, d) = (i / dim, i % dim);
        let (y, x) = ((t / w) as f64, (t % w) as f64);
        let group = d / quarter;
        let idx = (d % quarter) as f64;
        let omega = 1.0 / PE_TEMPERATURE.powf(idx / quarter as f64);
        let v = match group {
            0 => (x * omega).sin(),
            1 => (x * omega).cos(),
            2 => (y * omega).sin(),
            _ => (y * omega).cos(),
        };
        S::from_f64(v)
    })
}

/// One batch element's attention layer over `[T, D]` tokens. Returns the
/// output tokens and the per-head row-stochastic attention matrices.
fn attention_block<B: Backend>(
    b: &mut B,
    tokens: &B::Val,
    p: &AifiParams<B::S>,
    wq: &B::Val,
    bq: &B::Val,
    wk: &B::Val,
    bk: &B::Val,
    wv: &B::Val,
    bv: &B::Val,
    wo: &B::Val,
    bo: &B::Val,
) -> Result<(B::Val, Vec<B::Val>)> {
    let d = p.embed_dim;
    let dh = d / p.heads;
    let q = b.linear(tokens, wq, Some(bq))?;
    let k = b.linear(tokens, wk, Some(bk))?;
    let v = b.linear(tokens, wv, Some(bv))?;

    let scale = B::S::from_f64(1.0 / (dh as f64).sqrt());
    let mut head_outs = Vec::with_capacity(p.heads);
    let mut attn_maps = Vec::with_capacity(p.heads);
    for hi in 0..p.heads {
        let (from, to) = (hi * dh, (hi + 1) * dh);
        let qh = b.slice_cols(&q, from, to)?;
        let kh = b.slice_cols(&k, from, to)?;
        let vh = b.slice_cols(&v, from, to)?;
        let scores = b.matmul_nt(&qh, &kh)?;
        let scores = b.scale(&scores, scale)?;
        let attn = b.softmax(&scores)?;
        let out = b.matmul(&attn, &vh)?;
        head_outs.push(out);
        attn_maps.push(attn);
    }
    let merged = b.concat_cols(&head_outs)?;
    let projected = b.linear(&merged, wo, Some(bo))?;
    Ok((projected, attn_maps))
}

/// Forward pass over `[N, C, h, w]` with C = embed dim. Returns the output
/// and every attention matrix (batch-major, then head).
pub fn forward_b<B: Backend>(
    b: &mut B,
    x: &B::Val,
    p: &AifiParams<B::S>,
    prefix: &str,
) -> Result<(B::Val, Vec<B::Val>)> {
    let shape = b.shape(x);
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if c != p.embed_dim {
        return Err(Error::config(format!(
            "aifi: input has {c} channels but the layer embeds {}",
            p.embed_dim
        )));
    }

    let wq = b.param(&join(prefix, "wq"), &p.wq);
    let bq = b.param(&join(prefix, "bq"), &p.bq);
    let wk = b.param(&join(prefix, "wk"), &p.wk);
    let bk = b.param(&join(prefix, "bk"), &p.bk);
    let wv = b.param(&join(prefix, "wv"), &p.wv);
    let bv = b.param(&join(prefix, "bv"), &p.bv);
    let wo = b.param(&join(prefix, "wo"), &p.wo);
    let bo = b.param(&join(prefix, "bo"), &p.bo);
    let ln1_g = b.param(&join(prefix, "ln1_gain"), &p.ln1_gain);
    let ln1_b = b.param(&join(prefix, "ln1_bias"), &p.ln1_bias);
    let fw1 = b.param(&join(prefix, "ffn_w1"), &p.ffn_w1);
    let fb1 = b.param(&join(prefix, "ffn_b1"), &p.ffn_b1);
    let fw2 = b.param(&join(prefix, "ffn_w2"), &p.ffn_w2);
    let fb2 = b.param(&join(prefix, "ffn_b2"), &p.ffn_b2);
    let ln2_g = b.param(&join(prefix, "ln2_gain"), &p.ln2_gain);
    let ln2_b = b.param(&join(prefix, "ln2_bias"), &p.ln2_bias);

    let pe = b.constant(&position_encoding_2d::<B::S>(h, w, p.embed_dim));
    let eps = B::S::from_f64(LN_EPS);

    let mut outs = Vec::with_capacity(n);
    let mut attns = Vec::new();
    for bi in 0..n {
        let xb = b.slice_batch(x, bi)?;
        let tokens = b.nchw_to_tokens(&xb)?;
        let tokens = b.add(&tokens, &pe)?;

        let (attn_out, maps) =
            attention_block(b, &tokens, p, &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo)?;
        attns.extend(maps);
        let res = b.add(&tokens, &attn_out)?;
        let normed = b.layer_norm(&res, &ln1_g, &ln1_b, eps)?;

        let ff = b.linear(&normed, &fw1, Some(&fb1))?;
        let ff = b.activation(&ff, Activation::Gelu)?;
        let ff = b.linear(&ff, &fw2, Some(&fb2))?;
        let res2 = b.add(&normed, &ff)?;
        let out_tokens = b.layer_norm(&res2, &ln2_g, &ln2_b, eps)?;

        outs.push(b.tokens_to_nchw(&out_tokens, h, w)?);
    }
    let out = b.concat_batch(&outs)?;
    Ok((out, attns))
}

/// Eager forward: `(output, attention matrices)`.
pub fn aifi_forward<S: Scalar>(
    x: &Tensor<S>,
    p: &AifiParams<S>,
) -> Result<(Tensor<S>, Vec<Tensor<S>>)> {
    let mut b = Eager::<S>::default();
    forward_b(&mut b, x, p, "aifi")
}

#[cfg(test)]
mod tests {
    use super::*;
    use dyfus_core::ops as cops;

    fn rng() -> Rng {
        Rng::new(81, 0)
    }

    #[test]
    fn shape_is_preserved() {
        let p = AifiParams::<f32>::init(32, 4, 64, &mut rng()).unwrap();
        let x = Rng::new(82, 1).tensor(vec![1, 32, 2, 2], 1.0);
        let (y, attn) = aifi_forward(&x, &p).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert_eq!(attn.len(), 4);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let p = AifiParams::<f64>::init(8, 2, 16, &mut rng()).unwrap();
        let x = Rng::new(83, 1).tensor(vec![2, 8, 3, 4], 1.0);
        let (_, attns) = aifi_forward(&x, &p).unwrap();
        assert_eq!(attns.len(), 4); // 2 batches x 2 heads
        for a in &attns {
            let (rows, cols) = a.dims2().unwrap();
            assert_eq!((rows, cols), (12, 12));
            for r in 0..rows {
                let s: f64 = a.data()[r * cols..(r + 1) * cols].iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_token_attention_is_the_value_projection() {
        let mut p = AifiParams::<f64>::init(8, 2, 16, &mut rng()).unwrap();
        // make the output projection the identity so the attention output is
        // exactly the value projection
        p.wo = {
            let mut eye = Tensor::zeros(vec![8, 8]);
            for i in 0..8 {
                eye.data_mut()[i * 8 + i] = 1.0;
            }
            eye
        };
        let x = Rng::new(84, 1).tensor(vec![1, 8, 1, 1], 1.0);
        let tokens = cops::nchw_to_tokens(&x).unwrap();
        let pe = position_encoding_2d::<f64>(1, 1, 8);
        let embedded = cops::add(&tokens, &pe).unwrap();
        let v = cops::linear(&embedded, &p.wv, Some(&p.bv)).unwrap();

        let mut b = Eager::<f64>::default();
        let (attn_out, maps) = {
            let t = b.constant(&embedded);
            let wq = b.constant(&p.wq);
            let bq = b.constant(&p.bq);
            let wk = b.constant(&p.wk);
            let bk = b.constant(&p.bk);
            let wv = b.constant(&p.wv);
            let bv = b.constant(&p.bv);
            let wo = b.constant(&p.wo);
            let bo = b.constant(&p.bo);
            attention_block(&mut b, &t, &p, &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo).unwrap()
        };
        for m in &maps {
            assert_eq!(m.data(), &[1.0]);
        }
        for (a, e) in attn_out.data().iter().zip(v.data()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_head_or_pe_divisibility_rejected() {
        assert!(AifiParams::<f32>::init(30, 4, 32, &mut rng()).is_err());
        assert!(AifiParams::<f32>::init(6, 2, 12, &mut rng()).is_err());
    }
}
