//! Dual-branch semantic concentrator: an expert-convolution branch and a
//! ghost-block residual chain, blended by two learnable softmax weights and
//! refined by cascaded dual-domain gating.

use dyfus_core::backend::{Backend, Eager};
use dyfus_core::error::{Error, Result};
use dyfus_core::init::Rng;
use dyfus_core::tensor::{Scalar, Tensor};

use crate::deconv::{self, DeconvParams};
use crate::dga::{self, DgaParams};
use crate::egblock::{self, EgBlockParams};
use crate::params::{join, ParamSet};

pub const DEFAULT_BLOCKS: usize = 3;

/// Fusion stage the concentrator attaches to inside the pyramid encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EsfcStage {
    Shallow,
    Middle,
    Deep,
    MiddleAndDeep,
}

impl EsfcStage {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "S" => Ok(EsfcStage::Shallow),
            "M" => Ok(EsfcStage::Middle),
            "D" => Ok(EsfcStage::Deep),
            "M&D" => Ok(EsfcStage::MiddleAndDeep),
            other => Err(Error::config(format!(
                "esfc_stage: expected one of S, M, D, M&D, got `{other}`"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EsfcStage::Shallow => "S",
            EsfcStage::Middle => "M",
            EsfcStage::Deep => "D",
            EsfcStage::MiddleAndDeep => "M&D",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EsfcParams<S> {
    pub channels: usize,
    pub deconv: DeconvParams<S>,
    pub chain: Vec<EgBlockParams<S>>,
    pub dga: DgaParams<S>,
    /// `[1, 2]` logits; softmax gives the two branch weights.
    pub fusion_logits: Tensor<S>,
    /// Test hook: fixed branch weights.
    pub frozen_fusion: Option<[f64; 2]>,
}

impl<S: Scalar> EsfcParams<S> {
    pub fn init(
        channels: usize,
        experts: usize,
        n_blocks: usize,
        eca_b: f64,
        eca_gamma: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if channels % 2 != 0 || channels == 0 {
            return Err(Error::config(format!(
                "concentrator channels must be even and positive (ghost split), got {channels}"
            )));
        }
        let deconv = DeconvParams::init(channels, experts, rng)?;
        let chain = (0..n_blocks)
            .map(|_| EgBlockParams::init(channels, channels, rng))
            .collect::<Result<Vec<_>>>()?;
        let dga = DgaParams::init(channels, eca_b, eca_gamma, rng)?;
        Ok(EsfcParams {
            channels,
            deconv,
            chain,
            dga,
            fusion_logits: Tensor::zeros(vec![1, 2]),
            frozen_fusion: None,
        })
    }

    pub fn with_frozen_fusion(mut self, w: [f64; 2]) -> Self {
        self.frozen_fusion = Some(w);
        self
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.channels != channels {
            return Err(Error::shape(format!(
                "concentrator built for {} channels, input has {channels}",
                self.channels
            )));
        }
        self.deconv.validate(channels)?;
        self.dga.validate(channels)?;
        if self.fusion_logits.shape() != [1, 2] {
            return Err(Error::config("fusion logits must be a [1, 2] tensor"));
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> EsfcParams<T> {
        EsfcParams {
            channels: self.channels,
            deconv: self.deconv.cast(),
            chain: self.chain.iter().map(|b| b.cast()).collect(),
            dga: self.dga.cast(),
            fusion_logits: self.fusion_logits.cast(),
            frozen_fusion: self.frozen_fusion,
        }
    }
}

impl<S: Scalar> ParamSet<S> for EsfcParams<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        self.deconv.visit(&join(prefix, "deconv"), f);
        for (i, blk) in self.chain.iter().enumerate() {
            blk.visit(&join(prefix, &format!("chain.block{i}")), f);
        }
        self.dga.visit(&join(prefix, "dga"), f);
        f(&join(prefix, "fusion_logits"), &self.fusion_logits);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        self.deconv.visit_mut(&join(prefix, "deconv"), f);
        for (i, blk) in self.chain.iter_mut().enumerate() {
            blk.visit_mut(&join(prefix, &format!("chain.block{i}")), f);
        }
        self.dga.visit_mut(&join(prefix, "dga"), f);
        f(&join(prefix, "fusion_logits"), &mut self.fusion_logits);
    }
}

/// Forward pass. Returns (output, branch weights `[1, 2]`).
pub fn forward_b<B: Backend>(
    b: &mut B,
    x: &B::Val,
    p: &EsfcParams<B::S>,
    prefix: &str,
) -> Result<(B::Val, B::Val)> {
    let shape = b.shape(x);
    p.validate(shape[1])?;

    let (branch1, _delta) = deconv::forward_b(b, x, &p.deconv, &join(prefix, "deconv"))?;
    let branch2 = egblock::chain_forward_b(b, x, &p.chain, &join(prefix, "chain"))?;

    let weights = if let Some(w) = p.frozen_fusion {
        b.constant(&Tensor::new(vec![1, 2], vec![B::S::from_f64(w[0]), B::S::from_f64(w[1])])?)
    } else {
        let logits = b.param(&join(prefix, "fusion_logits"), &p.fusion_logits);
        b.softmax(&logits)?
    };
    let w1 = b.column(&weights, 0)?;
    let w2 = b.column(&weights, 1)?;
    let t1 = b.mul_global_scalar(&branch1, &w1)?;
    let t2 = b.mul_global_scalar(&branch2, &w2)?;
    let mixed = b.add(&t1, &t2)?;

    let (y, _cg, _sg) = dga::forward_b(b, &mixed, &p.dga, &join(prefix, "dga"))?;
    Ok((y, weights))
}

/// Eager forward: `(y, fusion weights)`.
pub fn esfc_forward<S: Scalar>(
    x: &Tensor<S>,
    p: &EsfcParams<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let mut b = Eager::<S>::default();
    forward_b(&mut b, x, p, "esfc")
}
