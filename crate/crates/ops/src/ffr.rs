//! Pyramid encoder wiring with fine-grained detail retention.
//!
//! Self-attention refines the deepest backbone level; a top-down pass fuses
//! it through stride 16, 8, and 4 nodes (the stride-4 node takes S2 and,
//! optionally, a stride-2 projection of S1 added in); a bottom-up pass
//! re-fuses stride 4 -> 8 -> 16. The default variant emits exactly F2, F3,
//! F4 and never a stride-32 output; the retained-top variant additionally
//! emits F5, and the three-level baseline reproduces the plain 8/16/32
//! pyramid without shallow levels.

use dyfus_core::backend::{Backend, Eager};
use dyfus_core::error::{Error, Result};
use dyfus_core::init::Rng;
use dyfus_core::ops::{Activation, ConvMeta, ConvSpec, Padding};
use dyfus_core::tensor::{Scalar, Tensor};

use crate::aifi::{self, AifiParams};
use crate::cost::{self, Cost};
use crate::dmsd::HighBandInit;
use crate::dyfusnet::{self, DyFusNetParams};
use crate::esfc::{self, EsfcParams, EsfcStage};
use crate::params::{join, visit_conv, visit_conv_mut, ParamSet};
use crate::pyramid::{upsample_nearest_2x, BackboneStub, Level, PyramidFeatures};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FfrVariant {
    /// Emit F2/F3/F4, no stride-32 output.
    Ffr,
    /// Emit F2/F3/F4/F5.
    FfrF5,
    /// Plain 8/16/32 pyramid from S3..S5, no shallow levels.
    RtdetrBaseline,
}

impl FfrVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ffr" => Ok(FfrVariant::Ffr),
            "ffr_f5" => Ok(FfrVariant::FfrF5),
            "rtdetr_baseline" => Ok(FfrVariant::RtdetrBaseline),
            other => Err(Error::config(format!(
                "ffr_variant: expected ffr, ffr_f5 or rtdetr_baseline, got `{other}`"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FfrVariant::Ffr => "ffr",
            FfrVariant::FfrF5 => "ffr_f5",
            FfrVariant::RtdetrBaseline => "rtdetr_baseline",
        }
    }

    /// F-levels this variant emits, shallow first.
    pub fn outputs(self) -> &'static [Level] {
        match self {
            FfrVariant::Ffr => &[Level::F2, Level::F3, Level::F4],
            FfrVariant::FfrF5 => &[Level::F2, Level::F3, Level::F4, Level::F5],
            FfrVariant::RtdetrBaseline => &[Level::F3, Level::F4, Level::F5],
        }
    }

    fn lowest_stride_index(self) -> usize {
        match self {
            FfrVariant::Ffr | FfrVariant::FfrF5 => 1, // fuse down to S2 (index 1)
            FfrVariant::RtdetrBaseline => 2,          // fuse down to S3
        }
    }

    fn emits_top(self) -> bool {
        matches!(self, FfrVariant::FfrF5 | FfrVariant::RtdetrBaseline)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionBlockKind {
    Conv,
    DyFusNet,
}

impl FusionBlockKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "conv" => Ok(FusionBlockKind::Conv),
            "dyfusnet" => Ok(FusionBlockKind::DyFusNet),
            other => Err(Error::config(format!(
                "fusion_block: expected conv or dyfusnet, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FfrConfig {
    pub variant: FfrVariant,
    pub fusion_block: FusionBlockKind,
    pub inject_s1: bool,
    /// Backbone widths for S1..S5; F-levels share the matching S width.
    pub channels: [usize; 5],
    pub aifi_heads: usize,
    pub aifi_ffn_dim: usize,
    /// Where, if anywhere, a semantic concentrator attaches.
    pub esfc_stage: Option<EsfcStage>,
    pub esfc_experts: usize,
    pub esfc_blocks: usize,
    pub eca_b: f64,
    pub eca_gamma: f64,
    /// Split ratio / reduction / fusion switch / high-band init for
    /// dyfusnet-style fusion blocks.
    pub split_ratio: f64,
    pub reduction: usize,
    pub fuse_1x1: bool,
    pub high_band_init: HighBandInit,
}

impl Default for FfrConfig {
    fn default() -> Self {
        FfrConfig {
            variant: FfrVariant::Ffr,
            fusion_block: FusionBlockKind::Conv,
            inject_s1: true,
            channels: [8, 16, 16, 32, 32],
            aifi_heads: 4,
            aifi_ffn_dim: 64,
            esfc_stage: None,
            esfc_experts: crate::deconv::DEFAULT_EXPERTS,
            esfc_blocks: crate::esfc::DEFAULT_BLOCKS,
            eca_b: crate::dga::DEFAULT_ECA_B,
            eca_gamma: crate::dga::DEFAULT_ECA_GAMMA,
            split_ratio: dyfusnet::DEFAULT_SPLIT_RATIO,
            reduction: crate::sfcm::DEFAULT_REDUCTION,
            fuse_1x1: true,
            high_band_init: HighBandInit::Laplacian,
        }
    }
}

impl FfrConfig {
    /// Stage -> output level, in this variant's geometry.
    fn esfc_levels(&self) -> Result<Vec<Level>> {
        let Some(stage) = self.esfc_stage else { return Ok(Vec::new()) };
        let levels: Vec<Level> = match stage {
            EsfcStage::Shallow => vec![Level::F2],
            EsfcStage::Middle => vec![Level::F3],
            EsfcStage::Deep => vec![Level::F4],
            EsfcStage::MiddleAndDeep => vec![Level::F3, Level::F4],
        };
        for l in &levels {
            if !self.variant.outputs().contains(l) {
                return Err(Error::config(format!(
                    "esfc_stage: stage {} targets {}, which variant {} does not emit",
                    stage.name(),
                    l.name(),
                    self.variant.name()
                )));
            }
        }
        Ok(levels)
    }

    fn channel_of(&self, level: Level) -> usize {
        match level {
            Level::S1 => self.channels[0],
            Level::S2 | Level::F2 => self.channels[1],
            Level::S3 | Level::F3 => self.channels[2],
            Level::S4 | Level::F4 => self.channels[3],
            Level::S5 | Level::F5 => self.channels[4],
        }
    }
}

/// concat -> 1x1 reduce -> relu -> body, body being a plain 3x3 conv + relu
/// or a channel-preserving frequency-split module.
#[derive(Debug, Clone)]
pub struct FusionBlock<S> {
    pub reduce: ConvSpec<S>,
    pub body: FusionBody<S>,
}

#[derive(Debug, Clone)]
pub enum FusionBody<S> {
    Conv(ConvSpec<S>),
    DyFusNet(DyFusNetParams<S>),
}

fn conv_meta(cin: usize, cout: usize, k: usize, stride: usize) -> ConvMeta {
    ConvMeta {
        in_channels: cin,
        out_channels: cout,
        kernel_h: k,
        kernel_w: k,
        stride,
        groups: 1,
        padding: Padding::Zero,
    }
}

fn new_conv<S: Scalar>(
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    rng: &mut Rng,
) -> Result<ConvSpec<S>> {
    let meta = conv_meta(cin, cout, k, stride);
    ConvSpec::new(
        meta,
        rng.fan_in_tensor(meta.weight_shape(), cin * k * k),
        Some(Tensor::zeros(vec![cout])),
    )
}

impl<S: Scalar> FusionBlock<S> {
    fn init(cfg: &FfrConfig, cin: usize, cout: usize, rng: &mut Rng) -> Result<Self> {
        let reduce = new_conv(cin, cout, 1, 1, rng)?;
        let body = match cfg.fusion_block {
            FusionBlockKind::Conv => FusionBody::Conv(new_conv(cout, cout, 3, 1, rng)?),
            FusionBlockKind::DyFusNet => FusionBody::DyFusNet(DyFusNetParams::init(
                cout,
                cfg.split_ratio,
                cfg.reduction,
                cfg.fuse_1x1,
                cfg.high_band_init,
                rng,
            )?),
        };
        Ok(FusionBlock { reduce, body })
    }

    fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut b = Eager::<S>::default();
        let w = b.constant(&self.reduce.weight);
        let bias = self.reduce.bias.as_ref().map(|t| b.constant(t));
        let xv = b.constant(x);
        let reduced = b.conv2d(&xv, &w, bias.as_ref(), &self.reduce.meta)?;
        let reduced = b.activation(&reduced, Activation::Relu)?;
        match &self.body {
            FusionBody::Conv(c) => {
                let w = b.constant(&c.weight);
                let bias = c.bias.as_ref().map(|t| b.constant(t));
                let y = b.conv2d(&reduced, &w, bias.as_ref(), &c.meta)?;
                b.activation(&y, Activation::Relu)
            }
            FusionBody::DyFusNet(p) => dyfusnet::dyfusnet_forward(&b.tensor(&reduced), p),
        }
    }

    fn cost(&self, n: usize, h: usize, w: usize) -> Result<Cost> {
        let mut c = Cost::new(cost::conv2d_macs(&self.reduce.meta, n, h, w)?, 0);
        match &self.body {
            FusionBody::Conv(conv) => c.macs += cost::conv2d_macs(&conv.meta, n, h, w)?,
            FusionBody::DyFusNet(p) => c.macs += cost::dyfusnet_macs(p, n, h, w)?,
        }
        c.params = self.param_count();
        Ok(c)
    }
}

impl<S: Scalar> ParamSet<S> for FusionBlock<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        visit_conv(&self.reduce, &join(prefix, "reduce"), f);
        match &self.body {
            FusionBody::Conv(c) => visit_conv(c, &join(prefix, "conv"), f),
            FusionBody::DyFusNet(p) => p.visit(&join(prefix, "dyfus"), f),
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        visit_conv_mut(&mut self.reduce, &join(prefix, "reduce"), f);
        match &mut self.body {
            FusionBody::Conv(c) => visit_conv_mut(c, &join(prefix, "conv"), f),
            FusionBody::DyFusNet(p) => p.visit_mut(&join(prefix, "dyfus"), f),
        }
    }
}

/// Everything the encoder owns. Top-down blocks run deepest-first; the
/// bottom-up vectors run shallowest-first.
#[derive(Debug, Clone)]
pub struct FfrParams<S> {
    pub cfg: FfrConfig,
    pub aifi: AifiParams<S>,
    pub top_down: Vec<FusionBlock<S>>,
    pub inject: Option<ConvSpec<S>>,
    pub down: Vec<ConvSpec<S>>,
    pub bottom_up: Vec<FusionBlock<S>>,
    pub esfc: Vec<(Level, EsfcParams<S>)>,
}

impl<S: Scalar> FfrParams<S> {
    pub fn init(cfg: FfrConfig, rng: &mut Rng) -> Result<Self> {
        let c = cfg.channels;
        let aifi = AifiParams::init(c[4], cfg.aifi_heads, cfg.aifi_ffn_dim, rng)?;
        let lowest = cfg.variant.lowest_stride_index();

        // top-down: node at backbone index i fuses (upsampled node i+1, S_{i+1})
        let mut top_down = Vec::new();
        for i in (lowest..4).rev() {
            top_down.push(FusionBlock::init(&cfg, c[i + 1] + c[i], c[i], rng)?);
        }

        let inject = if cfg.inject_s1 && cfg.variant != FfrVariant::RtdetrBaseline {
            Some(new_conv(c[0], c[1], 3, 2, rng)?)
        } else {
            None
        };

        // bottom-up: from the lowest node back up, one down-conv and one
        // fusion block per emitted deeper level
        let top_index = if cfg.variant.emits_top() { 4 } else { 3 };
        let mut down = Vec::new();
        let mut bottom_up = Vec::new();
        for i in lowest + 1..=top_index {
            down.push(new_conv(c[i - 1], c[i - 1], 3, 2, rng)?);
            bottom_up.push(FusionBlock::init(&cfg, c[i - 1] + c[i], c[i], rng)?);
        }

        let mut esfc_blocks = Vec::new();
        for level in cfg.esfc_levels()? {
            let width = cfg.channel_of(level);
            esfc_blocks.push((
                level,
                EsfcParams::init(
                    width,
                    cfg.esfc_experts,
                    cfg.esfc_blocks,
                    cfg.eca_b,
                    cfg.eca_gamma,
                    rng,
                )?,
            ));
        }

        Ok(FfrParams { cfg, aifi, top_down, inject, down, bottom_up, esfc: esfc_blocks })
    }

    /// Parameters owned by the encoder (everything except the backbone).
    pub fn encoder_params(&self) -> u64 {
        self.param_count()
    }
}

impl<S: Scalar> ParamSet<S> for FfrParams<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        self.aifi.visit(&join(prefix, "aifi"), f);
        for (i, b) in self.top_down.iter().enumerate() {
            b.visit(&join(prefix, &format!("td{i}")), f);
        }
        if let Some(inj) = &self.inject {
            visit_conv(inj, &join(prefix, "inject"), f);
        }
        for (i, d) in self.down.iter().enumerate() {
            visit_conv(d, &join(prefix, &format!("down{i}")), f);
        }
        for (i, b) in self.bottom_up.iter().enumerate() {
            b.visit(&join(prefix, &format!("bu{i}")), f);
        }
        for (level, p) in &self.esfc {
            p.visit(&join(prefix, &format!("esfc_{}", level.name().to_lowercase())), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        self.aifi.visit_mut(&join(prefix, "aifi"), f);
        for (i, b) in self.top_down.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("td{i}")), f);
        }
        if let Some(inj) = &mut self.inject {
            visit_conv_mut(inj, &join(prefix, "inject"), f);
        }
        for (i, d) in self.down.iter_mut().enumerate() {
            visit_conv_mut(d, &join(prefix, &format!("down{i}")), f);
        }
        for (i, b) in self.bottom_up.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("bu{i}")), f);
        }
        for (level, p) in &mut self.esfc {
            p.visit_mut(&join(prefix, &format!("esfc_{}", level.name().to_lowercase())), f);
        }
    }
}

fn apply_conv<S: Scalar>(spec: &ConvSpec<S>, x: &Tensor<S>, relu: bool) -> Result<Tensor<S>> {
    let y = dyfus_core::ops::conv2d(x, spec)?;
    Ok(if relu { dyfus_core::ops::activation(&y, Activation::Relu) } else { y })
}

/// Run the encoder over a complete S1..S5 pyramid.
pub fn ffr_encoder_forward<S: Scalar>(
    pyr: &PyramidFeatures<S>,
    params: &FfrParams<S>,
) -> Result<PyramidFeatures<S>> {
    for level in Level::BACKBONE {
        if !pyr.contains(level) {
            return Err(Error::config(format!(
                "encoder needs the complete S1..S5 pyramid, {} is missing",
                level.name()
            )));
        }
    }
    let cfg = &params.cfg;
    let lowest = cfg.variant.lowest_stride_index();
    let s_levels = [Level::S1, Level::S2, Level::S3, Level::S4, Level::S5];

    // deepest node: attention-refined S5
    let (refined, _) = aifi::aifi_forward(pyr.get(Level::S5)?, &params.aifi)?;

    // top-down pass, deepest first; nodes[i] is the node at backbone index i
    let mut nodes: Vec<Option<Tensor<S>>> = vec![None; 5];
    nodes[4] = Some(refined);
    for (bi, i) in (lowest..4).rev().enumerate() {
        let above = nodes[i + 1].as_ref().expect("filled in order");
        let up = upsample_nearest_2x(above)?;
        let lateral = pyr.get(s_levels[i])?;
        let cat = dyfus_core::ops::concat_channels(&up, lateral)?;
        nodes[i] = Some(params.top_down[bi].forward(&cat)?);
    }

    // shallow detail injection into the stride-4 node
    if let Some(inject) = &params.inject {
        let detail = apply_conv(inject, pyr.get(Level::S1)?, true)?;
        let node = nodes[1].take().expect("stride-4 node exists");
        nodes[1] = Some(dyfus_core::ops::add(&node, &detail)?);
    }

    // bottom-up pass
    let top_index = if cfg.variant.emits_top() { 4 } else { 3 };
    let mut outputs: Vec<(Level, Tensor<S>)> = Vec::new();
    let f_levels = [Level::F2, Level::F2, Level::F3, Level::F4, Level::F5]; // by backbone index
    let mut cur = nodes[lowest].clone().expect("lowest node exists");
    outputs.push((f_levels[lowest.max(1)], cur.clone()));
    for (bi, i) in (lowest + 1..=top_index).enumerate() {
        let descended = apply_conv(&params.down[bi], &cur, true)?;
        let node = nodes[i].as_ref().expect("top-down node exists");
        let cat = dyfus_core::ops::concat_channels(&descended, node)?;
        cur = params.bottom_up[bi].forward(&cat)?;
        outputs.push((f_levels[i], cur.clone()));
    }

    let mut out = PyramidFeatures::default();
    for (level, tensor) in outputs {
        out.insert(level, tensor);
    }
    for (level, esfc_params) in &params.esfc {
        let refined = esfc::esfc_forward(out.get(*level)?, esfc_params)?.0;
        out.insert(*level, refined);
    }
    Ok(out)
}

/// One row of the shape/cost table.
#[derive(Debug, Clone)]
pub struct ShapeRow {
    pub level: Level,
    pub stride: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub params: u64,
    pub macs: u64,
}

#[derive(Debug, Clone)]
pub struct ShapeReport {
    pub rows: Vec<ShapeRow>,
    pub backbone_params: u64,
    pub encoder_params: u64,
    pub encoder_macs: u64,
}

impl ShapeReport {
    pub fn row(&self, level: Level) -> Option<&ShapeRow> {
        self.rows.iter().find(|r| r.level == level)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str("level stride channels height width params macs\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{} {} {} {} {} {} {}\n",
                r.level.name(),
                r.stride,
                r.channels,
                r.height,
                r.width,
                r.params,
                r.macs
            ));
        }
        s.push_str(&format!(
            "backbone_params {}\nencoder_params {}\nencoder_macs {}\n",
            self.backbone_params, self.encoder_params, self.encoder_macs
        ));
        s
    }
}

/// Predict every level's extents and attribute parameters/MACs to the level
/// whose production they serve. The attention layer is charged to the
/// deepest emitted level.
pub fn shape_report<S: Scalar>(
    params: &FfrParams<S>,
    stub: &BackboneStub<S>,
    n: usize,
    input_h: usize,
    input_w: usize,
) -> Result<ShapeReport> {
    if input_h % 32 != 0 || input_w % 32 != 0 || input_h == 0 || input_w == 0 {
        return Err(Error::shape(format!(
            "input extents {input_h}x{input_w} must be positive multiples of 32"
        )));
    }
    let cfg = &params.cfg;
    let lowest = cfg.variant.lowest_stride_index();
    let mut rows = Vec::new();

    // backbone rows
    let mut backbone_params = 0u64;
    let mut h = input_h;
    let mut w = input_w;
    for (i, level) in Level::BACKBONE.iter().enumerate() {
        let spec = &stub.blocks[i];
        let macs = cost::conv2d_macs(&spec.meta, n, h, w)?;
        let p = cost::conv2d_params(&spec.meta, spec.bias.is_some());
        backbone_params += p;
        let (oh, ow) = spec.meta.out_spatial(h, w)?;
        rows.push(ShapeRow {
            level: *level,
            stride: level.stride(),
            channels: cfg.channel_of(*level),
            height: oh,
            width: ow,
            params: p,
            macs,
        });
        h = oh;
        w = ow;
    }

    // encoder rows
    let top_index = if cfg.variant.emits_top() { 4 } else { 3 };
    let mut encoder_macs = 0u64;
    let side = |stride: usize| (input_h / stride, input_w / stride);

    let aifi_at = side(32);
    let aifi_cost = cost::aifi_cost(&params.aifi, n, aifi_at.0, aifi_at.1);
    encoder_macs += aifi_cost.macs;

    let mut level_costs: Vec<(Level, Cost)> = Vec::new();
    for (bi, i) in (lowest..4).rev().enumerate() {
        let level = [Level::F2, Level::F2, Level::F3, Level::F4, Level::F5][i];
        let (lh, lw) = side(Level::BACKBONE[i].stride());
        let c = params.top_down[bi].cost(n, lh, lw)?;
        encoder_macs += c.macs;
        level_costs.push((level, c));
    }
    if let Some(inj) = &params.inject {
        let (lh, lw) = side(2);
        let c = Cost::new(
            cost::conv2d_macs(&inj.meta, n, lh, lw)?,
            cost::conv2d_params(&inj.meta, inj.bias.is_some()),
        );
        encoder_macs += c.macs;
        level_costs.push((Level::F2, c));
    }
    for (bi, i) in (lowest + 1..=top_index).enumerate() {
        let level = [Level::F2, Level::F2, Level::F3, Level::F4, Level::F5][i];
        let (ph, pw) = side(Level::BACKBONE[i - 1].stride());
        let down_c = Cost::new(
            cost::conv2d_macs(&params.down[bi].meta, n, ph, pw)?,
            cost::conv2d_params(&params.down[bi].meta, params.down[bi].bias.is_some()),
        );
        let (lh, lw) = side(Level::BACKBONE[i].stride());
        let fuse_c = params.bottom_up[bi].cost(n, lh, lw)?;
        encoder_macs += down_c.macs + fuse_c.macs;
        level_costs.push((level, down_c + fuse_c));
    }
    for (level, esfc_params) in &params.esfc {
        let (lh, lw) = side(level.stride());
        let c = cost::esfc_cost(esfc_params, n, lh, lw)?;
        encoder_macs += c.macs;
        level_costs.push((*level, c));
    }

    for level in cfg.variant.outputs() {
        let (lh, lw) = side(level.stride());
        let mut total = Cost::default();
        for (l, c) in &level_costs {
            if l == level {
                total += *c;
            }
        }
        if *level == *cfg.variant.outputs().last().expect("non-empty outputs") {
            total += aifi_cost;
        }
        rows.push(ShapeRow {
            level: *level,
            stride: level.stride(),
            channels: cfg.channel_of(*level),
            height: lh,
            width: lw,
            params: total.params,
            macs: total.macs,
        });
    }

    Ok(ShapeReport {
        rows,
        backbone_params,
        encoder_params: params.encoder_params(),
        encoder_macs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(cfg: FfrConfig) -> (BackboneStub<f32>, FfrParams<f32>) {
        let mut rng = Rng::new(101, 0);
        let stub = BackboneStub::init(cfg.channels, &mut rng).unwrap();
        let params = FfrParams::init(cfg, &mut rng).unwrap();
        (stub, params)
    }

    fn forward_64(cfg: FfrConfig) -> PyramidFeatures<f32> {
        let (stub, params) = setup(cfg);
        let img = Rng::new(102, 1).tensor(vec![1, 3, 64, 64], 1.0);
        let pyr = stub.forward(&img).unwrap();
        ffr_encoder_forward(&pyr, &params).unwrap()
    }

    #[test]
    fn default_variant_emits_exactly_f2_f3_f4() {
        let out = forward_64(FfrConfig::default());
        assert_eq!(out.len(), 3);
        assert!(out.contains(Level::F2) && out.contains(Level::F3) && out.contains(Level::F4));
        assert!(!out.contains(Level::F5), "no stride-32 output may exist");
        assert_eq!(&out.get(Level::F2).unwrap().shape()[2..], &[16, 16]);
        assert_eq!(&out.get(Level::F3).unwrap().shape()[2..], &[8, 8]);
        assert_eq!(&out.get(Level::F4).unwrap().shape()[2..], &[4, 4]);
    }

    #[test]
    fn f5_variant_adds_the_stride_32_output() {
        let cfg = FfrConfig { variant: FfrVariant::FfrF5, ..FfrConfig::default() };
        let out = forward_64(cfg);
        assert_eq!(out.len(), 4);
        assert_eq!(&out.get(Level::F5).unwrap().shape()[2..], &[2, 2]);
    }

    #[test]
    fn baseline_variant_is_the_plain_three_level_pyramid() {
        let cfg = FfrConfig { variant: FfrVariant::RtdetrBaseline, ..FfrConfig::default() };
        let out = forward_64(cfg);
        assert_eq!(out.len(), 3);
        assert!(!out.contains(Level::F2));
        assert!(out.contains(Level::F5));
    }

    #[test]
    fn ffr_has_strictly_fewer_encoder_params_than_the_f5_variant() {
        let (_, ffr) = setup(FfrConfig::default());
        let (_, f5) = setup(FfrConfig { variant: FfrVariant::FfrF5, ..FfrConfig::default() });
        assert!(ffr.encoder_params() < f5.encoder_params());
    }

    #[test]
    fn shape_report_agrees_with_actual_shapes() {
        let cfg = FfrConfig::default();
        let (stub, params) = setup(cfg.clone());
        let report = shape_report(&params, &stub, 1, 64, 64).unwrap();
        assert_eq!(report.rows.len(), 8);

        let img = Rng::new(103, 1).tensor(vec![1, 3, 64, 64], 1.0);
        let pyr = stub.forward(&img).unwrap();
        let out = ffr_encoder_forward(&pyr, &params).unwrap();
        for (level, t) in pyr.levels().chain(out.levels()) {
            let row = report.row(level).unwrap();
            assert_eq!(
                (row.height, row.width, row.channels),
                (t.shape()[2], t.shape()[3], t.shape()[1]),
                "{}",
                level.name()
            );
        }
        let _ = cfg;
    }

    #[test]
    fn dyfusnet_fusion_blocks_run() {
        let cfg = FfrConfig {
            fusion_block: FusionBlockKind::DyFusNet,
            channels: [8, 8, 16, 16, 32],
            ..FfrConfig::default()
        };
        let out = forward_64(cfg);
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn esfc_stages_run_and_add_params() {
        for stage in [EsfcStage::Shallow, EsfcStage::Middle, EsfcStage::Deep, EsfcStage::MiddleAndDeep] {
            let cfg = FfrConfig { esfc_stage: Some(stage), ..FfrConfig::default() };
            let (_, with) = setup(cfg.clone());
            let (_, without) = setup(FfrConfig { esfc_stage: None, ..cfg });
            assert!(with.encoder_params() > without.encoder_params(), "{}", stage.name());
            let out = forward_64(FfrConfig { esfc_stage: Some(stage), ..FfrConfig::default() });
            assert_eq!(out.len(), 3);
        }
    }

    #[test]
    fn missing_level_is_config_error() {
        let (_, params) = setup(FfrConfig::default());
        let mut pyr = PyramidFeatures::<f32>::default();
        pyr.insert(Level::S3, Tensor::zeros(vec![1, 16, 8, 8]));
        assert!(matches!(ffr_encoder_forward(&pyr, &params), Err(Error::Config(_))));
    }

    #[test]
    fn injection_toggle_changes_the_stride4_node() {
        let with = forward_64(FfrConfig::default());
        let without = forward_64(FfrConfig { inject_s1: false, ..FfrConfig::default() });
        assert_ne!(with.get(Level::F2).unwrap().data(), without.get(Level::F2).unwrap().data());
    }
}
