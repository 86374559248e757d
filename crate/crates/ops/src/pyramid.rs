//! Multi-resolution feature sets with stride bookkeeping, and the declared
//! backbone stand-in that produces them from an image.

use std::collections::BTreeMap;

use dyfus_core::backend::{Backend, Eager};
use dyfus_core::error::{Error, Result};
use dyfus_core::init::Rng;
use dyfus_core::ops::{Activation, ConvMeta, ConvSpec, Padding};
use dyfus_core::tensor::{Scalar, Tensor};

use crate::params::{join, visit_conv, visit_conv_mut, ParamSet};

/// Pyramid level tags. S-levels come from the backbone, F-levels from the
/// encoder. Strides are fixed per tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    S1,
    S2,
    S3,
    S4,
    S5,
    F2,
    F3,
    F4,
    F5,
}

impl Level {
    pub fn stride(self) -> usize {
        match self {
            Level::S1 => 2,
            Level::S2 | Level::F2 => 4,
            Level::S3 | Level::F3 => 8,
            Level::S4 | Level::F4 => 16,
            Level::S5 | Level::F5 => 32,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Level::S1 => "S1",
            Level::S2 => "S2",
            Level::S3 => "S3",
            Level::S4 => "S4",
            Level::S5 => "S5",
            Level::F2 => "F2",
            Level::F3 => "F3",
            Level::F4 => "F4",
            Level::F5 => "F5",
        }
    }

    pub const BACKBONE: [Level; 5] = [Level::S1, Level::S2, Level::S3, Level::S4, Level::S5];
}

/// Ordered level -> tensor map. Every level's spatial extents must equal the
/// input extents divided by its stride.
#[derive(Debug, Clone)]
pub struct PyramidFeatures<S> {
    levels: BTreeMap<Level, Tensor<S>>,
}

impl<S: Scalar> Default for PyramidFeatures<S> {
    fn default() -> Self {
        PyramidFeatures { levels: BTreeMap::new() }
    }
}

impl<S: Scalar> PyramidFeatures<S> {
    pub fn insert(&mut self, level: Level, t: Tensor<S>) {
        self.levels.insert(level, t);
    }

    pub fn get(&self, level: Level) -> Result<&Tensor<S>> {
        self.levels
            .get(&level)
            .ok_or_else(|| Error::config(format!("pyramid level {} is missing", level.name())))
    }

    pub fn contains(&self, level: Level) -> bool {
        self.levels.contains_key(&level)
    }

    pub fn levels(&self) -> impl Iterator<Item = (Level, &Tensor<S>)> {
        self.levels.iter().map(|(l, t)| (*l, t))
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Check every level against the stride arithmetic for the given input
    /// extents.
    pub fn validate_strides(&self, input_h: usize, input_w: usize) -> Result<()> {
        for (level, t) in &self.levels {
            let (_, _, h, w) = t.dims4()?;
            let s = level.stride();
            if h * s != input_h || w * s != input_w {
                return Err(Error::shape(format!(
                    "level {} is {h}x{w} at stride {s}, expected {}x{}",
                    level.name(),
                    input_h / s,
                    input_w / s
                )));
            }
        }
        Ok(())
    }
}

/// Five stride-2 conv+relu stages standing in for a real backbone.
#[derive(Debug, Clone)]
pub struct BackboneStub<S> {
    pub channels: [usize; 5],
    pub blocks: Vec<ConvSpec<S>>,
}

fn stage_meta(cin: usize, cout: usize) -> ConvMeta {
    ConvMeta {
        in_channels: cin,
        out_channels: cout,
        kernel_h: 3,
        kernel_w: 3,
        stride: 2,
        groups: 1,
        padding: Padding::Zero,
    }
}

impl<S: Scalar> BackboneStub<S> {
    pub fn init(channels: [usize; 5], rng: &mut Rng) -> Result<Self> {
        let mut blocks = Vec::with_capacity(5);
        let mut cin = 3;
        for &cout in &channels {
            let meta = stage_meta(cin, cout);
            blocks.push(ConvSpec::new(
                meta,
                rng.fan_in_tensor(meta.weight_shape(), cin * 9),
                Some(Tensor::zeros(vec![cout])),
            )?);
            cin = cout;
        }
        Ok(BackboneStub { channels, blocks })
    }

    /// `[N, 3, H, W]` image with H, W multiples of 32 -> S1..S5.
    pub fn forward(&self, image: &Tensor<S>) -> Result<PyramidFeatures<S>> {
        let (_, c, h, w) = image.dims4()?;
        if c != 3 {
            return Err(Error::shape(format!("backbone stub expects 3 input channels, got {c}")));
        }
        if h % 32 != 0 || w % 32 != 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!(
                "input extents {h}x{w} must be positive multiples of 32"
            )));
        }
        let mut b = Eager::<S>::default();
        let mut cur = b.constant(image);
        let mut pyr = PyramidFeatures::default();
        for (i, (spec, level)) in self.blocks.iter().zip(Level::BACKBONE).enumerate() {
            let w_ = b.constant(&spec.weight);
            let bias = spec.bias.as_ref().map(|t| b.constant(t));
            cur = b.conv2d(&cur, &w_, bias.as_ref(), &spec.meta)?;
            cur = b.activation(&cur, Activation::Relu)?;
            let _ = i;
            pyr.insert(level, b.tensor(&cur));
        }
        pyr.validate_strides(h, w)?;
        Ok(pyr)
    }
}

impl<S: Scalar> ParamSet<S> for BackboneStub<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<S>)) {
        for (i, blk) in self.blocks.iter().enumerate() {
            visit_conv(blk, &join(prefix, &format!("stage{}", i + 1)), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        for (i, blk) in self.blocks.iter_mut().enumerate() {
            visit_conv_mut(blk, &join(prefix, &format!("stage{}", i + 1)), f);
        }
    }
}

/// Nearest-neighbor 2x upsampling, the top-down path's resolution bridge.
pub fn upsample_nearest_2x<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c, h, w) = x.dims4()?;
    let mut out = Tensor::zeros(vec![n, c, 2 * h, 2 * w]);
    let (oh, ow) = (2 * h, 2 * w);
    for p in 0..n * c {
        for y in 0..oh {
            for xx in 0..ow {
                out.data_mut()[(p * oh + y) * ow + xx] = x.data()[(p * h + y / 2) * w + xx / 2];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stride_arithmetic_64() {
        let stub = BackboneStub::<f32>::init([8, 8, 16, 16, 16], &mut Rng::new(91, 0)).unwrap();
        let img = Rng::new(92, 1).tensor(vec![1, 3, 64, 64], 1.0);
        let pyr = stub.forward(&img).unwrap();
        let expect = [(Level::S1, 32), (Level::S2, 16), (Level::S3, 8), (Level::S4, 4), (Level::S5, 2)];
        for (level, side) in expect {
            let t = pyr.get(level).unwrap();
            assert_eq!(&t.shape()[2..], &[side, side], "{}", level.name());
        }
    }

    #[test]
    fn stride_arithmetic_32_bottoms_out_at_one() {
        let stub = BackboneStub::<f32>::init([4, 4, 8, 8, 8], &mut Rng::new(93, 0)).unwrap();
        let img = Rng::new(94, 1).tensor(vec![1, 3, 32, 32], 1.0);
        let pyr = stub.forward(&img).unwrap();
        assert_eq!(&pyr.get(Level::S5).unwrap().shape()[2..], &[1, 1]);
    }

    #[test]
    fn non_multiple_of_32_rejected() {
        let stub = BackboneStub::<f32>::init([4, 4, 8, 8, 8], &mut Rng::new(95, 0)).unwrap();
        let img = Tensor::zeros(vec![1, 3, 60, 60]);
        assert!(matches!(stub.forward(&img), Err(Error::Shape(_))));
    }

    #[test]
    fn upsample_doubles_extents() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let y = upsample_nearest_2x(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        assert_eq!(y.data()[0], 1.0);
        assert_eq!(y.data()[1], 1.0);
        assert_eq!(y.data()[5], 1.0);
        assert_eq!(y.data()[15], 4.0);
    }
}
