//! Flat key/value run configuration with one section per module.
//!
//! The format is deliberately minimal: `[section]` headers, `key = value`
//! lines, `#` comments. Parsing is hand-rolled so the byte-to-value mapping
//! stays pinned; every key is validated and unknown keys are rejected with
//! the offending name.

use std::collections::BTreeMap;

use dyfus_core::error::{Error, Result};
use dyfus_ops::esfc::EsfcStage;
use dyfus_ops::ffr::{FfrConfig, FfrVariant, FusionBlockKind};
use dyfus_ops::HighBandInit;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::config(format!("precision: expected f32 or f64, got `{other}`"))),
        }
    }
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipelineKind {
    Dmsd,
    Sfcm,
    DyFusNet,
    Esfc,
    Ffr,
}

impl PipelineKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dmsd" => Ok(PipelineKind::Dmsd),
            "sfcm" => Ok(PipelineKind::Sfcm),
            "dyfusnet" => Ok(PipelineKind::DyFusNet),
            "esfc" => Ok(PipelineKind::Esfc),
            "ffr" => Ok(PipelineKind::Ffr),
            other => Err(Error::config(format!(
                "pipeline: expected dmsd, sfcm, dyfusnet, esfc or ffr, got `{other}`"
            ))),
        }
    }
    pub fn name(self) -> &'static str {
        match self {
            PipelineKind::Dmsd => "dmsd",
            PipelineKind::Sfcm => "sfcm",
            PipelineKind::DyFusNet => "dyfusnet",
            PipelineKind::Esfc => "esfc",
            PipelineKind::Ffr => "ffr",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub pipeline: PipelineKind,
    pub seed: u64,
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub precision: Precision,
    pub parallel: bool,

    pub warmup_iters: usize,
    pub measure_iters: usize,

    // dyfusnet / dmsd section
    pub split_ratio: f64,
    pub reduction: usize,
    pub fuse_1x1: bool,
    pub high_band_init: HighBandInit,

    // esfc section
    pub experts: usize,
    pub n_blocks: usize,
    pub esfc_stage: Option<EsfcStage>,
    pub ghost_ratio: f64,
    pub eca_b: f64,
    pub eca_gamma: f64,

    // ffr section
    pub ffr_variant: FfrVariant,
    pub fusion_block: FusionBlockKind,
    pub inject_s1: bool,
    pub ffr_channels: [usize; 5],
    pub aifi_heads: usize,
    pub aifi_ffn: usize,

    // spectral section
    pub band_r1: f64,
    pub band_r2: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            pipeline: PipelineKind::DyFusNet,
            seed: 42,
            batch: 1,
            channels: 16,
            height: 64,
            width: 64,
            precision: Precision::F32,
            parallel: false,
            warmup_iters: 20,
            measure_iters: 200,
            split_ratio: 0.5,
            reduction: 16,
            fuse_1x1: true,
            high_band_init: HighBandInit::Laplacian,
            experts: 3,
            n_blocks: 3,
            esfc_stage: None,
            ghost_ratio: 0.5,
            eca_b: 1.0,
            eca_gamma: 2.0,
            ffr_variant: FfrVariant::Ffr,
            fusion_block: FusionBlockKind::Conv,
            inject_s1: true,
            ffr_channels: [8, 16, 16, 32, 32],
            aifi_heads: 4,
            aifi_ffn: 64,
            band_r1: dyfus_spectral::DEFAULT_R1,
            band_r2: dyfus_spectral::DEFAULT_R2,
        }
    }
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| Error::config(format!("{key}: `{v}` is not a non-negative integer")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse().map_err(|_| Error::config(format!("{key}: `{v}` is not a 64-bit integer")))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse().map_err(|_| Error::config(format!("{key}: `{v}` is not a number")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::config(format!("{key}: `{other}` is not a boolean"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section = String::from("run");
        let mut seen: BTreeMap<String, ()> = BTreeMap::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            let qualified = format!("{section}.{key}");
            if seen.insert(qualified.clone(), ()).is_some() {
                return Err(Error::config(format!("duplicate key {qualified}")));
            }
            cfg.apply(&section, key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        match (section, key) {
            ("run", "pipeline") => self.pipeline = PipelineKind::parse(value)?,
            ("run", "seed") => self.seed = parse_u64(key, value)?,
            ("run", "n") => self.batch = parse_usize(key, value)?,
            ("run", "c") => self.channels = parse_usize(key, value)?,
            ("run", "h") => self.height = parse_usize(key, value)?,
            ("run", "w") => self.width = parse_usize(key, value)?,
            ("run", "precision") => self.precision = Precision::parse(value)?,
            ("run", "parallel") => self.parallel = parse_bool(key, value)?,
            ("bench", "warmup_iters") => self.warmup_iters = parse_usize(key, value)?,
            ("bench", "measure_iters") => self.measure_iters = parse_usize(key, value)?,
            ("dyfusnet", "e") => self.split_ratio = parse_f64(key, value)?,
            ("dyfusnet", "r") => self.reduction = parse_usize(key, value)?,
            ("dyfusnet", "fuse_1x1") => self.fuse_1x1 = parse_bool(key, value)?,
            ("dyfusnet", "high_band_init") => {
                self.high_band_init = match value {
                    "laplacian" => HighBandInit::Laplacian,
                    "random" => HighBandInit::Random,
                    other => {
                        return Err(Error::config(format!(
                            "high_band_init: expected laplacian or random, got `{other}`"
                        )))
                    }
                }
            }
            ("esfc", "experts") => self.experts = parse_usize(key, value)?,
            ("esfc", "n_blocks") => self.n_blocks = parse_usize(key, value)?,
            ("esfc", "esfc_stage") => {
                self.esfc_stage =
                    if value.is_empty() { None } else { Some(EsfcStage::parse(value)?) }
            }
            ("esfc", "ghost_ratio") => self.ghost_ratio = parse_f64(key, value)?,
            ("esfc", "eca_b") => self.eca_b = parse_f64(key, value)?,
            ("esfc", "eca_gamma") => self.eca_gamma = parse_f64(key, value)?,
            ("ffr", "ffr_variant") => self.ffr_variant = FfrVariant::parse(value)?,
            ("ffr", "fusion_block") => self.fusion_block = FusionBlockKind::parse(value)?,
            ("ffr", "inject_s1") => self.inject_s1 = parse_bool(key, value)?,
            ("ffr", "channels") => {
                let parts: Vec<usize> = value
                    .split_whitespace()
                    .map(|t| parse_usize("channels", t))
                    .collect::<Result<_>>()?;
                if parts.len() != 5 {
                    return Err(Error::config(format!(
                        "channels: expected 5 extents (S1..S5), got {}",
                        parts.len()
                    )));
                }
                self.ffr_channels = [parts[0], parts[1], parts[2], parts[3], parts[4]];
            }
            ("ffr", "aifi_heads") => self.aifi_heads = parse_usize(key, value)?,
            ("ffr", "aifi_ffn") => self.aifi_ffn = parse_usize(key, value)?,
            ("spectral", "band_r1") => self.band_r1 = parse_f64(key, value)?,
            ("spectral", "band_r2") => self.band_r2 = parse_f64(key, value)?,
            _ => {
                return Err(Error::config(format!("unknown key `{key}` in section [{section}]")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::config("n/c/h/w: input extents must be positive"));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio <= 1.0) {
            return Err(Error::config(format!(
                "e: split ratio {} outside (0, 1]",
                self.split_ratio
            )));
        }
        if self.reduction == 0 {
            return Err(Error::config("r: reduction ratio must be >= 1"));
        }
        if self.experts < 2 {
            return Err(Error::config(format!("experts: need at least 2, got {}", self.experts)));
        }
        // the ghost split is structural: primary always emits half the block's
        // output channels, so only 0.5 is realizable
        if self.ghost_ratio != 0.5 {
            return Err(Error::config(format!(
                "ghost_ratio: only 0.5 is supported (output is always twice the primary), got {}",
                self.ghost_ratio
            )));
        }
        if self.eca_gamma <= 0.0 {
            return Err(Error::config("eca_gamma: divisor must be positive"));
        }
        if !(self.band_r1 > 0.0 && self.band_r1 < self.band_r2) {
            return Err(Error::config(format!(
                "band_r1/band_r2: cutoffs must satisfy 0 < r1 < r2, got {} and {}",
                self.band_r1, self.band_r2
            )));
        }
        if self.pipeline == PipelineKind::Ffr && (self.height % 32 != 0 || self.width % 32 != 0) {
            return Err(Error::config(format!(
                "h/w: the pyramid pipeline needs multiples of 32, got {}x{}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn ffr_config(&self) -> FfrConfig {
        FfrConfig {
            variant: self.ffr_variant,
            fusion_block: self.fusion_block,
            inject_s1: self.inject_s1,
            channels: self.ffr_channels,
            aifi_heads: self.aifi_heads,
            aifi_ffn_dim: self.aifi_ffn,
            esfc_stage: self.esfc_stage,
            esfc_experts: self.experts,
            esfc_blocks: self.n_blocks,
            eca_b: self.eca_b,
            eca_gamma: self.eca_gamma,
            split_ratio: self.split_ratio,
            reduction: self.reduction,
            fuse_1x1: self.fuse_1x1,
            high_band_init: self.high_band_init,
        }
    }
}

/// A complete example configuration, shipped in the repository and used by
/// tests.
pub const EXAMPLE_CONFIG: &str = "\
# example run configuration: every key at its default
[run]
pipeline = dyfusnet
seed = 42
n = 1
c = 16
h = 64
w = 64
precision = f32
parallel = false

[bench]
warmup_iters = 20
measure_iters = 200

[dyfusnet]
e = 0.5
r = 16
fuse_1x1 = true
high_band_init = laplacian

[esfc]
experts = 3
n_blocks = 3
esfc_stage =
ghost_ratio = 0.5
eca_b = 1
eca_gamma = 2

[ffr]
ffr_variant = ffr
fusion_block = conv
inject_s1 = true
channels = 8 16 16 32 32
aifi_heads = 4
aifi_ffn = 64

[spectral]
band_r1 = 1.0471975511965976
band_r2 = 2.0943951023931953
";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_config_parses_to_defaults() {
        let cfg = RunConfig::parse(EXAMPLE_CONFIG).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.channels, 16);
        assert_eq!(cfg.split_ratio, 0.5);
        assert_eq!(cfg.ffr_channels, [8, 16, 16, 32, 32]);
    }

    #[test]
    fn out_of_range_split_ratio_names_the_key() {
        let text = "[dyfusnet]\ne = 1.5\n";
        let err = RunConfig::parse(text).unwrap_err();
        assert!(err.to_string().contains("e:"), "{err}");
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = RunConfig::parse("[run]\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn duplicate_key_is_rejected() {
        assert!(RunConfig::parse("[run]\nseed = 1\nseed = 2\n").is_err());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = RunConfig::parse("# hello\n\n[run]\nseed = 7 # trailing\n").unwrap();
        assert_eq!(cfg.seed, 7);
    }
}
