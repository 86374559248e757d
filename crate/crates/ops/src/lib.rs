//! Frequency-inspired neural operators built on the tensor kernels of
//! `dyfus-core`: simulated three-band decomposition, spatial-frequency
//! cooperative modulation, the channel-split fusion pipeline, dynamic expert
//! convolution, ghost blocks, cascaded dual-domain gating, the dual-branch
//! semantic concentrator, intra-scale attention, and the detail-retaining
//! pyramid encoder, plus analytic cost accounting for all of them.
//!
//! Every module forward is written once against the evaluation backend
//! trait, so the same composition runs eagerly for forward/bench work and on
//! the recording tape for gradient verification.

pub mod aifi;
pub mod cost;
pub mod deconv;
pub mod dga;
pub mod dmsd;
pub mod dyfusnet;
pub mod egblock;
pub mod esfc;
pub mod ffr;
pub mod params;
pub mod pyramid;
pub mod sfcm;

pub use aifi::{aifi_forward, position_encoding_2d, AifiParams};
pub use cost::Cost;
pub use deconv::{deconv_forward, deconv_forward_aggregated, DeconvParams};
pub use dga::{dga_forward, eca_kernel_size, DgaParams};
pub use dmsd::{dmsd_band_response, dmsd_forward, Band, DmsdParams, HighBandInit};
pub use dyfusnet::{dyfusnet_forward, DyFusNetParams};
pub use egblock::{egblock_chain, egblock_forward, EgBlockParams};
pub use esfc::{esfc_forward, EsfcParams, EsfcStage};
pub use ffr::{
    ffr_encoder_forward, shape_report, FfrConfig, FfrParams, FfrVariant, FusionBlockKind,
    ShapeReport,
};
pub use params::ParamSet;
pub use pyramid::{upsample_nearest_2x, BackboneStub, Level, PyramidFeatures};
pub use sfcm::{sfcm_forward, SfcmParams};
