//! Forward primitives. Every function here is pure: same inputs produce
//! bit-identical outputs at the same precision, with or without the
//! data-parallel feature.

pub mod conv;
pub mod elem;
pub mod layout;
pub mod linalg;
pub mod pool;

pub use conv::{
    conv1d_channels, conv1d_channels_backward, conv2d, conv2d_backward, conv2d_raw, ConvMeta,
    ConvSpec, Padding,
};
pub use elem::{
    activation, activation_backward, add, gelu_exact, mul, mul_batch_scalar,
    mul_batch_scalar_backward, mul_channel_gate, mul_channel_gate_backward, mul_global_scalar,
    mul_spatial_gate, mul_spatial_gate_backward, scale, sigmoid, sum_all, Activation,
};
pub use layout::{
    column, concat_batch, concat_channels, concat_cols, nchw_to_tokens, slice_batch,
    slice_channels, slice_channels_backward, slice_cols, split_channels, split_point,
    tokens_to_nchw,
};
pub use linalg::{
    layer_norm, layer_norm_backward, linear, linear_backward, matmul, matmul_nt, softmax,
    softmax_backward, softmax_vec, transpose2,
};
pub use pool::{
    avg_pool2d, avg_pool2d_backward, global_avg_pool, global_avg_pool_backward, max_pool2d,
    max_pool2d_backward, spatial_descriptor_pool, spatial_descriptor_pool_backward,
};
