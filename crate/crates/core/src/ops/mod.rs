//! Neural network primitives on `[channels, time]` feature maps. Every forward
//! kernel here has a `*_backward` partner used by the gradient tape.

pub mod activation;
pub mod conv;
pub mod linear;
pub mod pool;

pub use activation::{activate, activate_backward, gelu, sigmoid, ActivationKind};
pub use conv::{
    bottleneck_pointwise, bottleneck_warning, conv1d, conv1d_backward, conv1d_with,
    depthwise_conv1d, pointwise_conv1d, BottleneckParams, ConvParams, ConvSpec, Padding,
};
pub use linear::{embedding_backward, embedding_lookup, linear, matmul_backward, sum_rows};
pub use pool::{argmax, pool_time, pool_time_backward, PoolKind};
