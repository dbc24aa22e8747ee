//! Differentiable building blocks shared by every network: the reverse-mode
//! tape, convolution primitives, parameter sets with a meta-update mask,
//! layer helpers, checkpoints, and the finite-difference gradient checker.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod params;
pub mod scalar;

pub use checkpoint::{file_sha256, hex_sha256, CheckpointMeta};
pub use gradcheck::{grad_check, DEFAULT_EPS};
pub use graph::{Gradients, Graph, Var};
pub use layers::{Conv2dSpec, LinearSpec, UpscalerSpec, LEAKY_SLOPE};
pub use params::{bind, collect_grads, BindMode, Binding, ParamEntry, ParamSet};
pub use scalar::Scalar;

/// C x H x W feature map.
pub type FeatureMap<T> = ndarray::Array3<T>;
/// Depthwise dynamic weights, C x 1 x Kh x Kw.
pub type DynamicWeights<T> = ndarray::Array4<T>;
