//! Minimal convolutional network engine: declarative graphs, parameter
//! stores, and an explicit forward/backward executor generic over `f32`
//! and `f64`.

pub mod exec;
pub mod graph;
pub mod model;
pub(crate) mod ops;
pub mod params;
pub mod real;
pub mod tensor;

pub use exec::{backward, forward, ForwardPass, Mode};
pub use graph::{GroupSet, LayerKind, LayerSpec, ModelGraph, ParamGroup};
pub use model::{build_fc_ef_res, build_integrated, build_lcm_branch, Architecture, Model, ModelSpec, Preset};
pub use params::{Grads, ParamStore};
pub use real::Real;
pub use ops::BN_EPS;
pub use tensor::Tensor;
