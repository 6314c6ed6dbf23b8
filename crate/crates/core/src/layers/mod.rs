//! Neural network layers with explicit forward caches and hand-written
//! backward passes.

pub mod backbone;
pub mod complex_conv;
pub mod loss;
pub mod manifold;
mod tensor;

pub use backbone::{Backbone, BackboneConfig, Conv1d, Dense, FeatureMap};
pub use complex_conv::{ComplexConv1d, ComplexMap};
pub use loss::softmax_cross_entropy;
pub use manifold::{
    EquivariantLayer, EquivariantLayerParams, InvariantLayer, InvariantLayerParams, InvariantOutput,
    ManifoldTensor, WfmConv,
};
pub use tensor::Tensor;
