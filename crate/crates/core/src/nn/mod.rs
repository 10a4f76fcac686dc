//! A small reverse-mode automatic differentiation engine over NHWC tensors.
//!
//! Computation is in `f64`; parameters, optimizer moments and batchnorm
//! moving averages are kept at `f32` precision so checkpoints restore them
//! exactly.

mod adam;
mod checkpoint;
mod gemm;
mod layers;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use gemm::gemm;
pub use layers::{BnConfig, LayerSpec, Sequential};
pub use params::{he_normal, Param, ParamId, ParamStore};
pub use tape::{sigmoid, BnUpdate, ConvGeom, Gradients, Tape, Var};
pub use tensor::Tensor;
