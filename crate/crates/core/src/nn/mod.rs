//! Minimal tensor kernels with reverse-mode gradients.
//!
//! Every encoder and fusion block in this crate is composed from the
//! operations on [`Tape`]. Values are `f64` throughout; parameters are kept
//! on the `f32` grid so checkpoints reproduce them exactly.

pub mod checkpoint;
pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use kernels::{Activation, ConvGeom};
pub use params::{Gradients, ParamId, ParamStore, Parameter};
pub use rng::SeededRng;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
