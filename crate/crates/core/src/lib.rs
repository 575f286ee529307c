pub mod autograd;
pub mod error;
pub mod fstb;
pub mod gradcheck;
pub mod harness;
pub mod hdc;
pub mod nn;
pub mod params;
pub mod scalar;
pub mod scenes;
pub mod spectral;
pub mod tensor;

pub use autograd::{Tape, Var};
pub use error::{Error, Result};
pub use params::{ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
