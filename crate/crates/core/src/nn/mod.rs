//! Minimal reverse-mode differentiable compute core: tensors, the recording
//! tape with every layer the networks need, Adam, checkpoints and a
//! finite-difference checker.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod kernels;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{finite_diff_check, finite_diff_check_params};
pub use kernels::Padding;
pub use params::{Param, ParamKey, ParamStore};
pub use tape::{Gradients, Mode, RunningStats, Tape, Var};
pub use tensor::Tensor;

/// Default negative slope for LeakyReLU.
pub const LEAKY_SLOPE: f64 = 0.2;
/// Default dropout rate in the discriminator.
pub const DROPOUT_RATE: f64 = 0.3;
/// Standard deviation of the Gaussian weight initializer.
pub const INIT_STD: f64 = 0.02;
