//! Reverse-mode differentiation for the fixed set of volumetric layers the
//! segmentation networks are built from.
//!
//! Each operator is a pair of plain functions (forward, backward); the
//! [`Tape`] strings them together for a whole network. Operators are generic
//! over [`Real`] so the same code runs in `f32` for training and `f64` for
//! finite-difference checks.

pub mod checkpoint;
mod conv;
pub mod gradcheck;
mod layers;
mod params;
mod tape;
mod tensor;

pub use conv::{Conv3d, ConvGrads, ConvTranspose3d, Padding};
pub use gradcheck::{check_operator, finite_diff_check, Operator};
pub use layers::{
    batchnorm3d, batchnorm3d_backward, concat_channels, maxpool3d, maxpool3d_backward, prelu, prelu_backward,
    residual_add, sigmoid, sigmoid_backward, sigmoid_scalar, split_channels, update_running_stats, BatchNormCache,
    BatchNormConfig, Mode,
};
pub use params::{Buffer, BufferId, Param, ParamId, ParamStore};
pub use tape::{Tape, ValueId};
pub use tensor::{Batch, Real};

#[cfg(test)]
mod tests;
