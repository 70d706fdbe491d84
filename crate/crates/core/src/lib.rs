//! Direct white-matter tract segmentation from diffusion tensor images.

pub mod autograd;
pub mod dti;
pub mod error;
pub mod metrics;
pub mod nets;
pub mod optim;
pub mod phantom;
pub mod seed;
pub mod train;
pub mod volgrid;

pub use error::{Error, Result};
