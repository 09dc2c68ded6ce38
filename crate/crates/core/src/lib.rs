//! Flow-guided diffusion video inpainting.
//!
//! Frames are `N x C x H x W` tensors on `[0, 1]`; masks are `N x 1 x H x W`
//! with `1` marking missing pixels. Diffusion, propagation and interpolation
//! run on latents at a quarter of the frame resolution.

pub mod cli;
pub mod corpus;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod flow;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod propagation;
pub mod sampler;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
