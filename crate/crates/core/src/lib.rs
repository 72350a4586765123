//! Prior-regularized tiled diffusion sampling.
//!
//! A large latent canvas is denoised as overlapping native-resolution tiles.
//! At each step the tile predictions are fused in closed form together with a
//! pull toward an upsampled low-resolution prior, then integrated once.
//!
//! - [`tensor`]: `(C, T, H, W)` tensors with crop, zero-pad and trilinear resize
//! - [`tiles`]: tile layouts and resolution snapping
//! - [`blending`]: ramped per-tile weights
//! - [`schedules`]: noise levels and prior-strength schedules
//! - [`fusion`]: closed-form fused predictions and their objectives
//! - [`sampler`]: the step and run loops
//! - [`denoise`]: denoiser interface, verification denoisers, `FDP1` client
//! - [`metrics`]: sharpness, temporal consistency, prior alignment, seams

pub mod blending;
pub mod denoise;
pub mod error;
pub mod flt1;
pub mod fusion;
pub mod metrics;
pub mod netpbm;
pub mod sampler;
pub mod schedules;
pub mod tensor;
pub mod tiles;

pub use error::{DenoiseError, Error, Result};
pub use fusion::{FusionAccumulator, Lambda};
pub use sampler::{FusionMode, RunTrace, Sampler, SamplerConfig};
pub use tensor::{LatentTensor, Rect, Shape};
