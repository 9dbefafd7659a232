//! Speaker-dependent acoustic-to-articulatory inversion for ultrasound
//! tongue imaging.
//!
//! The crate covers the full experiment pipeline:
//!
//! - [`dataset`]: on-disk utterance formats, audio/frame alignment and
//!   corpus partitioning.
//! - [`image`]: bicubic resampling of raw scanline frames to the 64x64
//!   working size, scale handling and PGM export.
//! - [`acoustic`]: 25 MFCCs plus 25 delta coefficients per ultrasound frame.
//! - [`eigentongue`]: PCA basis over vectorized frames with projection and
//!   reconstruction.
//! - [`mlp`]: fully connected ReLU regression networks with SGD, RMSProp and
//!   Adam training.
//! - [`metrics`]: MSE, SSIM and complex-wavelet SSIM with per-utterance
//!   curves and corpus aggregation.
//! - [`synth`]: a deterministic synthetic corpus generator that couples a
//!   latent articulatory trajectory to both modalities.

mod binio;

pub mod acoustic;
pub mod dataset;
pub mod eigentongue;
pub mod error;
pub mod image;
pub mod metrics;
pub mod mlp;
pub mod pyramid;
pub mod synth;

pub use error::{Error, Result};
