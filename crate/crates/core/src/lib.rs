//! Low-dose CT denoising in a shift-invariant contourlet domain.
//!
//! The crate is organised around the data flow of the method:
//!
//! * [`image`]: the scalar image container, training patches, HU display
//!   windows and the `WIMG` / PGM file formats.
//! * [`ct`]: ellipse phantoms, a ray-driven projector and its adjoint,
//!   post-log Poisson noise and filtered backprojection.
//! * [`nsct`]: the nonsubsampled contourlet transform `T`, its inverse and the
//!   coefficient-domain residual label `S(Y) = T(Y) - T(X)`.
//! * [`net`]: the 24-layer residual network with hand-written backward passes,
//!   SGD, gradient clipping and the `WRN1` checkpoint format.
//! * [`mbir`]: TV-regularised iterative reconstruction (ADMM + CG + Chambolle).
//! * [`metrics`]: PSNR, NRMSE and SSIM with dataset-level reports.
//! * [`pipeline`]: dataset synthesis, training, inference and method comparison.

pub mod config;
pub mod ct;
pub mod error;
pub mod image;
pub mod mbir;
pub mod metrics;
pub mod net;
pub mod nsct;
pub mod pipeline;
mod rng;

pub use error::{Error, Result};
pub use image::{Image, MultiImage};
