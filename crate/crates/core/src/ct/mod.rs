//! Synthetic CT acquisition: phantoms, projection, dose-dependent noise and
//! filtered backprojection.

pub mod fbp;
pub mod geometry;
pub mod noise;
pub mod phantom;
pub mod projector;

pub use fbp::{fbp_reconstruct, fbp_reconstruct_with, Apodization};
pub use geometry::{load_sinogram, save_sinogram, Beam, Geometry, Sinogram, SinogramMeta};
pub use noise::inject_low_dose_noise;
pub use phantom::{hu_to_mu, mu_to_hu, rasterize_phantom, Ellipse, Phantom};
pub use projector::{backproject, forward_project};
