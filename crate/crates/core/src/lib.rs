//! Illumination correction and blind deblurring for grayscale images.

pub mod degrade;
pub mod dnst;
pub mod error;
pub mod fft;
pub mod image;
pub mod kernel;
pub mod patch;
pub mod restore;
pub mod retinex;
pub mod scenes;
pub mod tgv;

pub use error::{Error, Result};
pub use image::{Boundary, Image};
pub use kernel::BlurKernel;
pub use patch::PatchGrid;
