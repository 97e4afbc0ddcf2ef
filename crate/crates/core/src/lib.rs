//! Triangle-primitive control images, paired control/target/prompt datasets,
//! and a toy zero-convolution control block with hand-written gradients.

pub mod approximator;
pub mod dataset;
pub mod geometry;
pub mod raster;
pub mod rng;
pub mod zeroconv;

pub use approximator::{approximate, ApproxConfig, ApproxError, ApproxState, PlacedShape};
pub use geometry::{Point, Scanline, Triangle};
pub use raster::{Color, Raster, RasterError};
