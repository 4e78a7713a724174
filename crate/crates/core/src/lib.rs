//! Simulation, calibration and inversion of light transport through a
//! surface of randomly oriented mirror microfacets.

pub mod analysis;
pub mod calibrate;
pub mod error;
pub mod hdr;
pub mod image;
pub mod io;
pub mod linalg;
pub mod reconstruct;
pub mod render;
pub mod rng;
pub mod scene;

pub use error::{Result, SparkleError};
pub use image::{Grid, Lightmap, PixelMask, SensorImage};
