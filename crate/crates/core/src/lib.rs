pub mod accel;
pub mod adam;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod image;
pub mod light;
pub mod mlp;
pub mod nif;
pub mod real;
pub mod render;
pub mod rng;
pub mod scene;
pub mod scene_io;
pub mod shapes;

pub use error::{Error, Result};
