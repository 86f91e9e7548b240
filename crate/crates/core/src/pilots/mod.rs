//! Small-scale pilot studies: embedding noise tolerance and image slicing.

pub mod noise;
pub mod slicing;

pub use noise::{noise_grid, NoiseGrid, NoiseGridConfig};
pub use slicing::{slicing_pilot, PolicyReport, SlicingReport};
