pub mod annotation;
pub mod components;
pub mod config;
pub mod counting;
pub mod error;
pub mod eval;
pub mod morphology;
pub mod net;
pub mod nn;
pub mod overlay;
pub mod pipeline;
pub mod raster;
pub mod synth;
pub mod tensor;
pub mod tiling;

pub use error::{CheckpointError, Error, Result};
pub use raster::{BinaryMask, HpfImage, ProbabilityMap, Raster, ScanType};
pub use tensor::Tensor;
