//! Fourier visual prompting for source-free segmentation adaptation.
//!
//! A frozen segmentation network is steered towards an unlabeled target
//! domain by a learnable low-frequency perturbation of the input spectrum,
//! trained against pseudo labels the network itself produces.
//!
//! Numerics are generic over [`Scalar`] (`f32`/`f64`); the aliases below name
//! the `f64` instantiations used by the pipeline.

pub mod adapt;
pub mod data;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod prompt;
pub mod pseudo;
pub mod scalar;
pub mod segnet;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type RealGrid64 = grid::RealGrid<f64>;
pub type ComplexGrid64 = grid::ComplexGrid<f64>;
pub type SegModel64 = segnet::SegModel<f64>;
pub type Prompt64 = prompt::Prompt<f64>;
pub type SpectrumPrompt64 = prompt::SpectrumPrompt<f64>;
pub type SpatialPrompt64 = prompt::SpatialPrompt<f64>;
pub type Dataset64 = data::Dataset<f64>;
