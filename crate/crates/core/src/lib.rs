//! Measuring how image classifiers rely on foreground, background and
//! attribute regions.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! below fix the scalar for the two common cases: `f32` for pipelines and
//! the wire protocol, `f64` for gradient checks.

pub mod attribution;
pub mod bridge;
pub mod corruption;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod report;
pub mod saliency;
pub mod scalar;
pub mod seeding;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Image = tensor::ImageTensor<f32>;
pub type Image64 = tensor::ImageTensor<f64>;
pub type Saliency = tensor::SaliencyMap<f32>;
pub type Saliency64 = tensor::SaliencyMap<f64>;
pub type Sample = dataset::Sample<f32>;
pub type Dataset = dataset::Dataset<f32>;
pub type Dataset64 = dataset::Dataset<f64>;
pub type Bridge = bridge::Bridge<f32>;
pub type Bridge64 = bridge::Bridge<f64>;
pub type ReferenceBackend = bridge::ReferenceBackend<f32>;
pub type ReferenceBackend64 = bridge::ReferenceBackend<f64>;
pub type RemoteBackend = bridge::RemoteBackend<f32>;
