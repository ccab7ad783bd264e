//! Explanation-driven clustering for radiograph classifiers.
//!
//! The crate covers the numeric side of the pipeline: feed-forward inference
//! for small VGG-style networks, DeepLIFT (rescale rule) and DeepSHAP
//! attributions, red/blue saliency overlays, k-means++ clustering in
//! attribution space, and the cluster-quality metrics used to pick `k`.
//!
//! Numeric code is generic over [`Scalar`] (`f32` and `f64`). Files on disk
//! always carry 32-bit reals; the aliases at the crate root fix the scalar to
//! `f32`, which is what the service layer uses.

pub mod attribution;
pub mod clustering;
pub mod datapipe;
pub mod error;
pub mod metrics;
pub mod model_io;
pub mod nn;
pub mod saliency;
pub mod scalar;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Dense `f32` tensor.
pub type Tensor = tensor::Tensor<f32>;
/// Dense `f64` tensor, mostly useful for oracles and high-precision checks.
pub type Tensor64 = tensor::Tensor<f64>;
/// `f32` network as loaded from `model.json` / `model.bin`.
pub type Network = nn::Network<f32>;
pub type Network64 = nn::Network<f64>;
pub type ActivationTrace = nn::ActivationTrace<f32>;
pub type Baseline = attribution::Baseline<f32>;
pub type AttributionMap = attribution::AttributionMap<f32>;
pub type AttributionMap64 = attribution::AttributionMap<f64>;
pub type SaliencyPair = attribution::SaliencyPair<f32>;
pub type FeatureVector = clustering::FeatureVector<f32>;
pub type ClusterModel = clustering::ClusterModel<f32>;
