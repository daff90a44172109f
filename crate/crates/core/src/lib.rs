//! Non-rigid RGB-D tracking and fusion driven by dense heatmap
//! correspondences.
//!
//! The numeric code is generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below name the common instantiations.

pub mod error;
pub mod geometry;
pub mod scalar;
pub mod graph;
pub mod energy;
pub mod solver;
pub mod tsdf;
pub mod provider;
pub mod losses;
pub mod pipeline;
pub mod benchmark;
pub mod synth;

pub use error::{Error, Result};

pub type Frame = geometry::RgbdFrame<f64>;
pub type Frame32 = geometry::RgbdFrame<f32>;
pub type Intrinsics = geometry::CameraIntrinsics<f64>;
pub type Intrinsics32 = geometry::CameraIntrinsics<f32>;
pub type Mesh = geometry::SurfaceMesh<f64>;
pub type Mesh32 = geometry::SurfaceMesh<f32>;
pub type Graph = graph::DeformationGraph<f64>;
pub type Graph32 = graph::DeformationGraph<f32>;
pub type Volume = tsdf::TsdfVolume<f64>;
pub type Volume32 = tsdf::TsdfVolume<f32>;
pub type Prediction = provider::HeatmapPrediction<f64>;
pub type Prediction32 = provider::HeatmapPrediction<f32>;
pub type Reconstruction = pipeline::SequenceResult<f64>;
pub type Reconstruction32 = pipeline::SequenceResult<f32>;
pub type Alignment = pipeline::PairAlignment<f64>;
pub type Alignment32 = pipeline::PairAlignment<f32>;
