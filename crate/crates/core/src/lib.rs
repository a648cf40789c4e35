//! WBANet change detection for SAR image pairs: a small reverse-mode
//! autodiff engine, Haar wavelet attention blocks, fuzzy c-means
//! pre-classification and the end-to-end pipeline behind the `wbanet` binary.

pub mod bam;
pub mod cli;
pub mod error;
pub mod evalio;
pub mod gradcheck;
pub mod model;
pub mod preclass;
pub mod scalar;
pub mod selftest;
pub mod tensor;
pub mod wavelet;
pub mod wsm;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Graph64 = tensor::Graph<f64>;
pub type Graph32 = tensor::Graph<f32>;
pub type WbaNet64 = model::WbaNetParams<tensor::Tensor<f64>>;
pub type WbaNet32 = model::WbaNetParams<tensor::Tensor<f32>>;
