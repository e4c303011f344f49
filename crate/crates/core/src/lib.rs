//! Point-cloud classification and part segmentation built from cloning
//! decomposition, Hilbert-kernel neighbor relations and a linkage-pattern
//! aggregation trained with a pseudoinverse mapping loss.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root pick the precision used for training and for checks.

pub mod autodiff;
pub mod cloning;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod layers;
pub mod linalg;
pub mod neighbors;
pub mod patternnet;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type PointCloud32 = geometry::PointCloud<f32>;
pub type PointCloud64 = geometry::PointCloud<f64>;
pub type PatternNet32 = patternnet::PatternNet<f32>;
pub type PatternNet64 = patternnet::PatternNet<f64>;
