//! Point clouds: data model, normalization, augmentation, synthetic shapes
//! and file formats.

mod cloud;
pub mod io;
mod manifest;
mod shapes;
mod transform;

pub use cloud::PointCloud;
pub use io::{load_cloud, save_cloud};
pub use manifest::{DatasetManifest, ManifestEntry};
pub use shapes::{gen_shape, ShapeKind};
pub use transform::{add_gaussian_noise, augment, augment_with, AugmentConfig, Augmentation};
