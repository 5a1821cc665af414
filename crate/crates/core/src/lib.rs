//! Rib-cage geometry toolkit for CT volumes: HU thresholding and component
//! denoising, morphological rib labeling, penalized-shortest-path rib
//! centerlines, point-cloud preparation, evaluation metrics and synthetic
//! phantoms with exact ground truth.

pub mod centerline;
pub mod diagnostics;
pub mod error;
pub mod labeling;
pub mod metrics;
pub mod morphology;
pub mod nifti;
pub mod phantom;
pub mod pipeline;
pub mod pointcloud;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{BinaryMask, Geometry, LabelVolume, ValueKind, Volume, VoxelData};
