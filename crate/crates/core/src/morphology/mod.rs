//! Binary-volume primitives: connected components, component denoising,
//! ball dilation/erosion and the exact Euclidean distance transform.

mod components;
mod edt;

pub use components::{
    ccd, connected_components, ComponentMap, Connectivity, DEFAULT_CCD_MIN_VOXELS,
};
pub use edt::{edt, squared_edt, DistanceField};
pub use crate::volume::BoundingBox;

use crate::error::{Error, Result};
use crate::volume::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MorphOp {
    Dilate,
    Erode,
}

/// Offsets of the discrete ball `dx² + dy² + dz² <= r²` in voxel units.
pub fn ball_offsets(radius: usize) -> Vec<[i64; 3]> {
    let r = radius as i64;
    let mut out = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy + dz * dz <= r * r {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

/// Dilation or erosion by a voxel-unit ball. Outside the grid is background,
/// so erosion eats into objects that touch the border.
pub fn morph(mask: &BinaryMask, op: MorphOp, radius: usize) -> Result<BinaryMask> {
    if radius == 0 {
        return Err(Error::InvalidArgument("morphology radius must be >= 1".into()));
    }
    let geometry = *mask.geometry();
    let offsets = ball_offsets(radius);
    let mut out = BinaryMask::empty(geometry);
    for i in mask.iter_ones() {
        let c = geometry.coords(i).map(|v| v as i64);
        let mut shifted = offsets.iter().map(|d| [c[0] + d[0], c[1] + d[1], c[2] + d[2]]);
        match op {
            MorphOp::Dilate => {
                for p in shifted {
                    if let Some(j) = geometry.checked_index(p) {
                        out.set(j, true);
                    }
                }
            }
            MorphOp::Erode => {
                if shifted.all(|p| mask.get_signed(p)) {
                    out.set(i, true);
                }
            }
        }
    }
    Ok(out)
}

pub fn dilate(mask: &BinaryMask, radius: usize) -> Result<BinaryMask> {
    morph(mask, MorphOp::Dilate, radius)
}

pub fn erode(mask: &BinaryMask, radius: usize) -> Result<BinaryMask> {
    morph(mask, MorphOp::Erode, radius)
}
