//! Rib instance labeling from a denoised bone mask.
//!
//! The built-in labeler strips the vertebral column and shoulder girdle with
//! erosion plus component heuristics, then numbers the remaining ribs per
//! side from superior to inferior. Superior means larger z index; left means
//! smaller x index (image coordinates, not patient anatomy).

use std::path::Path;

use crate::diagnostics::Warning;
use crate::error::{Error, Result};
use crate::morphology::{connected_components, dilate, erode, Connectivity};
use crate::nifti;
use crate::volume::{BinaryMask, LabelVolume, MAX_LABEL};


/// Ribs per side.
pub const PAIRS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsolateConfig {
    /// Components whose centroid x lies within this fraction of the half-width
    /// around the mid-plane are treated as spine.
    pub spine_band_frac: f64,
    /// Components taller than this fraction of the scanned z range are spine
    /// or sternum.
    pub spine_z_extent_frac: f64,
    /// Shoulder-girdle rule: centroid in the top fraction of the foreground
    /// z range...
    pub shoulder_top_frac: f64,
    /// ...and wider than this fraction of the grid x extent.
    pub shoulder_width_frac: f64,
    pub erode_radius: usize,
    pub dilate_radius: usize,
}

impl Default for IsolateConfig {
    fn default() -> Self {
        IsolateConfig {
            spine_band_frac: 0.12,
            spine_z_extent_frac: 0.6,
            shoulder_top_frac: 0.15,
            shoulder_width_frac: 0.35,
            erode_radius: 1,
            dilate_radius: 3,
        }
    }
}

/// Removes the vertebral column and shoulder girdle, leaving rib voxels.
///
/// Erosion first breaks thin costovertebral bridges; spine and shoulder
/// components are then dropped from the eroded mask, and the survivors are
/// dilated back and clipped to the input.
pub fn isolate_ribs(mask: &BinaryMask, cfg: &IsolateConfig) -> Result<BinaryMask> {
    let geometry = *mask.geometry();
    let [nx, _, nz] = geometry.dims();
    let Some(fg_box) = mask.bounding_box() else {
        return Err(Error::NoRibsRemain);
    };
    let eroded = erode(mask, cfg.erode_radius)?;
    let cc = connected_components(&eroded, Connectivity::TwentySix);

    let x_mid = (nx as f64 - 1.0) / 2.0;
    let band = cfg.spine_band_frac * nx as f64 / 2.0;
    let fg_z_lo = fg_box.min[2] as f64;
    let fg_z_span = (fg_box.max[2] - fg_box.min[2]) as f64;
    let shoulder_z = fg_z_lo + (1.0 - cfg.shoulder_top_frac) * fg_z_span;

    let keep: Vec<bool> = (1..=cc.count() as u32)
        .map(|id| {
            let c = cc.centroid(id);
            let b = cc.bbox(id);
            let spine = (c[0] - x_mid).abs() < band
                || b.extent(2) as f64 > cfg.spine_z_extent_frac * nz as f64;
            let shoulder =
                c[2] > shoulder_z && b.extent(0) as f64 > cfg.shoulder_width_frac * nx as f64;
            !(spine || shoulder)
        })
        .collect();
    if !keep.iter().any(|&k| k) {
        return Err(Error::NoRibsRemain);
    }
    let survivors = cc.mask_where(|id| keep[id as usize - 1]);
    dilate(&survivors, cfg.dilate_radius)?.and(mask)
}

/// How side-local rib ranks map to label values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelConvention {
    /// Left ribs 1..=12, right ribs 13..=24.
    #[default]
    SideBlocks,
    /// Left rib k gets 2k-1, right rib k gets 2k.
    Interleaved,
}

impl LabelConvention {
    pub fn label(self, right: bool, rank: usize) -> u8 {
        let rank = rank as u8;
        match (self, right) {
            (LabelConvention::SideBlocks, false) => rank,
            (LabelConvention::SideBlocks, true) => PAIRS as u8 + rank,
            (LabelConvention::Interleaved, false) => 2 * rank - 1,
            (LabelConvention::Interleaved, true) => 2 * rank,
        }
    }

    /// Side and 1-based rank of a label.
    pub fn side_rank(self, label: u8) -> (bool, usize) {
        match self {
            LabelConvention::SideBlocks if label as usize > PAIRS => (true, label as usize - PAIRS),
            LabelConvention::SideBlocks => (false, label as usize),
            LabelConvention::Interleaved => (label.is_multiple_of(2), label.div_ceil(2) as usize),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssignConfig {
    pub expected_pairs: usize,
    /// Pieces closer than about twice this many voxels are treated as one rib
    /// (fracture gaps). Zero disables grouping.
    pub join_radius: usize,
    /// Sagittal mid-plane in x index units; defaults to the grid center.
    pub mid_plane: Option<f64>,
    pub convention: LabelConvention,
}

impl Default for AssignConfig {
    fn default() -> Self {
        AssignConfig {
            expected_pairs: PAIRS,
            join_radius: 2,
            mid_plane: None,
            convention: LabelConvention::SideBlocks,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelingOutcome {
    pub labels: LabelVolume,
    /// Rib groups found on each side before capping at 12.
    pub left: usize,
    pub right: usize,
    pub warnings: Vec<Warning>,
}

/// Numbers rib components per side, superior to inferior.
pub fn assign_anatomical_labels(ribs: &BinaryMask, cfg: &AssignConfig) -> Result<LabelingOutcome> {
    let geometry = *ribs.geometry();
    if !ribs.any() {
        return Err(Error::EmptyMask);
    }
    let grouping = if cfg.join_radius > 0 {
        connected_components(&dilate(ribs, cfg.join_radius)?, Connectivity::TwentySix)
    } else {
        connected_components(ribs, Connectivity::TwentySix)
    };

    // centroid and first voxel over the rib voxels of each group
    let groups = grouping.count();
    let mut sums = vec![[0.0f64; 3]; groups];
    let mut counts = vec![0usize; groups];
    let mut first = vec![usize::MAX; groups];
    for i in ribs.iter_ones() {
        let g = grouping.id(i) as usize - 1;
        let c = geometry.coords(i);
        for a in 0..3 {
            sums[g][a] += c[a] as f64;
        }
        counts[g] += 1;
        first[g] = first[g].min(i);
    }

    let mid = cfg
        .mid_plane
        .unwrap_or((geometry.dims()[0] as f64 - 1.0) / 2.0);
    let mut left = Vec::new();
    let mut right = Vec::new();
    for g in 0..groups {
        let c = sums[g].map(|s| s / counts[g] as f64);
        let entry = (c[2], first[g], g);
        if c[0] < mid {
            left.push(entry);
        } else {
            right.push(entry);
        }
    }
    let superior_first = |a: &(f64, usize, usize), b: &(f64, usize, usize)| {
        b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
    };
    left.sort_by(superior_first);
    right.sort_by(superior_first);

    let mut label_of_group = vec![0u8; groups];
    for (side, right_side) in [(&left, false), (&right, true)] {
        for (rank, &(_, _, g)) in side.iter().enumerate().take(PAIRS) {
            label_of_group[g] = cfg.convention.label(right_side, rank + 1);
        }
    }

    let mut labels = LabelVolume::empty(geometry);
    for i in ribs.iter_ones() {
        labels.set(i, label_of_group[grouping.id(i) as usize - 1]);
    }

    let mut warnings = Vec::new();
    if left.len() != cfg.expected_pairs || right.len() != cfg.expected_pairs {
        warnings.push(Warning::RibCountMismatch {
            left: left.len(),
            right: right.len(),
        });
    }
    Ok(LabelingOutcome {
        labels,
        left: left.len(),
        right: right.len(),
        warnings,
    })
}

/// Label-wise component cleanup: per label, keeps the largest component and
/// any component with at least `frac` times its size.
pub fn label_ccd(labels: &LabelVolume, frac: f64) -> Result<LabelVolume> {
    if !(0.0..=1.0).contains(&frac) {
        return Err(Error::InvalidArgument(format!("fraction {frac} outside [0, 1]")));
    }
    let geometry = *labels.geometry();
    let mut out = labels.clone();
    for (label, bbox) in labels.label_boxes().into_iter().enumerate().skip(1) {
        let Some(bbox) = bbox else { continue };
        let crop = labels.crop_label(label as u8, &bbox);
        let cc = connected_components(&crop.mask, Connectivity::TwentySix);
        if cc.count() < 2 {
            continue;
        }
        let largest = cc.size(1) as f64;
        for local in crop.mask.iter_ones() {
            let id = cc.id(local);
            if (cc.size(id) as f64) < frac * largest {
                out.set(crop.to_parent(local, &geometry), 0);
            }
        }
    }
    Ok(out)
}

/// Replaceable labeling stage.
pub trait Labeler: Send + Sync {
    fn label(&self, mask: &BinaryMask) -> Result<LabelingOutcome>;
}

/// Spine removal followed by side/height ordering.
#[derive(Debug, Clone, Default)]
pub struct MorphologicalLabeler {
    pub isolate: IsolateConfig,
    pub assign: AssignConfig,
}

impl Labeler for MorphologicalLabeler {
    fn label(&self, mask: &BinaryMask) -> Result<LabelingOutcome> {
        let ribs = isolate_ribs(mask, &self.isolate)?;
        assign_anatomical_labels(&ribs, &self.assign)
    }
}

/// Replays labels produced elsewhere (for example by a trained model),
/// restricted to the input foreground.
#[derive(Debug, Clone)]
pub struct OracleLabeler {
    stored: LabelVolume,
    expected_pairs: usize,
    convention: LabelConvention,
}

impl OracleLabeler {
    pub fn new(stored: LabelVolume) -> Self {
        OracleLabeler {
            stored,
            expected_pairs: PAIRS,
            convention: LabelConvention::SideBlocks,
        }
    }

    pub fn stored(&self) -> &LabelVolume {
        &self.stored
    }
}

/// Loads stored labels from a NIfTI file.
pub fn oracle_labeler(path: impl AsRef<Path>) -> Result<OracleLabeler> {
    let volume = nifti::load_volume(path)?;
    Ok(OracleLabeler::new(LabelVolume::from_volume(&volume)?))
}

impl Labeler for OracleLabeler {
    fn label(&self, mask: &BinaryMask) -> Result<LabelingOutcome> {
        self.stored
            .geometry()
            .ensure_same(mask.geometry(), "stored labels vs input mask")?;
        let mut labels = LabelVolume::empty(*mask.geometry());
        for i in mask.iter_ones() {
            labels.set(i, self.stored.get(i));
        }
        let (mut left, mut right) = (0, 0);
        for l in labels.present_labels() {
            if self.convention.side_rank(l).0 {
                right += 1;
            } else {
                left += 1;
            }
        }
        let warnings = if left != self.expected_pairs || right != self.expected_pairs {
            vec![Warning::RibCountMismatch { left, right }]
        } else {
            Vec::new()
        };
        Ok(LabelingOutcome {
            labels,
            left,
            right,
            warnings,
        })
    }
}

const _: () = assert!(MAX_LABEL as usize == 2 * PAIRS);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Geometry, Volume};

    /// Horizontal bar along y at (x, z), `len` voxels long, 3x3 cross-section.
    fn bar(g: &Geometry, x: usize, z: usize, y0: usize, len: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for dz in 0..3 {
            for dx in 0..3 {
                for y in y0..y0 + len {
                    out.push(g.index(x + dx, y, z + dz));
                }
            }
        }
        out
    }

    #[test]
    fn single_left_rib() {
        let g = Geometry::isotropic([40, 30, 20]).unwrap();
        let ribs = BinaryMask::from_indices(g, bar(&g, 5, 5, 2, 20));
        let out = assign_anatomical_labels(&ribs, &AssignConfig::default()).unwrap();
        assert_eq!(out.labels.present_labels(), vec![1]);
        assert_eq!((out.left, out.right), (1, 0));
        assert_eq!(out.warnings, vec![Warning::RibCountMismatch { left: 1, right: 0 }]);
    }

    #[test]
    fn ordering_and_mirroring() {
        let g = Geometry::isotropic([40, 30, 40]).unwrap();
        let mut idx = Vec::new();
        idx.extend(bar(&g, 3, 30, 2, 20)); // left, top
        idx.extend(bar(&g, 3, 10, 2, 20)); // left, lower
        idx.extend(bar(&g, 30, 20, 2, 20)); // right
        let ribs = BinaryMask::from_indices(g, idx);
        let out = assign_anatomical_labels(&ribs, &AssignConfig::default()).unwrap();
        let l = &out.labels;
        assert_eq!(l.get(g.index(4, 5, 31)), 1);
        assert_eq!(l.get(g.index(4, 5, 11)), 2);
        assert_eq!(l.get(g.index(31, 5, 21)), 13);

        let mirrored = BinaryMask::from_fn(g, |x, y, z| ribs.get_xyz(39 - x, y, z));
        let m = assign_anatomical_labels(&mirrored, &AssignConfig::default()).unwrap();
        assert_eq!(m.labels.get(g.index(35, 5, 31)), 13);
        assert_eq!(m.labels.get(g.index(35, 5, 11)), 14);
        assert_eq!(m.labels.get(g.index(8, 5, 21)), 1);

        let interleaved = AssignConfig {
            convention: LabelConvention::Interleaved,
            ..AssignConfig::default()
        };
        let i = assign_anatomical_labels(&ribs, &interleaved).unwrap();
        assert_eq!(i.labels.get(g.index(4, 5, 11)), 3);
        assert_eq!(i.labels.get(g.index(31, 5, 21)), 2);
    }

    #[test]
    fn close_fragments_share_a_label() {
        let g = Geometry::isotropic([40, 40, 20]).unwrap();
        let mut idx = bar(&g, 3, 5, 2, 10);
        idx.extend(bar(&g, 3, 5, 15, 10)); // gap of 3 voxels
        let ribs = BinaryMask::from_indices(g, idx);
        let out = assign_anatomical_labels(&ribs, &AssignConfig::default()).unwrap();
        assert_eq!(out.labels.present_labels(), vec![1]);
        let split = assign_anatomical_labels(
            &ribs,
            &AssignConfig {
                join_radius: 0,
                ..AssignConfig::default()
            },
        )
        .unwrap();
        assert_eq!(split.labels.present_labels(), vec![1, 2]);
    }

    #[test]
    fn empty_input() {
        let g = Geometry::isotropic([4, 4, 4]).unwrap();
        assert!(matches!(
            assign_anatomical_labels(&BinaryMask::empty(g), &AssignConfig::default()),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn spine_only_leaves_nothing() {
        let g = Geometry::isotropic([40, 40, 60]).unwrap();
        let spine = BinaryMask::from_fn(g, |x, y, _| {
            let dx = x as f64 - 19.5;
            let dy = y as f64 - 30.0;
            dx * dx + dy * dy <= 16.0
        });
        assert!(matches!(
            isolate_ribs(&spine, &IsolateConfig::default()),
            Err(Error::NoRibsRemain)
        ));
    }

    #[test]
    fn label_ccd_drops_small_pieces() {
        let g = Geometry::isotropic([40, 40, 20]).unwrap();
        let mut lv = LabelVolume::empty(g);
        // 8000 voxels
        for z in 0..10 {
            for y in 0..20 {
                for x in 0..40 {
                    lv.set(g.index(x, y, z), 5);
                }
            }
        }
        // 300 voxels, far away
        for z in 14..17 {
            for y in 25..35 {
                for x in 0..10 {
                    lv.set(g.index(x, y, z), 5);
                }
            }
        }
        let out = label_ccd(&lv, 0.1).unwrap();
        assert_eq!(out.histogram()[5], 8000);
        assert_eq!(label_ccd(&out, 0.1).unwrap(), out);
        // threshold below 300/8000 keeps it
        assert_eq!(label_ccd(&lv, 0.03).unwrap(), lv);
        assert!(label_ccd(&lv, 1.5).is_err());
    }

    #[test]
    fn oracle_masks_and_checks_geometry() {
        let g = Geometry::isotropic([4, 4, 4]).unwrap();
        let mut stored = LabelVolume::empty(g);
        stored.set(0, 3);
        stored.set(1, 15);
        let oracle = OracleLabeler::new(stored);
        let mask = BinaryMask::from_indices(g, [1, 2]);
        let out = oracle.label(&mask).unwrap();
        assert_eq!(out.labels.get(0), 0);
        assert_eq!(out.labels.get(1), 15);
        assert_eq!((out.left, out.right), (0, 1));

        let other = Geometry::isotropic([4, 4, 5]).unwrap();
        assert!(matches!(
            oracle.label(&BinaryMask::empty(other)),
            Err(Error::GeometryMismatch(_))
        ));
    }

    #[test]
    fn oracle_file_range_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.nii");
        let g = Geometry::isotropic([2, 2, 2]).unwrap();
        let v = Volume::new(g, crate::volume::VoxelData::U8(vec![0, 25, 0, 0, 0, 0, 0, 0]), crate::ValueKind::Hu).unwrap();
        nifti::save_volume(&v, &path).unwrap();
        assert!(matches!(oracle_labeler(&path), Err(Error::ValueOutOfRange { .. })));
    }

    #[test]
    fn conventions_invert() {
        for conv in [LabelConvention::SideBlocks, LabelConvention::Interleaved] {
            for right in [false, true] {
                for rank in 1..=PAIRS {
                    assert_eq!(conv.side_rank(conv.label(right, rank)), (right, rank));
                }
            }
        }
    }
}
