//! Voxel-grid containers shared by every stage: scalar volumes, binary masks
//! and rib label volumes, plus HU thresholding.
//!
//! All grids are stored x-fastest: `index = x + nx * (y + ny * z)`.

use bitvec::prelude::*;

use crate::error::{Error, Result};

/// Highest rib label; 1..=12 are left ribs, 13..=24 right ribs.
pub const MAX_LABEL: u8 = 24;

/// Default bone cut in Hounsfield units.
pub const DEFAULT_HU_THRESHOLD: f64 = 200.0;

/// Grid extent and voxel size. Spacing is kept at NIfTI (f32) precision so a
/// save/load cycle reproduces it exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    dims: [usize; 3],
    spacing: [f32; 3],
}

// spacing is validated finite, so equality is total
impl Eq for Geometry {}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "dimensions must be positive, got {dims:?}"
            )));
        }
        let spacing = spacing.map(|s| s as f32);
        if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "spacing must be positive and finite, got {spacing:?}"
            )));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::InvalidArgument("volume too large".into()))?;
        Ok(Geometry { dims, spacing })
    }

    /// Unit-spacing geometry.
    pub fn isotropic(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, [1.0; 3])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing.map(f64::from)
    }

    pub(crate) fn spacing_f32(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    /// Index of a signed coordinate, or `None` when it falls outside the grid.
    #[inline]
    pub fn checked_index(&self, p: [i64; 3]) -> Option<usize> {
        for a in 0..3 {
            if p[a] < 0 || p[a] >= self.dims[a] as i64 {
                return None;
            }
        }
        Some(self.index(p[0] as usize, p[1] as usize, p[2] as usize))
    }

    /// Voxel-center position in mm (index times spacing).
    #[inline]
    pub fn to_mm(&self, index: usize) -> [f64; 3] {
        let c = self.coords(index);
        let s = self.spacing();
        [c[0] as f64 * s[0], c[1] as f64 * s[1], c[2] as f64 * s[2]]
    }

    pub fn same_grid(&self, other: &Geometry) -> bool {
        self == other
    }

    pub(crate) fn ensure_same(&self, other: &Geometry, what: &str) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GeometryMismatch(format!(
                "{what}: {:?}/{:?} vs {:?}/{:?}",
                self.dims,
                self.spacing,
                other.dims,
                other.spacing
            )))
        }
    }
}

/// Inclusive voxel-index bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

impl BoundingBox {
    pub fn point(p: [usize; 3]) -> Self {
        BoundingBox { min: p, max: p }
    }

    pub fn include(&mut self, p: [usize; 3]) {
        for a in 0..3 {
            self.min[a] = self.min[a].min(p[a]);
            self.max[a] = self.max[a].max(p[a]);
        }
    }

    pub fn extent(&self, axis: usize) -> usize {
        self.max[axis] - self.min[axis] + 1
    }
}

impl BoundingBox {
    /// Grows the box by `pad` voxels on every side, clamped to the grid.
    pub fn padded(&self, pad: usize, geometry: &Geometry) -> BoundingBox {
        let dims = geometry.dims();
        BoundingBox {
            min: self.min.map(|v| v.saturating_sub(pad)),
            max: std::array::from_fn(|a| (self.max[a] + pad).min(dims[a] - 1)),
        }
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| self.min[a] <= p[a] && p[a] <= self.max[a])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueKind {
    Hu,
    Binary,
    Label,
}

impl ValueKind {
    pub fn name(self) -> &'static str {
        match self {
            ValueKind::Hu => "HU",
            ValueKind::Binary => "binary",
            ValueKind::Label => "label",
        }
    }
}

/// Voxel storage in the on-disk scalar type.
#[derive(Debug, Clone, PartialEq)]
pub enum VoxelData {
    U8(Vec<u8>),
    I16(Vec<i16>),
    I32(Vec<i32>),
    F32(Vec<f32>),
}

impl VoxelData {
    pub fn len(&self) -> usize {
        match self {
            VoxelData::U8(v) => v.len(),
            VoxelData::I16(v) => v.len(),
            VoxelData::I32(v) => v.len(),
            VoxelData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, index: usize) -> f64 {
        match self {
            VoxelData::U8(v) => f64::from(v[index]),
            VoxelData::I16(v) => f64::from(v[index]),
            VoxelData::I32(v) => f64::from(v[index]),
            VoxelData::F32(v) => f64::from(v[index]),
        }
    }

    pub fn is_integer(&self) -> bool {
        !matches!(self, VoxelData::F32(_))
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            VoxelData::U8(_) => "uint8",
            VoxelData::I16(_) => "int16",
            VoxelData::I32(_) => "int32",
            VoxelData::F32(_) => "float32",
        }
    }
}

/// Orientation and unit fields carried through a NIfTI round trip.
/// Algorithms never read them; geometry comes from spacing alone.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiMeta {
    pub qfac: f32,
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow_x: [f32; 4],
    pub srow_y: [f32; 4],
    pub srow_z: [f32; 4],
    pub xyzt_units: u8,
}

impl Default for NiftiMeta {
    fn default() -> Self {
        NiftiMeta {
            qfac: 1.0,
            qform_code: 0,
            sform_code: 0,
            quatern: [0.0; 3],
            qoffset: [0.0; 3],
            srow_x: [0.0; 4],
            srow_y: [0.0; 4],
            srow_z: [0.0; 4],
            // millimetres
            xyzt_units: 2,
        }
    }
}

/// Dense scalar volume: CT intensities, a 0/1 mask or rib labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    geometry: Geometry,
    data: VoxelData,
    kind: ValueKind,
    meta: NiftiMeta,
}

impl Volume {
    pub fn new(geometry: Geometry, data: VoxelData, kind: ValueKind) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} voxels for a grid of {}",
                data.len(),
                geometry.len()
            )));
        }
        let (hi, range) = match kind {
            ValueKind::Hu => (f64::INFINITY, ""),
            ValueKind::Binary => (1.0, "{0,1}"),
            ValueKind::Label => (f64::from(MAX_LABEL), "0..=24"),
        };
        if kind != ValueKind::Hu {
            if !data.is_integer() {
                return Err(Error::UnsupportedFormat(format!(
                    "{} volumes need an integer data type",
                    kind.name()
                )));
            }
            if let Some(bad) = (0..data.len())
                .map(|i| data.get(i))
                .find(|&v| v < 0.0 || v > hi)
            {
                return Err(Error::ValueOutOfRange { value: bad, range });
            }
        }
        Ok(Volume {
            geometry,
            data,
            kind,
            meta: NiftiMeta::default(),
        })
    }

    /// HU volume from int16 samples.
    pub fn from_hu(geometry: Geometry, hu: Vec<i16>) -> Result<Self> {
        Self::new(geometry, VoxelData::I16(hu), ValueKind::Hu)
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        let data = (0..mask.len()).map(|i| u8::from(mask.get(i))).collect();
        Volume {
            geometry: mask.geometry,
            data: VoxelData::U8(data),
            kind: ValueKind::Binary,
            meta: NiftiMeta::default(),
        }
    }

    pub fn from_labels(labels: &LabelVolume) -> Self {
        Volume {
            geometry: labels.geometry,
            data: VoxelData::U8(labels.labels.clone()),
            kind: ValueKind::Label,
            meta: NiftiMeta::default(),
        }
    }

    pub fn with_meta(mut self, meta: NiftiMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn data(&self) -> &VoxelData {
        &self.data
    }

    pub fn kind(&self) -> ValueKind {
        self.kind
    }

    pub fn meta(&self) -> &NiftiMeta {
        &self.meta
    }

    pub fn get(&self, index: usize) -> f64 {
        self.data.get(index)
    }

    pub fn into_data(self) -> VoxelData {
        self.data
    }
}

/// One bit per voxel.
#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    geometry: Geometry,
    bits: BitVec<u64, Lsb0>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BinaryMask")
            .field("geometry", &self.geometry)
            .field("foreground", &self.count())
            .finish()
    }
}

impl BinaryMask {
    pub fn empty(geometry: Geometry) -> Self {
        BinaryMask {
            geometry,
            bits: bitvec![u64, Lsb0; 0; geometry.len()],
        }
    }

    pub fn from_fn(geometry: Geometry, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut mask = Self::empty(geometry);
        let [nx, ny, nz] = geometry.dims();
        let mut i = 0;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if f(x, y, z) {
                        mask.bits.set(i, true);
                    }
                    i += 1;
                }
            }
        }
        mask
    }

    pub fn from_indices(geometry: Geometry, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut mask = Self::empty(geometry);
        for i in indices {
            mask.bits.set(i, true);
        }
        mask
    }

    /// Nonzero voxels of a binary or label volume.
    pub fn from_volume(volume: &Volume) -> Result<Self> {
        if volume.kind() == ValueKind::Hu {
            return Err(Error::WrongValueKind {
                expected: "binary",
                found: volume.kind().name(),
            });
        }
        let geometry = *volume.geometry();
        let mut mask = Self::empty(geometry);
        for i in 0..geometry.len() {
            if volume.get(i) != 0.0 {
                mask.bits.set(i, true);
            }
        }
        Ok(mask)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    #[inline]
    pub fn get(&self, index: usize) -> bool {
        self.bits[index]
    }

    #[inline]
    pub fn get_xyz(&self, x: usize, y: usize, z: usize) -> bool {
        self.bits[self.geometry.index(x, y, z)]
    }

    /// Out-of-grid coordinates read as background.
    #[inline]
    pub fn get_signed(&self, p: [i64; 3]) -> bool {
        self.geometry.checked_index(p).is_some_and(|i| self.bits[i])
    }

    #[inline]
    pub fn set(&mut self, index: usize, value: bool) {
        self.bits.set(index, value);
    }

    /// Foreground voxel count.
    pub fn count(&self) -> usize {
        self.bits.count_ones()
    }

    pub fn any(&self) -> bool {
        self.bits.any()
    }

    /// Foreground linear indices in ascending order.
    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter_ones()
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.geometry.ensure_same(&other.geometry, "mask intersection")?;
        let mut bits = self.bits.clone();
        bits &= &other.bits;
        Ok(BinaryMask {
            geometry: self.geometry,
            bits,
        })
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.geometry.ensure_same(&other.geometry, "mask union")?;
        let mut bits = self.bits.clone();
        bits |= &other.bits;
        Ok(BinaryMask {
            geometry: self.geometry,
            bits,
        })
    }

    /// True when every foreground voxel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.geometry == other.geometry && self.iter_ones().all(|i| other.get(i))
    }
}

/// Per-voxel rib labels: 0 background, 1..=12 left ribs and 13..=24 right
/// ribs, each side ordered superior to inferior.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    geometry: Geometry,
    labels: Vec<u8>,
}

impl LabelVolume {
    pub fn new(geometry: Geometry, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != geometry.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for a grid of {}",
                labels.len(),
                geometry.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > MAX_LABEL) {
            return Err(Error::ValueOutOfRange {
                value: f64::from(bad),
                range: "0..=24",
            });
        }
        Ok(LabelVolume { geometry, labels })
    }

    pub fn empty(geometry: Geometry) -> Self {
        LabelVolume {
            geometry,
            labels: vec![0; geometry.len()],
        }
    }

    /// Accepts any volume whose values are integers in 0..=24.
    pub fn from_volume(volume: &Volume) -> Result<Self> {
        let geometry = *volume.geometry();
        let mut labels = Vec::with_capacity(geometry.len());
        for i in 0..geometry.len() {
            let v = volume.get(i);
            if v.fract() != 0.0 || !(0.0..=f64::from(MAX_LABEL)).contains(&v) {
                return Err(Error::ValueOutOfRange {
                    value: v,
                    range: "0..=24",
                });
            }
            labels.push(v as u8);
        }
        Ok(LabelVolume { geometry, labels })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, index: usize) -> u8 {
        self.labels[index]
    }

    /// Panics if `label` exceeds 24.
    #[inline]
    pub fn set(&mut self, index: usize, label: u8) {
        assert!(label <= MAX_LABEL, "label {label} out of range");
        self.labels[index] = label;
    }

    /// Voxel count per label, indexed 0..=24.
    pub fn histogram(&self) -> [usize; MAX_LABEL as usize + 1] {
        let mut h = [0usize; MAX_LABEL as usize + 1];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    /// Nonzero labels with at least one voxel, ascending.
    pub fn present_labels(&self) -> Vec<u8> {
        let h = self.histogram();
        (1..=MAX_LABEL).filter(|&l| h[l as usize] > 0).collect()
    }

    pub fn mask_of(&self, label: u8) -> BinaryMask {
        BinaryMask::from_indices(
            self.geometry,
            self.labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == label)
                .map(|(i, _)| i),
        )
    }

    pub fn foreground(&self) -> BinaryMask {
        BinaryMask::from_indices(
            self.geometry,
            self.labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l != 0)
                .map(|(i, _)| i),
        )
    }
}

/// A box-shaped piece of a larger grid. The local mask keeps the parent
/// spacing; `origin` is the parent index of local voxel (0, 0, 0).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CroppedMask {
    pub origin: [usize; 3],
    pub mask: BinaryMask,
}

impl CroppedMask {
    fn cut(parent: &Geometry, bbox: &BoundingBox, mut keep: impl FnMut(usize) -> bool) -> Self {
        let dims = std::array::from_fn(|a| bbox.extent(a));
        let local = Geometry {
            dims,
            spacing: parent.spacing,
        };
        let mut mask = BinaryMask::empty(local);
        let mut li = 0;
        for z in bbox.min[2]..=bbox.max[2] {
            for y in bbox.min[1]..=bbox.max[1] {
                let row = parent.index(bbox.min[0], y, z);
                for x in 0..dims[0] {
                    if keep(row + x) {
                        mask.bits.set(li, true);
                    }
                    li += 1;
                }
            }
        }
        CroppedMask {
            origin: bbox.min,
            mask,
        }
    }

    /// Parent linear index of a local voxel.
    pub fn to_parent(&self, local: usize, parent: &Geometry) -> usize {
        let c = self.mask.geometry().coords(local);
        parent.index(c[0] + self.origin[0], c[1] + self.origin[1], c[2] + self.origin[2])
    }

    /// Parent voxel coordinates of a local voxel.
    pub fn parent_coords(&self, local: usize) -> [usize; 3] {
        let c = self.mask.geometry().coords(local);
        std::array::from_fn(|a| c[a] + self.origin[a])
    }
}

impl BinaryMask {
    pub fn crop(&self, bbox: &BoundingBox) -> CroppedMask {
        CroppedMask::cut(&self.geometry, bbox, |i| self.bits[i])
    }

    /// Bounds of the foreground, `None` when empty.
    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut bbox: Option<BoundingBox> = None;
        for i in self.iter_ones() {
            let c = self.geometry.coords(i);
            match &mut bbox {
                Some(b) => b.include(c),
                None => bbox = Some(BoundingBox::point(c)),
            }
        }
        bbox
    }
}

impl LabelVolume {
    /// Bounding box per label value (index 0 is background).
    pub fn label_boxes(&self) -> Vec<Option<BoundingBox>> {
        let mut boxes: Vec<Option<BoundingBox>> = vec![None; MAX_LABEL as usize + 1];
        let [nx, ny, _] = self.geometry.dims();
        let mut i = 0;
        for (z, plane) in self.labels.chunks(nx * ny).enumerate() {
            for (y, row) in plane.chunks(nx).enumerate() {
                for (x, &l) in row.iter().enumerate() {
                    if l != 0 {
                        let c = [x, y, z];
                        match &mut boxes[l as usize] {
                            Some(b) => b.include(c),
                            slot @ None => *slot = Some(BoundingBox::point(c)),
                        }
                    }
                    i += 1;
                }
            }
        }
        debug_assert_eq!(i, self.labels.len());
        boxes
    }

    pub fn crop_label(&self, label: u8, bbox: &BoundingBox) -> CroppedMask {
        CroppedMask::cut(&self.geometry, bbox, |i| self.labels[i] == label)
    }
}

/// Voxels with HU at or above `hu` (inclusive cut).
pub fn threshold_hu(volume: &Volume, hu: f64) -> Result<BinaryMask> {
    if volume.kind() != ValueKind::Hu {
        return Err(Error::WrongValueKind {
            expected: "HU",
            found: volume.kind().name(),
        });
    }
    let geometry = *volume.geometry();
    let mut mask = BinaryMask::empty(geometry);
    match volume.data() {
        VoxelData::I16(v) => fill_threshold(&mut mask, v, |x| f64::from(x) >= hu),
        VoxelData::U8(v) => fill_threshold(&mut mask, v, |x| f64::from(x) >= hu),
        VoxelData::I32(v) => fill_threshold(&mut mask, v, |x| f64::from(x) >= hu),
        VoxelData::F32(v) => fill_threshold(&mut mask, v, |x| f64::from(x) >= hu),
    }
    Ok(mask)
}

fn fill_threshold<T: Copy>(mask: &mut BinaryMask, data: &[T], keep: impl Fn(T) -> bool) {
    for (i, &v) in data.iter().enumerate() {
        if keep(v) {
            mask.bits.set(i, true);
        }
    }
}
