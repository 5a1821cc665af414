//! Volume-to-point-cloud conversion and the fixed-size batching, vote merging,
//! neighborhood features and augmentation that a point-based labeling model
//! consumes.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Geometry, LabelVolume, MAX_LABEL};

pub const DEFAULT_BATCH_SIZE: usize = 30_000;
pub const DEFAULT_ARP_RADIUS: f64 = 0.08;
pub const DEFAULT_ARP_NEIGHBORS: usize = 16;

/// Centering and scaling that produced a normalized cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormFrame {
    pub center: [f64; 3],
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub points: Vec<[f64; 3]>,
    /// Linear voxel index each point came from.
    pub source_index: Option<Vec<usize>>,
    pub labels: Option<Vec<u8>>,
    /// Set once the cloud is centered and scaled into [-1, 1].
    pub frame: Option<NormFrame>,
}

impl PointSet {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        PointSet {
            points,
            source_index: None,
            labels: None,
            frame: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.frame.is_some()
    }

    /// Centers on the centroid and divides by the largest absolute coordinate.
    pub fn normalized(mut self) -> Self {
        if self.points.is_empty() {
            return self;
        }
        let n = self.points.len() as f64;
        let mut center = [0.0; 3];
        for p in &self.points {
            for a in 0..3 {
                center[a] += p[a];
            }
        }
        center = center.map(|c| c / n);
        let mut scale = 0.0f64;
        for p in &self.points {
            for a in 0..3 {
                scale = scale.max((p[a] - center[a]).abs());
            }
        }
        if scale == 0.0 {
            scale = 1.0;
        }
        for p in &mut self.points {
            for a in 0..3 {
                p[a] = (p[a] - center[a]) / scale;
            }
        }
        self.frame = Some(NormFrame { center, scale });
        self
    }

    /// Attaches the label of each point's source voxel.
    pub fn with_labels_from(mut self, labels: &LabelVolume) -> Result<Self> {
        let src = self
            .source_index
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("points carry no source voxel indices".into()))?;
        if let Some(&bad) = src.iter().find(|&&i| i >= labels.geometry().len()) {
            return Err(Error::ShapeMismatch(format!("source index {bad} outside label grid")));
        }
        self.labels = Some(src.iter().map(|&i| labels.get(i)).collect());
        Ok(self)
    }

    /// Rebuilds the occupancy mask from the recorded source indices.
    pub fn to_mask(&self, geometry: Geometry) -> Result<BinaryMask> {
        let src = self
            .source_index
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("points carry no source voxel indices".into()))?;
        if let Some(&bad) = src.iter().find(|&&i| i >= geometry.len()) {
            return Err(Error::ShapeMismatch(format!("source index {bad} outside grid")));
        }
        Ok(BinaryMask::from_indices(geometry, src.iter().copied()))
    }
}

/// One point per foreground voxel at its index coordinates.
pub fn mask_to_points(mask: &BinaryMask, normalize: bool) -> Result<PointSet> {
    let geometry = mask.geometry();
    let source: Vec<usize> = mask.iter_ones().collect();
    if source.is_empty() {
        return Err(Error::EmptyMask);
    }
    let points = source
        .iter()
        .map(|&i| geometry.coords(i).map(|c| c as f64))
        .collect();
    let set = PointSet {
        points,
        source_index: Some(source),
        labels: None,
        frame: None,
    };
    Ok(if normalize { set.normalized() } else { set })
}

/// Fixed-size batches covering every point at least once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchSet {
    pub batch_size: usize,
    pub source_len: usize,
    /// Point indices per batch, each exactly `batch_size` long.
    pub batches: Vec<Vec<usize>>,
    /// Points resampled to fill the final batch, in fill order.
    pub duplicates: Vec<usize>,
}

/// Shuffles with a seeded RNG, splits sequentially, then tops up the last
/// batch by sampling points that already sit in other batches.
pub fn make_batches(points: &PointSet, batch_size: usize, seed: u64) -> Result<BatchSet> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    let n = points.len();
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    let last_start = (batches.len() - 1) * batch_size;
    let need = batch_size - batches.last().unwrap().len();
    let mut duplicates = Vec::with_capacity(need);
    if need > 0 {
        let others = &order[..last_start];
        if others.len() >= need {
            duplicates.extend(sample(&mut rng, others.len(), need).into_iter().map(|k| others[k]));
        } else {
            // a lone partial batch has no other points to draw from
            duplicates.extend((0..need).map(|_| order[rng.random_range(0..n)]));
        }
        batches.last_mut().unwrap().extend_from_slice(&duplicates);
    }
    Ok(BatchSet {
        batch_size,
        source_len: n,
        batches,
        duplicates,
    })
}

/// Modal label per source point over all its batch occurrences; ties go to
/// the smaller label.
pub fn merge_predictions(batches: &BatchSet, preds: &[Vec<u8>]) -> Result<Vec<u8>> {
    if preds.len() != batches.batches.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} prediction batches for {} point batches",
            preds.len(),
            batches.batches.len()
        )));
    }
    let mut votes: Vec<(usize, u8)> = Vec::with_capacity(batches.batches.len() * batches.batch_size);
    for (b, (batch, pred)) in batches.batches.iter().zip(preds).enumerate() {
        if batch.len() != pred.len() {
            return Err(Error::ShapeMismatch(format!(
                "batch {b}: {} predictions for {} points",
                pred.len(),
                batch.len()
            )));
        }
        votes.extend(batch.iter().copied().zip(pred.iter().copied()));
    }
    votes.sort_unstable();

    let mut out = vec![0u8; batches.source_len];
    let mut seen = vec![false; batches.source_len];
    let mut i = 0;
    while i < votes.len() {
        let point = votes[i].0;
        if point >= out.len() {
            return Err(Error::ShapeMismatch(format!("point index {point} out of range")));
        }
        let (mut best, mut best_count) = (votes[i].1, 0usize);
        while i < votes.len() && votes[i].0 == point {
            let label = votes[i].1;
            let mut count = 0;
            while i < votes.len() && votes[i] == (point, label) {
                count += 1;
                i += 1;
            }
            // labels arrive ascending, so strict > keeps the smallest on ties
            if count > best_count {
                best = label;
                best_count = count;
            }
        }
        out[point] = best;
        seen[point] = true;
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::ShapeMismatch(format!("point {missing} appears in no batch")));
    }
    Ok(out)
}

/// Absolute coordinates followed by `k` neighbor offsets per point.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub radius: f64,
    pub k: usize,
    /// Row-major, `width()` values per point.
    pub values: Vec<f64>,
}

impl FeatureSet {
    pub fn width(&self) -> usize {
        3 + 3 * self.k
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.width()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.width()..(i + 1) * self.width()]
    }

    pub fn offsets(&self, i: usize) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.row(i)[3..].chunks(3).map(|c| [c[0], c[1], c[2]])
    }
}

/// Ball-query features: for each point, up to `k` other points within
/// `radius`, drawn uniformly when more are available, padded with zero
/// offsets when fewer.
pub fn arp_features(points: &PointSet, radius: f64, k: usize, seed: u64) -> Result<FeatureSet> {
    if !points.is_normalized() {
        return Err(Error::InvalidArgument("features need a normalized cloud".into()));
    }
    if !(radius > 0.0) || k == 0 {
        return Err(Error::InvalidArgument(format!("radius {radius} and k {k} must be positive")));
    }
    let cell = |p: &[f64; 3]| p.map(|c| (c / radius).floor() as i64);
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in points.points.iter().enumerate() {
        grid.entry(cell(p)).or_default().push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = 3 + 3 * k;
    let mut values = Vec::with_capacity(points.len() * width);
    let r2 = radius * radius;
    let mut neighbors = Vec::new();
    for (i, p) in points.points.iter().enumerate() {
        neighbors.clear();
        let c = cell(p);
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let Some(bucket) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else {
                        continue;
                    };
                    for &j in bucket {
                        let q = &points.points[j];
                        let d2 = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2);
                        if j != i && d2 <= r2 {
                            neighbors.push(j);
                        }
                    }
                }
            }
        }
        neighbors.sort_unstable();
        if neighbors.len() > k {
            let mut picked: Vec<usize> = sample(&mut rng, neighbors.len(), k)
                .into_iter()
                .map(|s| neighbors[s])
                .collect();
            picked.sort_unstable();
            neighbors = picked;
        }
        values.extend_from_slice(p);
        for &j in &neighbors {
            let q = &points.points[j];
            values.extend_from_slice(&[q[0] - p[0], q[1] - p[1], q[2] - p[2]]);
        }
        values.resize(values.len() + 3 * (k - neighbors.len()), 0.0);
    }
    Ok(FeatureSet { radius, k, values })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub scale_range: (f64, f64),
    pub translate_range: (f64, f64),
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            scale_range: (0.8, 1.2),
            translate_range: (-0.1, 0.1),
            jitter_sigma: 0.01,
            jitter_clip: 0.05,
        }
    }
}

/// Random isotropic scale, per-axis shift and clipped Gaussian jitter.
pub fn augment(points: &PointSet, params: &AugmentParams, seed: u64) -> Result<PointSet> {
    if !points.is_normalized() {
        return Err(Error::InvalidArgument("augmentation needs a normalized cloud".into()));
    }
    let AugmentParams {
        scale_range: (s_lo, s_hi),
        translate_range: (t_lo, t_hi),
        jitter_sigma,
        jitter_clip,
    } = *params;
    let well_formed = s_lo <= s_hi
        && t_lo <= t_hi
        && jitter_sigma >= 0.0
        && jitter_clip >= 0.0
        && [s_lo, s_hi, t_lo, t_hi, jitter_sigma, jitter_clip].iter().all(|v| v.is_finite());
    if !well_formed {
        return Err(Error::InvalidArgument(format!("malformed augmentation parameters {params:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = rng.random_range(s_lo..=s_hi);
    let shift: [f64; 3] = std::array::from_fn(|_| rng.random_range(t_lo..=t_hi));
    let noise = Normal::new(0.0, jitter_sigma)
        .map_err(|e| Error::InvalidArgument(format!("jitter sigma: {e}")))?;
    let mut out = points.clone();
    for p in &mut out.points {
        for a in 0..3 {
            let jitter = noise.sample(&mut rng).clamp(-jitter_clip, jitter_clip);
            p[a] = p[a] * scale + shift[a] + jitter;
        }
    }
    Ok(out)
}

const TABLE_MAGIC: &str = "ribkit-points";

/// Writes the interchange table: a text header line, little-endian f32 xyz
/// triples, then one u8 label per point when labels are present.
pub fn write_point_table(points: &PointSet, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(
        w,
        "{TABLE_MAGIC} count={} labels={} normalized={}",
        points.len(),
        u8::from(points.labels.is_some()),
        u8::from(points.is_normalized())
    )?;
    let mut buf = Vec::with_capacity(points.len() * 12);
    for p in &points.points {
        for c in p {
            buf.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    if let Some(labels) = &points.labels {
        w.write_all(labels)?;
    }
    Ok(())
}

/// Reads a table written by [`write_point_table`]. Source indices and the
/// normalization frame are not stored; a normalized table comes back with a
/// unit frame.
pub fn read_point_table(r: &mut impl BufRead) -> Result<PointSet> {
    let mut header = String::new();
    r.read_line(&mut header)
        .map_err(|e| Error::Parse(format!("point table header: {e}")))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some(TABLE_MAGIC) {
        return Err(Error::UnsupportedFormat("not a point table".into()));
    }
    let mut count = None;
    let mut labels = false;
    let mut normalized = false;
    for f in fields {
        let (k, v) = f
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("bad header field {f:?}")))?;
        let bad = || Error::Parse(format!("bad header value {f:?}"));
        match k {
            "count" => count = Some(v.parse::<usize>().map_err(|_| bad())?),
            "labels" => labels = v == "1",
            "normalized" => normalized = v == "1",
            _ => {}
        }
    }
    let count = count.ok_or_else(|| Error::Parse("header lacks count".into()))?;
    let mut raw = vec![0u8; count * 12];
    r.read_exact(&mut raw)
        .map_err(|e| Error::Parse(format!("point payload: {e}")))?;
    let points = raw
        .chunks_exact(12)
        .map(|c| {
            std::array::from_fn(|a| f64::from(f32::from_le_bytes(c[4 * a..4 * a + 4].try_into().unwrap())))
        })
        .collect();
    let labels = if labels {
        let mut l = vec![0u8; count];
        r.read_exact(&mut l)
            .map_err(|e| Error::Parse(format!("label payload: {e}")))?;
        if let Some(&bad) = l.iter().find(|&&x| x > MAX_LABEL) {
            return Err(Error::ValueOutOfRange {
                value: f64::from(bad),
                range: "0..=24",
            });
        }
        Some(l)
    } else {
        None
    };
    Ok(PointSet {
        points,
        source_index: None,
        labels,
        frame: normalized.then_some(NormFrame {
            center: [0.0; 3],
            scale: 1.0,
        }),
    })
}
