//! Per-rib anatomical centerlines: a single-path TEASAR variant.
//!
//! Root is the geodesically farthest voxel from the first raster voxel; the
//! path runs root to the farthest voxel from the root through a penalty field
//! that is zero on the distance-transform ridge and grows toward the surface.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;

use crate::diagnostics::Warning;
use crate::error::{Error, Result};
use crate::morphology::{connected_components, edt, Connectivity};
use crate::volume::{BinaryMask, CroppedMask, Geometry, LabelVolume, MAX_LABEL};

pub const DEFAULT_PENALTY_SCALE: f64 = 5000.0;
pub const DEFAULT_PENALTY_EXPONENT: f64 = 16.0;
pub const DEFAULT_SMOOTH_WINDOW: usize = 11;
pub const DEFAULT_RESAMPLE_POINTS: usize = 500;

/// Ordered 3D points in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub label: u8,
    pub points: Vec<[f64; 3]>,
}

impl Polyline {
    pub fn new(label: u8, points: Vec<[f64; 3]>) -> Self {
        Polyline { label, points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn arc_length(&self) -> f64 {
        self.points.windows(2).map(|w| dist(w[0], w[1])).sum()
    }
}

#[inline]
pub(crate) fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Penalty per voxel of one component: `scale * (1 - dbf / max_dbf)^exponent`
/// on foreground, zero elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyField {
    geometry: Geometry,
    pub scale: f64,
    pub exponent: f64,
    values: Vec<f64>,
}

impl PenaltyField {
    pub fn new(component: &BinaryMask, scale: f64, exponent: f64) -> Self {
        let dbf = edt(component);
        let max = dbf.max();
        let values = dbf
            .values()
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                if component.get(i) && max > 0.0 {
                    scale * (1.0 - d / max).powf(exponent)
                } else {
                    0.0
                }
            })
            .collect();
        PenaltyField {
            geometry: *component.geometry(),
            scale,
            exponent,
            values,
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, index: usize) -> f64 {
        self.values[index]
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    cost: f64,
    index: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // BinaryHeap is a max-heap: cheapest first, then smallest index
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then(other.index.cmp(&self.index))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Dijkstra {
    cost: Vec<f64>,
    prev: Vec<usize>,
}

/// Single-source shortest paths over the 26-connected foreground. Edge weight
/// is the mm step length plus the destination penalty, if any.
fn dijkstra(mask: &BinaryMask, source: usize, penalty: Option<&PenaltyField>) -> Dijkstra {
    let geometry = *mask.geometry();
    let spacing = geometry.spacing();
    let steps: Vec<([i64; 3], f64)> = Connectivity::TwentySix
        .offsets()
        .into_iter()
        .map(|d| {
            let mm = (0..3).map(|a| (d[a] as f64 * spacing[a]).powi(2)).sum::<f64>().sqrt();
            (d, mm)
        })
        .collect();

    let mut cost = vec![f64::INFINITY; geometry.len()];
    let mut prev = vec![usize::MAX; geometry.len()];
    let mut done = vec![false; geometry.len()];
    let mut heap = BinaryHeap::new();
    cost[source] = 0.0;
    heap.push(Entry {
        cost: 0.0,
        index: source,
    });
    while let Some(Entry { cost: c, index }) = heap.pop() {
        if done[index] {
            continue;
        }
        done[index] = true;
        let p = geometry.coords(index).map(|v| v as i64);
        for &(d, mm) in &steps {
            let Some(j) = geometry.checked_index([p[0] + d[0], p[1] + d[1], p[2] + d[2]]) else {
                continue;
            };
            if done[j] || !mask.get(j) {
                continue;
            }
            let next = c + mm + penalty.map_or(0.0, |f| f.get(j));
            if next < cost[j] {
                cost[j] = next;
                prev[j] = index;
                heap.push(Entry {
                    cost: next,
                    index: j,
                });
            }
        }
    }
    Dijkstra { cost, prev }
}

/// Reachable voxel with the largest cost; ties go to the smallest index.
fn farthest(costs: &[f64]) -> usize {
    let mut best = 0;
    let mut best_cost = f64::NEG_INFINITY;
    for (i, &c) in costs.iter().enumerate() {
        if c.is_finite() && c > best_cost {
            best = i;
            best_cost = c;
        }
    }
    best
}

/// Farthest voxel (uniform mm geodesic) from the first foreground voxel in
/// raster order.
pub fn find_root(component: &BinaryMask) -> Result<usize> {
    let start = component.iter_ones().next().ok_or(Error::EmptyComponent)?;
    Ok(farthest(&dijkstra(component, start, None).cost))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterlineConfig {
    pub penalty_scale: f64,
    pub penalty_exponent: f64,
    pub smooth_window: usize,
    pub resample_points: usize,
}

impl Default for CenterlineConfig {
    fn default() -> Self {
        CenterlineConfig {
            penalty_scale: DEFAULT_PENALTY_SCALE,
            penalty_exponent: DEFAULT_PENALTY_EXPONENT,
            smooth_window: DEFAULT_SMOOTH_WINDOW,
            resample_points: DEFAULT_RESAMPLE_POINTS,
        }
    }
}

/// Raw path as voxel indices of `component`, root first.
pub fn centerline_voxels(component: &BinaryMask, cfg: &CenterlineConfig) -> Result<Vec<usize>> {
    let root = find_root(component)?;
    let target = farthest(&dijkstra(component, root, None).cost);
    let penalty = PenaltyField::new(component, cfg.penalty_scale, cfg.penalty_exponent);
    let paths = dijkstra(component, root, Some(&penalty));
    let mut path = vec![target];
    let mut at = target;
    while at != root {
        at = paths.prev[at];
        path.push(at);
    }
    path.reverse();
    Ok(path)
}

/// Raw centerline in voxel-center mm coordinates of the component's grid.
pub fn extract_centerline(component: &BinaryMask, cfg: &CenterlineConfig) -> Result<Polyline> {
    let g = component.geometry();
    let points = centerline_voxels(component, cfg)?
        .into_iter()
        .map(|i| g.to_mm(i))
        .collect();
    Ok(Polyline::new(0, points))
}

/// Centered moving average. Near the ends the window shrinks symmetrically,
/// so the first and last points stay put.
pub fn smooth(line: &Polyline, window: usize) -> Result<Polyline> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "smoothing window must be odd and >= 3, got {window}"
        )));
    }
    let n = line.points.len();
    if window > n {
        return Err(Error::WindowTooLarge { window, points: n });
    }
    let half = window / 2;
    let points = (0..n)
        .map(|i| {
            let k = half.min(i).min(n - 1 - i);
            let mut acc = [0.0; 3];
            for p in &line.points[i - k..=i + k] {
                for a in 0..3 {
                    acc[a] += p[a];
                }
            }
            acc.map(|v| v / (2 * k + 1) as f64)
        })
        .collect();
    Ok(Polyline::new(line.label, points))
}

/// `n` points at uniform arc length along the piecewise-linear curve.
pub fn resample(line: &Polyline, n: usize) -> Result<Polyline> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("resample needs n >= 2, got {n}")));
    }
    let pts = &line.points;
    let mut cumulative = Vec::with_capacity(pts.len());
    cumulative.push(0.0);
    for w in pts.windows(2) {
        cumulative.push(cumulative.last().unwrap() + dist(w[0], w[1]));
    }
    let total = *cumulative.last().unwrap_or(&0.0);
    if !(total > 0.0) {
        return Err(Error::DegenerateCurve);
    }
    let mut out = Vec::with_capacity(n);
    out.push(pts[0]);
    let mut seg = 0;
    for k in 1..n - 1 {
        let s = total * k as f64 / (n - 1) as f64;
        while seg + 2 < cumulative.len() && cumulative[seg + 1] < s {
            seg += 1;
        }
        let len = cumulative[seg + 1] - cumulative[seg];
        let t = if len > 0.0 {
            ((s - cumulative[seg]) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (a, b) = (pts[seg], pts[seg + 1]);
        out.push(std::array::from_fn(|i| a[i] + t * (b[i] - a[i])));
    }
    out.push(*pts.last().unwrap());
    Ok(Polyline::new(line.label, out))
}

/// Centerlines of a whole case keyed by label, plus per-rib diagnostics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CenterlineSet {
    pub lines: BTreeMap<u8, Polyline>,
    pub warnings: Vec<Warning>,
}

fn one_rib(
    label: u8,
    crop: CroppedMask,
    parent: &Geometry,
    cfg: &CenterlineConfig,
) -> (Option<Polyline>, Vec<Warning>) {
    let mut warnings = Vec::new();
    let cc = connected_components(&crop.mask, Connectivity::TwentySix);
    if cc.count() > 1 {
        warnings.push(Warning::FragmentedRib {
            label,
            fragments: cc.count(),
        });
    }
    let component = cc.mask_of(1);
    let path = match centerline_voxels(&component, cfg) {
        Ok(p) => p,
        Err(e) => {
            warnings.push(Warning::RibFailed {
                label,
                reason: e.to_string(),
            });
            return (None, warnings);
        }
    };
    let raw = Polyline::new(
        label,
        path.into_iter()
            .map(|i| parent.to_mm(crop.to_parent(i, parent)))
            .collect(),
    );
    let smoothed = match smooth(&raw, cfg.smooth_window) {
        Ok(s) => s,
        Err(Error::WindowTooLarge { window, points }) => {
            warnings.push(Warning::SmoothingSkipped {
                label,
                points,
                window,
            });
            raw
        }
        Err(e) => {
            warnings.push(Warning::RibFailed {
                label,
                reason: e.to_string(),
            });
            return (None, warnings);
        }
    };
    match resample(&smoothed, cfg.resample_points) {
        Ok(line) => (Some(line), warnings),
        Err(e) => {
            warnings.push(Warning::RibFailed {
                label,
                reason: e.to_string(),
            });
            (None, warnings)
        }
    }
}

/// Extracts one smoothed, resampled centerline per present label. Ribs run in
/// parallel on the current rayon pool; results are merged in label order.
/// Absent labels 1..=24 are reported as missing.
pub fn extract_all(labels: &LabelVolume, cfg: &CenterlineConfig) -> CenterlineSet {
    let geometry = *labels.geometry();
    let boxes = labels.label_boxes();
    let present: Vec<(u8, _)> = boxes
        .iter()
        .enumerate()
        .skip(1)
        .filter_map(|(l, b)| b.map(|b| (l as u8, b)))
        .collect();
    let results: Vec<(u8, Option<Polyline>, Vec<Warning>)> = present
        .par_iter()
        .map(|&(label, bbox)| {
            let crop = labels.crop_label(label, &bbox.padded(1, &geometry));
            let (line, warnings) = one_rib(label, crop, &geometry, cfg);
            (label, line, warnings)
        })
        .collect();

    let mut set = CenterlineSet::default();
    for label in 1..=MAX_LABEL {
        if boxes[label as usize].is_none() {
            set.warnings.push(Warning::MissingRib { label });
        }
    }
    for (label, line, warnings) in results {
        set.warnings.extend(warnings);
        if let Some(line) = line {
            set.lines.insert(label, line);
        }
    }
    set
}

/// Text form: a `#` header line, then `label x y z` rows in mm, labels
/// ascending, each line's points in order.
pub fn write_centerlines_text(lines: &BTreeMap<u8, Polyline>, out: impl Write) -> std::io::Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(out, "# label x y z")?;
    for (label, line) in lines {
        for p in &line.points {
            writeln!(out, "{label} {:.6} {:.6} {:.6}", p[0], p[1], p[2])?;
        }
    }
    out.flush()
}

pub fn read_centerlines_text(input: impl Read) -> Result<BTreeMap<u8, Polyline>> {
    let mut lines: BTreeMap<u8, Polyline> = BTreeMap::new();
    for (n, row) in BufReader::new(input).lines().enumerate() {
        let row = row.map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))?;
        let row = row.trim();
        if row.is_empty() || row.starts_with('#') {
            continue;
        }
        let bad = || Error::Parse(format!("line {}: expected `label x y z`, got {row:?}", n + 1));
        let fields: Vec<&str> = row.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(bad());
        }
        let label: u8 = fields[0].parse().map_err(|_| bad())?;
        if label == 0 || label > MAX_LABEL {
            return Err(bad());
        }
        let mut p = [0.0; 3];
        for a in 0..3 {
            p[a] = fields[a + 1].parse().map_err(|_| bad())?;
        }
        lines
            .entry(label)
            .or_insert_with(|| Polyline::new(label, Vec::new()))
            .points
            .push(p);
    }
    Ok(lines)
}

const BINARY_MAGIC: &[u8; 4] = b"RBCL";

/// Binary form: magic `RBCL`, u32 line count, then per line u32 label,
/// u32 point count and x y z as f32, all little-endian.
pub fn write_centerlines_binary(lines: &BTreeMap<u8, Polyline>, out: impl Write) -> std::io::Result<()> {
    let mut out = BufWriter::new(out);
    out.write_all(BINARY_MAGIC)?;
    out.write_u32::<LittleEndian>(lines.len() as u32)?;
    for (&label, line) in lines {
        out.write_u32::<LittleEndian>(label as u32)?;
        out.write_u32::<LittleEndian>(line.points.len() as u32)?;
        for p in &line.points {
            for &v in p {
                out.write_f32::<LittleEndian>(v as f32)?;
            }
        }
    }
    out.flush()
}

pub fn read_centerlines_binary(input: impl Read) -> Result<BTreeMap<u8, Polyline>> {
    let mut input = BufReader::new(input);
    let truncated = |e: std::io::Error| Error::Parse(format!("centerline binary: {e}"));
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(truncated)?;
    if &magic != BINARY_MAGIC {
        return Err(Error::Parse("centerline binary: bad magic".into()));
    }
    let count = input.read_u32::<LittleEndian>().map_err(truncated)?;
    let mut lines = BTreeMap::new();
    for _ in 0..count {
        let label = input.read_u32::<LittleEndian>().map_err(truncated)?;
        if label == 0 || label > MAX_LABEL as u32 {
            return Err(Error::Parse(format!("centerline binary: label {label}")));
        }
        let n = input.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let mut points = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let mut p = [0.0; 3];
            for v in &mut p {
                *v = input.read_f32::<LittleEndian>().map_err(truncated)? as f64;
            }
            points.push(p);
        }
        lines.insert(label as u8, Polyline::new(label as u8, points));
    }
    Ok(lines)
}

/// Writes the binary form for `.bin` paths, text otherwise.
pub fn save_centerlines(lines: &BTreeMap<u8, Polyline>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let binary = path.extension().is_some_and(|e| e == "bin");
    let written = if binary {
        write_centerlines_binary(lines, file)
    } else {
        write_centerlines_text(lines, file)
    };
    written.map_err(|e| Error::io(path, e))
}

/// Reads either form, detected by the magic bytes.
pub fn load_centerlines(path: impl AsRef<Path>) -> Result<BTreeMap<u8, Polyline>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(BINARY_MAGIC) {
        read_centerlines_binary(&bytes[..])
    } else {
        read_centerlines_text(&bytes[..])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(points: &[[f64; 3]]) -> Polyline {
        Polyline::new(1, points.to_vec())
    }

    #[test]
    fn root_of_a_segment_is_its_far_end() {
        let g = Geometry::isotropic([10, 3, 3]).unwrap();
        let m = BinaryMask::from_fn(g, |_, y, z| y == 0 && z == 0);
        assert_eq!(find_root(&m).unwrap(), g.index(9, 0, 0));
    }

    #[test]
    fn single_voxel_root() {
        let g = Geometry::isotropic([3, 3, 3]).unwrap();
        let m = BinaryMask::from_indices(g, [13]);
        assert_eq!(find_root(&m).unwrap(), 13);
        assert!(matches!(find_root(&BinaryMask::empty(g)), Err(Error::EmptyComponent)));
    }

    /// All-pairs geodesic distances by Floyd-Warshall over the voxel graph.
    fn all_pairs(mask: &BinaryMask) -> (Vec<usize>, Vec<Vec<f64>>) {
        let g = mask.geometry();
        let nodes: Vec<usize> = mask.iter_ones().collect();
        let n = nodes.len();
        let mut d = vec![vec![f64::INFINITY; n]; n];
        for a in 0..n {
            d[a][a] = 0.0;
            for b in 0..n {
                let pa = g.coords(nodes[a]);
                let pb = g.coords(nodes[b]);
                let delta: Vec<i64> = (0..3).map(|k| pa[k] as i64 - pb[k] as i64).collect();
                if a != b && delta.iter().all(|v| v.abs() <= 1) {
                    d[a][b] = dist(g.to_mm(nodes[a]), g.to_mm(nodes[b]));
                }
            }
        }
        for k in 0..n {
            for a in 0..n {
                for b in 0..n {
                    let via = d[a][k] + d[k][b];
                    if via < d[a][b] {
                        d[a][b] = via;
                    }
                }
            }
        }
        (nodes, d)
    }

    #[test]
    fn l_shape_root_against_all_pairs() {
        let g = Geometry::isotropic([12, 12, 1]).unwrap();
        let m = BinaryMask::from_fn(g, |x, y, _| (y == 0 && x <= 10) || (x == 0 && y <= 10));
        let (nodes, d) = all_pairs(&m);
        let root = find_root(&m).unwrap();
        let start = 0; // voxel (0,0,0) is nodes[0]
        let expected_max = d[start].iter().cloned().fold(0.0, f64::max);
        let r = nodes.iter().position(|&v| v == root).unwrap();
        assert_eq!(d[start][r], expected_max);
        assert_eq!(root, g.index(10, 0, 0));
        // the other arm's tip; the diagonal step cuts the corner
        let far = d[r].iter().cloned().fold(0.0, f64::max);
        assert!((far - (18.0 + 2f64.sqrt())).abs() < 1e-12);
        let path = centerline_voxels(&m, &CenterlineConfig::default()).unwrap();
        assert_eq!(*path.last().unwrap(), g.index(0, 10, 0));
    }

    #[test]
    fn thin_curve_path_is_the_curve() {
        let g = Geometry::isotropic([20, 20, 3]).unwrap();
        // staircase: every voxel is 26-adjacent to the next
        let curve: Vec<usize> = (0..15).map(|k| g.index(k, k / 2, 1)).collect();
        let m = BinaryMask::from_indices(g, curve.clone());
        let mut path = centerline_voxels(&m, &CenterlineConfig::default()).unwrap();
        if path[0] != curve[0] {
            path.reverse();
        }
        assert_eq!(path, curve);
    }

    #[test]
    fn penalty_field_bounds() {
        let g = Geometry::isotropic([9, 9, 9]).unwrap();
        let m = BinaryMask::from_fn(g, |x, y, z| (1..8).contains(&x) && (1..8).contains(&y) && (1..8).contains(&z));
        let f = PenaltyField::new(&m, 5000.0, 16.0);
        assert_eq!(f.get(g.index(4, 4, 4)), 0.0);
        assert!(f.values().iter().all(|&v| (0.0..=5000.0).contains(&v)));
        assert!(f.get(g.index(1, 4, 4)) > f.get(g.index(2, 4, 4)));
        assert_eq!(f.get(0), 0.0);
    }

    #[test]
    fn smoothing_zigzag() {
        let pts: Vec<[f64; 3]> = (0..9)
            .map(|i| [i as f64, if i % 2 == 0 { 1.0 } else { -1.0 }, 0.0])
            .collect();
        let s = smooth(&line(&pts), 3).unwrap();
        assert_eq!(s.points[0], pts[0]);
        assert_eq!(s.points[8], pts[8]);
        for i in 1..8 {
            assert!((s.points[i][1].abs() - 1.0 / 3.0).abs() < 1e-12);
            assert!((s.points[i][0] - i as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothing_errors() {
        let l = line(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        assert!(matches!(smooth(&l, 11), Err(Error::WindowTooLarge { window: 11, points: 2 })));
        assert!(matches!(smooth(&l, 4), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn resample_segment() {
        let l = line(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        let r = resample(&l, 500).unwrap();
        assert_eq!(r.len(), 500);
        for (i, p) in r.points.iter().enumerate() {
            assert!((p[0] - i as f64 / 499.0).abs() < 1e-12);
        }
        assert_eq!(r.points[499], [1.0, 0.0, 0.0]);
        assert!(matches!(resample(&line(&[[1.0; 3], [1.0; 3]]), 10), Err(Error::DegenerateCurve)));
        assert!(matches!(resample(&line(&[[1.0; 3]]), 10), Err(Error::DegenerateCurve)));
    }

    #[test]
    fn text_and_binary_round_trip() {
        let mut lines = BTreeMap::new();
        lines.insert(3, Polyline::new(3, vec![[0.5, 1.0, 2.0], [1.5, -1.0, 2.25]]));
        lines.insert(17, Polyline::new(17, vec![[10.0, 20.0, 30.0], [11.0, 21.0, 31.0]]));
        let mut text = Vec::new();
        write_centerlines_text(&lines, &mut text).unwrap();
        let s = String::from_utf8(text.clone()).unwrap();
        assert!(s.lines().nth(1).unwrap().starts_with("3 0.500000 1.000000 2.000000"));
        assert_eq!(read_centerlines_text(&text[..]).unwrap(), lines);
        let mut bin = Vec::new();
        write_centerlines_binary(&lines, &mut bin).unwrap();
        assert_eq!(bin.len(), 8 + 2 * (8 + 2 * 12));
        assert_eq!(read_centerlines_binary(&bin[..]).unwrap(), lines);
        assert!(read_centerlines_text(&b"1 2 3\n"[..]).is_err());
        assert!(read_centerlines_text(&b"25 0 0 0\n"[..]).is_err());
    }

    #[test]
    fn extract_all_reports_missing_and_fragments() {
        let g = Geometry::isotropic([40, 12, 12]).unwrap();
        let mut lv = LabelVolume::empty(g);
        for x in 2..38 {
            if (18..21).contains(&x) {
                continue;
            }
            for y in 4..8 {
                for z in 4..8 {
                    lv.set(g.index(x, y, z), 2);
                }
            }
        }
        let set = extract_all(&lv, &CenterlineConfig::default());
        assert_eq!(set.lines.keys().copied().collect::<Vec<_>>(), vec![2]);
        assert_eq!(set.lines[&2].len(), 500);
        assert!(set.warnings.contains(&Warning::FragmentedRib { label: 2, fragments: 2 }));
        assert!(set.warnings.contains(&Warning::MissingRib { label: 7 }));
        assert!(!set.warnings.contains(&Warning::MissingRib { label: 2 }));
    }

    #[test]
    fn tiny_rib_fails_softly() {
        let g = Geometry::isotropic([5, 5, 5]).unwrap();
        let mut lv = LabelVolume::empty(g);
        lv.set(g.index(2, 2, 2), 4);
        lv.set(g.index(1, 1, 1), 9);
        lv.set(g.index(2, 1, 1), 9);
        let set = extract_all(&lv, &CenterlineConfig::default());
        assert!(set.warnings.iter().any(|w| matches!(w, Warning::RibFailed { label: 4, .. })));
        assert!(set.warnings.contains(&Warning::SmoothingSkipped { label: 9, points: 2, window: 11 }));
        assert_eq!(set.lines[&9].len(), 500);
    }

    fn polyline() -> impl Strategy<Value = Polyline> {
        proptest::collection::vec(
            (-50.0f64..50.0, -50.0f64..50.0, -50.0f64..50.0).prop_map(|(x, y, z)| [x, y, z]),
            2..40,
        )
        .prop_map(|pts| Polyline::new(1, pts))
    }

    proptest! {
        #[test]
        fn resample_keeps_ends_and_length(l in polyline(), n in 2usize..600) {
            prop_assume!(l.arc_length() > 1e-6);
            let r = resample(&l, n).unwrap();
            prop_assert_eq!(r.len(), n);
            prop_assert_eq!(r.points[0], l.points[0]);
            prop_assert_eq!(r.points[n - 1], *l.points.last().unwrap());
            prop_assert!(r.arc_length() <= l.arc_length() * (1.0 + 1e-9));
        }

        #[test]
        fn resample_is_idempotent_on_straight_lines(
            ts in proptest::collection::vec(0.0f64..1.0, 2..30),
            dir in (-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0),
        ) {
            // collinear points in increasing order, unevenly spaced
            let mut ts = ts;
            ts.sort_by(f64::total_cmp);
            prop_assume!(ts[ts.len() - 1] - ts[0] > 1e-3);
            let d = [dir.0, dir.1, dir.2];
            prop_assume!(dist(d, [0.0; 3]) > 1e-3);
            let l = Polyline::new(1, ts.iter().map(|&t| d.map(|v| v * t)).collect());
            let r = resample(&l, 500).unwrap();
            prop_assert!((r.arc_length() - l.arc_length()).abs() <= 1e-9 * l.arc_length());
            let step = l.arc_length() / 499.0;
            for w in r.points.windows(2) {
                prop_assert!((dist(w[0], w[1]) - step).abs() <= 1e-6 * step);
            }
            let again = resample(&r, 500).unwrap();
            for (a, b) in r.points.iter().zip(&again.points) {
                prop_assert!(dist(*a, *b) < 1e-9 * (1.0 + l.arc_length()));
            }
        }

        #[test]
        fn smoothing_pins_ends_and_count(l in polyline(), w in 1usize..6) {
            let window = 2 * w + 1;
            prop_assume!(window <= l.len());
            let s = smooth(&l, window).unwrap();
            prop_assert_eq!(s.len(), l.len());
            prop_assert_eq!(s.points[0], l.points[0]);
            prop_assert_eq!(s.points[l.len() - 1], l.points[l.len() - 1]);
        }
    }
}
