//! Evaluation metrics: per-rib Label-Dice and Label-Accuracy on label
//! volumes, and Chamfer-type (LLCD, LSCD) and tolerance-overlap (NLD)
//! distances on centerlines. Distances are in mm.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::centerline::{dist, Polyline};
use crate::error::{Error, Result};
use crate::volume::{LabelVolume, MAX_LABEL};

pub const DEFAULT_TAU_MM: f64 = 7.0;
pub const DEFAULT_ACCURACY_THRESHOLD: f64 = 0.7;

const RIBS: usize = MAX_LABEL as usize;

/// Exact nearest-neighbour search over a fixed 3D point set.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    // implicit balanced tree over a permutation of `points`
    order: Vec<usize>,
}

impl KdTree {
    pub fn new(points: &[[f64; 3]]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build(points, &mut order, 0);
        KdTree {
            points: points.to_vec(),
            order,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Distance from `q` to the closest stored point (infinite when empty).
    pub fn nearest_distance(&self, q: [f64; 3]) -> f64 {
        let mut best = f64::INFINITY;
        self.search(q, 0, self.order.len(), 0, &mut best);
        best
    }

    fn search(&self, q: [f64; 3], lo: usize, hi: usize, axis: usize, best: &mut f64) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let p = self.points[self.order[mid]];
        let d = dist(q, p);
        if d < *best {
            *best = d;
        }
        let delta = q[axis] - p[axis];
        let next = (axis + 1) % 3;
        let (near, far) = if delta < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, next, best);
        if delta.abs() <= *best {
            self.search(q, far.0, far.1, next, best);
        }
    }
}

fn build(points: &[[f64; 3]], order: &mut [usize], axis: usize) {
    if order.len() <= 1 {
        return;
    }
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    let (left, right) = order.split_at_mut(mid);
    build(points, left, (axis + 1) % 3);
    build(points, &mut right[1..], (axis + 1) % 3);
}

fn mean_min(from: &[[f64; 3]], to: &KdTree) -> f64 {
    from.iter().map(|&p| to.nearest_distance(p)).sum::<f64>() / from.len() as f64
}

fn nonempty(points: &[[f64; 3]]) -> Result<()> {
    if points.is_empty() {
        Err(Error::EmptyLine)
    } else {
        Ok(())
    }
}

/// Line-line Chamfer distance: the two directed mean nearest distances, summed.
pub fn llcd(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    nonempty(a)?;
    nonempty(b)?;
    Ok(mean_min(a, &KdTree::new(b)) + mean_min(b, &KdTree::new(a)))
}

/// Line-segmentation Chamfer distance: mean distance from each centerline
/// point to the nearest segmentation voxel center. One-directional.
pub fn lscd(line: &[[f64; 3]], segmentation: &[[f64; 3]]) -> Result<f64> {
    nonempty(line)?;
    if segmentation.is_empty() {
        return Err(Error::EmptySegmentation);
    }
    Ok(mean_min(line, &KdTree::new(segmentation)))
}

/// Normalized line Dice: share of points of either line within `tau` (<=) of
/// the other line.
pub fn nld(a: &[[f64; 3]], b: &[[f64; 3]], tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    nonempty(a)?;
    nonempty(b)?;
    let (ta, tb) = (KdTree::new(a), KdTree::new(b));
    let hits = a.iter().filter(|&&p| tb.nearest_distance(p) <= tau).count()
        + b.iter().filter(|&&q| ta.nearest_distance(q) <= tau).count();
    Ok(hits as f64 / (a.len() + b.len()) as f64)
}

/// Per-rib Dice, indexed by `label - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiceScores {
    /// `None` when the rib is absent from both volumes.
    pub per_rib: Vec<Option<f64>>,
    pub in_gt: Vec<bool>,
    /// Over ribs present in the ground truth; `None` when there are none.
    pub avg: Option<f64>,
    pub min: Option<f64>,
}

pub fn label_dice(pred: &LabelVolume, gt: &LabelVolume) -> Result<DiceScores> {
    pred.geometry().ensure_same(gt.geometry(), "prediction vs ground truth")?;
    let mut inter = [0usize; RIBS + 1];
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if p == g {
            inter[p as usize] += 1;
        }
    }
    let (hp, hg) = (pred.histogram(), gt.histogram());
    let per_rib: Vec<Option<f64>> = (1..=RIBS)
        .map(|l| match (hp[l], hg[l]) {
            (0, 0) => None,
            (a, b) => Some(2.0 * inter[l] as f64 / (a + b) as f64),
        })
        .collect();
    let in_gt: Vec<bool> = (1..=RIBS).map(|l| hg[l] > 0).collect();
    let counted: Vec<f64> = per_rib
        .iter()
        .zip(&in_gt)
        .filter(|(_, &g)| g)
        .filter_map(|(d, _)| *d)
        .collect();
    let avg = (!counted.is_empty()).then(|| counted.iter().sum::<f64>() / counted.len() as f64);
    let min = counted.iter().copied().reduce(f64::min);
    Ok(DiceScores {
        per_rib,
        in_gt,
        avg,
        min,
    })
}

/// Fraction of correctly labeled ribs per group; `None` for empty groups.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LabelAccuracy {
    pub all: Option<f64>,
    pub first: Option<f64>,
    pub intermediate: Option<f64>,
    pub twelfth: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RibGroup {
    First,
    Intermediate,
    Twelfth,
}

impl RibGroup {
    pub fn of(label: u8) -> RibGroup {
        match label {
            1 | 13 => RibGroup::First,
            12 | 24 => RibGroup::Twelfth,
            _ => RibGroup::Intermediate,
        }
    }
}

/// A rib counts as correct when its Dice is strictly above `threshold`.
/// Only ribs present in the ground truth take part.
pub fn label_accuracy(scores: &DiceScores, threshold: f64) -> LabelAccuracy {
    let mut hits = [0usize; 4];
    let mut totals = [0usize; 4];
    for (i, dice) in scores.per_rib.iter().enumerate() {
        if !scores.in_gt[i] {
            continue;
        }
        let ok = dice.is_some_and(|d| d > threshold) as usize;
        let group = 1 + RibGroup::of(i as u8 + 1) as usize;
        for slot in [0, group] {
            hits[slot] += ok;
            totals[slot] += 1;
        }
    }
    let frac = |k: usize| (totals[k] > 0).then(|| hits[k] as f64 / totals[k] as f64);
    LabelAccuracy {
        all: frac(0),
        first: frac(1),
        intermediate: frac(2),
        twelfth: frac(3),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RibMetrics {
    pub dice: Option<f64>,
    pub llcd: Option<f64>,
    pub lscd: Option<f64>,
    pub nld: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub tau: f64,
    /// Indexed by `label - 1`.
    pub ribs: Vec<RibMetrics>,
    pub dice_avg: Option<f64>,
    pub dice_min: Option<f64>,
    pub accuracy: LabelAccuracy,
    pub llcd_avg: Option<f64>,
    pub lscd_avg: Option<f64>,
    pub nld_avg: Option<f64>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// All metrics for one case. Line metrics are computed for ribs that have
/// both a predicted and a reference line (LSCD: a predicted line and
/// reference voxels) and are absent otherwise.
pub fn evaluate_case(
    pred_labels: &LabelVolume,
    gt_labels: &LabelVolume,
    pred_lines: &BTreeMap<u8, Polyline>,
    gt_lines: &BTreeMap<u8, Polyline>,
    tau: f64,
) -> Result<MetricsReport> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    let dice = label_dice(pred_labels, gt_labels)?;
    let accuracy = label_accuracy(&dice, DEFAULT_ACCURACY_THRESHOLD);

    let geometry = gt_labels.geometry();
    let mut segments: Vec<Vec<[f64; 3]>> = vec![Vec::new(); RIBS + 1];
    for (i, &l) in gt_labels.labels().iter().enumerate() {
        if l != 0 {
            segments[l as usize].push(geometry.to_mm(i));
        }
    }

    let ribs: Vec<RibMetrics> = (1..=MAX_LABEL)
        .into_par_iter()
        .map(|label| {
            let pred = pred_lines.get(&label).filter(|l| !l.is_empty());
            let gt = gt_lines.get(&label).filter(|l| !l.is_empty());
            let seg = &segments[label as usize];
            let (llcd_v, nld_v) = match (pred, gt) {
                (Some(p), Some(g)) => (
                    llcd(&p.points, &g.points).ok(),
                    nld(&p.points, &g.points, tau).ok(),
                ),
                _ => (None, None),
            };
            RibMetrics {
                dice: dice.per_rib[label as usize - 1],
                llcd: llcd_v,
                lscd: pred.and_then(|p| lscd(&p.points, seg).ok()),
                nld: nld_v,
            }
        })
        .collect();

    Ok(MetricsReport {
        tau,
        dice_avg: dice.avg,
        dice_min: dice.min,
        accuracy,
        llcd_avg: mean(ribs.iter().map(|r| r.llcd)),
        lscd_avg: mean(ribs.iter().map(|r| r.lscd)),
        nld_avg: mean(ribs.iter().map(|r| r.nld)),
        ribs,
    })
}

fn value(v: Option<f64>) -> String {
    v.map_or_else(|| "absent".to_string(), |x| format!("{x:.6}"))
}

impl MetricsReport {
    /// Stable `key=value` form, one metric per line.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("tau", format!("{:.6}", self.tau));
        kv("dice_avg", value(self.dice_avg));
        kv("dice_min", value(self.dice_min));
        kv("acc_all", value(self.accuracy.all));
        kv("acc_first", value(self.accuracy.first));
        kv("acc_intermediate", value(self.accuracy.intermediate));
        kv("acc_twelfth", value(self.accuracy.twelfth));
        kv("llcd_avg", value(self.llcd_avg));
        kv("lscd_avg", value(self.lscd_avg));
        kv("nld_avg", value(self.nld_avg));
        for (i, r) in self.ribs.iter().enumerate() {
            let rib = i + 1;
            kv(&format!("rib_{rib:02}.dice"), value(r.dice));
            kv(&format!("rib_{rib:02}.llcd"), value(r.llcd));
            kv(&format!("rib_{rib:02}.lscd"), value(r.lscd));
            kv(&format!("rib_{rib:02}.nld"), value(r.nld));
        }
        s
    }

    /// Human-readable table.
    pub fn to_table(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{:.1}%", 100.0 * x));
        let mut s = String::new();
        let _ = writeln!(s, "rib    dice     llcd     lscd     nld");
        for (i, r) in self.ribs.iter().enumerate() {
            if r.dice.is_none() && r.llcd.is_none() && r.lscd.is_none() {
                continue;
            }
            let _ = writeln!(
                s,
                "{:>3} {:>7} {:>8} {:>8} {:>7}",
                i + 1,
                cell(r.dice),
                cell(r.llcd),
                cell(r.lscd),
                cell(r.nld)
            );
        }
        let _ = writeln!(
            s,
            "dice avg {} min {}; accuracy A {} F {} I {} T {}",
            cell(self.dice_avg),
            cell(self.dice_min),
            pct(self.accuracy.all),
            pct(self.accuracy.first),
            pct(self.accuracy.intermediate),
            pct(self.accuracy.twelfth)
        );
        let _ = writeln!(
            s,
            "llcd {} mm, lscd {} mm, nld(tau={}) {}",
            cell(self.llcd_avg),
            cell(self.lscd_avg),
            self.tau,
            cell(self.nld_avg)
        );
        s
    }
}
