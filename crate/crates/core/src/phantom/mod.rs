//! Synthetic rib cages with exact ground truth.
//!
//! Each rib is a tube around a planar half-ellipse arc that leaves the spine
//! posteriorly, sweeps laterally and ends anteriorly; all rib planes share one
//! downward anterior tilt. The spine is a vertical cylinder at the x mid-plane
//! and a clavicle bar stands in for the shoulder girdle. Thin horizontal
//! bridges join each rib head to the spine, so the thresholded skeleton is a
//! single component until erosion separates it.
//!
//! Positions are computed in voxel units; centerlines are reported in mm.

pub mod oracle;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::centerline::{resample, Polyline, DEFAULT_RESAMPLE_POINTS};
use crate::error::{Error, Result};
use crate::labeling::PAIRS;
use crate::morphology::Connectivity;
use crate::volume::{BinaryMask, Geometry, LabelVolume, Volume, VoxelData};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sides {
    Left,
    Right,
    Both,
}

impl Sides {
    fn has(self, side: Side) -> bool {
        matches!(
            (self, side),
            (Sides::Both, _) | (Sides::Left, Side::Left) | (Sides::Right, Side::Right)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perturbation {
    /// Bone-valued bar joining two ribs of one side halfway along the arc.
    MetalBridge { pair_a: usize, pair_b: usize, side: Side },
    /// Drops the lowest (floating) rib on the given sides.
    MissingFloatingRibs { sides: Sides },
    /// Soft tissue with Gaussian HU noise in a shell around the cage; the
    /// tail of the noise crosses the bone threshold as isolated speckle.
    HuNoiseShell { sigma: f64 },
    /// Removes a slab `gap_voxels` thick across one rib at mid-arc.
    Fracture { label: u8, gap_voxels: usize },
    /// Smooth lateral bend of spine and ribs along z; `bend_deg` is the
    /// steepest spine angle from vertical.
    Scoliosis { bend_deg: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub pairs: usize,
    pub tube_radius: f64,
    pub spine_radius: f64,
    /// Free space between a rib head and the spine surface, in voxels.
    pub costal_gap: f64,
    pub tilt_deg: f64,
    pub bone_hu: i16,
    pub air_hu: i16,
    pub shoulder: bool,
    pub bridges: bool,
    /// Seeded per-rib variation of radii, height and tilt.
    pub jitter: bool,
    pub seed: u64,
    pub perturbations: Vec<Perturbation>,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: [256, 256, 256],
            spacing: [1.0, 1.0, 1.0],
            pairs: PAIRS,
            tube_radius: 2.0,
            spine_radius: 6.0,
            costal_gap: 6.0,
            tilt_deg: 10.0,
            bone_hu: 400,
            air_hu: -1000,
            shoulder: true,
            bridges: true,
            jitter: true,
            seed: 0,
            perturbations: Vec::new(),
        }
    }
}

/// Voxel classes of a generated phantom.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Part {
    Background = 0,
    Rib = 1,
    Spine = 2,
    Shoulder = 3,
    Bridge = 4,
    Metal = 5,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartMap {
    geometry: Geometry,
    parts: Vec<u8>,
}

impl PartMap {
    pub fn get(&self, index: usize) -> Part {
        match self.parts[index] {
            1 => Part::Rib,
            2 => Part::Spine,
            3 => Part::Shoulder,
            4 => Part::Bridge,
            5 => Part::Metal,
            _ => Part::Background,
        }
    }

    pub fn mask(&self, part: Part) -> BinaryMask {
        let code = part as u8;
        BinaryMask::from_indices(
            self.geometry,
            self.parts
                .iter()
                .enumerate()
                .filter(|(_, &p)| p == code)
                .map(|(i, _)| i),
        )
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub volume: Volume,
    pub labels: LabelVolume,
    /// Analytic centerlines in mm, 500 points each.
    pub centerlines: BTreeMap<u8, Polyline>,
    pub parts: PartMap,
}

/// One rib arc in voxel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RibArc {
    pub label: u8,
    pub pair: usize,
    pub side: Side,
    /// Half-axes along x and y.
    pub a: f64,
    pub b: f64,
    pub theta0: f64,
    pub theta1: f64,
    /// Height of the posterior apex.
    pub z0: f64,
    pub tilt: f64,
}

/// Fixed layout derived from the grid.
#[derive(Debug, Clone, Copy)]
struct Frame {
    cx: f64,
    /// y of the spine axis and of every arc's posterior apex
    ys: f64,
    z_lo: f64,
    z_hi: f64,
    shift_amp: f64,
}

impl Frame {
    fn new(spec: &PhantomSpec) -> Frame {
        let [nx, ny, nz] = spec.dims.map(|n| n as f64);
        let z_lo = 0.08 * nz;
        let z_hi = 0.9 * nz;
        let bend = spec
            .perturbations
            .iter()
            .find_map(|p| match p {
                Perturbation::Scoliosis { bend_deg } => Some(*bend_deg),
                _ => None,
            })
            .unwrap_or(0.0);
        Frame {
            cx: (nx - 1.0) / 2.0,
            ys: 0.72 * ny,
            z_lo,
            z_hi,
            shift_amp: (z_hi - z_lo) / PI * bend.to_radians().tan(),
        }
    }

    /// Lateral displacement at height z.
    fn shift(&self, z: f64) -> f64 {
        if self.shift_amp == 0.0 || z <= self.z_lo || z >= self.z_hi {
            return 0.0;
        }
        self.shift_amp * (PI * (z - self.z_lo) / (self.z_hi - self.z_lo)).sin()
    }
}

impl RibArc {
    fn sign(&self) -> f64 {
        match self.side {
            Side::Left => -1.0,
            Side::Right => 1.0,
        }
    }

    fn point(&self, frame: &Frame, theta: f64) -> [f64; 3] {
        let drop = self.b * (1.0 - theta.cos());
        let z = self.z0 - self.tilt.tan() * drop;
        [
            frame.cx + self.sign() * self.a * theta.sin() + frame.shift(z),
            frame.ys - drop,
            z,
        ]
    }

    /// Dense samples along the arc, voxel units.
    fn samples(&self, frame: &Frame, n: usize) -> Vec<[f64; 3]> {
        (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                self.point(frame, self.theta0 + t * (self.theta1 - self.theta0))
            })
            .collect()
    }
}

fn validate(spec: &PhantomSpec) -> Result<()> {
    let bad = |m: String| Err(Error::InvalidArgument(m));
    if !(1..=PAIRS).contains(&spec.pairs) {
        return bad(format!("pairs must be in 1..=12, got {}", spec.pairs));
    }
    if spec.dims.iter().any(|&n| n < 16) {
        return bad(format!("phantom dims must be at least 16, got {:?}", spec.dims));
    }
    if !(spec.tube_radius >= 1.0) || !(spec.spine_radius >= 1.0) || !(spec.costal_gap >= 0.0) {
        return bad("tube_radius and spine_radius must be >= 1, costal_gap >= 0".into());
    }
    if spec.bone_hu < 200 || spec.air_hu >= 200 {
        return bad(format!(
            "need bone_hu >= 200 > air_hu, got {} / {}",
            spec.bone_hu, spec.air_hu
        ));
    }
    for p in &spec.perturbations {
        match *p {
            Perturbation::MetalBridge { pair_a, pair_b, .. } => {
                if pair_a == pair_b || !(1..=spec.pairs).contains(&pair_a) || !(1..=spec.pairs).contains(&pair_b) {
                    return bad(format!("metal bridge pairs {pair_a},{pair_b} invalid"));
                }
            }
            Perturbation::HuNoiseShell { sigma } if !(sigma > 0.0) => {
                return bad(format!("noise sigma must be positive, got {sigma}"));
            }
            Perturbation::Fracture { label, gap_voxels } => {
                if !(1..=24).contains(&label) || gap_voxels < 2 {
                    return bad(format!("fracture needs label 1..=24 and gap >= 2, got {label},{gap_voxels}"));
                }
            }
            Perturbation::Scoliosis { bend_deg } if !(bend_deg.abs() < 60.0) => {
                return bad(format!("scoliosis bend must be below 60 degrees, got {bend_deg}"));
            }
            _ => {}
        }
    }
    Ok(())
}

fn missing(spec: &PhantomSpec, pair: usize, side: Side) -> bool {
    pair == spec.pairs
        && spec.perturbations.iter().any(|p| {
            matches!(p, Perturbation::MissingFloatingRibs { sides } if sides.has(side))
        })
}

/// Rib arcs of the phantom after seeded jitter, missing ribs omitted.
pub fn rib_arcs(spec: &PhantomSpec) -> Result<Vec<RibArc>> {
    validate(spec)?;
    let frame = Frame::new(spec);
    let [nx, ny, nz] = spec.dims.map(|n| n as f64);
    let z_top = 0.82 * nz;
    let z_bot = 0.22 * nz;
    let step = if spec.pairs > 1 {
        (z_top - z_bot) / (spec.pairs - 1) as f64
    } else {
        0.0
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut arcs = Vec::new();
    for pair in 1..=spec.pairs {
        let growth = ((pair - 1) as f64 / 5.0).min(1.0);
        let theta1 = match pair {
            11 => 1.7,
            12 => 1.35,
            _ => 2.6,
        };
        for side in [Side::Left, Side::Right] {
            let (mut ja, mut jb, mut jz, mut jt) = (1.0, 1.0, 0.0, 0.0);
            if spec.jitter {
                ja = 1.0 + rng.random_range(-0.03..0.03);
                jb = 1.0 + rng.random_range(-0.03..0.03);
                jz = rng.random_range(-1.0..1.0) * (0.07 * step).min(1.5);
                jt = rng.random_range(-0.4f64..0.4).to_radians();
            }
            if missing(spec, pair, side) {
                continue;
            }
            let label = match side {
                Side::Left => pair as u8,
                Side::Right => (PAIRS + pair) as u8,
            };
            let mut arc = RibArc {
                label,
                pair,
                side,
                a: nx * (0.24 + 0.12 * growth) * ja,
                b: ny * (0.17 + 0.08 * growth) * jb,
                theta0: 0.0,
                theta1,
                z0: z_top - (pair - 1) as f64 * step + jz,
                tilt: spec.tilt_deg.to_radians() + jt,
            };
            // first angle whose axis point clears the spine by the costal gap
            let clearance = spec.spine_radius + spec.costal_gap + spec.tube_radius;
            let off = |t: f64| {
                let p = arc.point(&frame, t);
                let dx = p[0] - frame.cx - frame.shift(p[2]);
                let dy = p[1] - frame.ys;
                (dx * dx + dy * dy).sqrt()
            };
            if off(theta1) <= clearance {
                return Err(Error::SpecInfeasible(format!(
                    "rib {label} is too short to clear the spine"
                )));
            }
            let (mut lo, mut hi) = (0.0, theta1);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if off(mid) < clearance {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            arc.theta0 = hi;
            arcs.push(arc);
        }
    }
    Ok(arcs)
}

const SPINE: u8 = 25;
const SHOULDER: u8 = 26;
const BRIDGE: u8 = 27;
const METAL: u8 = 28;

struct Canvas {
    geometry: Geometry,
    owner: Vec<u8>,
    overlap: Option<(u8, u8)>,
}

impl Canvas {
    /// Marks voxels within `radius` of the polyline. With `only_empty`,
    /// occupied voxels are left alone; otherwise a clash is recorded.
    fn tube(&mut self, pts: &[[f64; 3]], radius: f64, id: u8, only_empty: bool) -> Result<()> {
        let dims = self.geometry.dims();
        for w in pts.windows(2) {
            let (p, q) = (w[0], w[1]);
            let mut lo = [0i64; 3];
            let mut hi = [0i64; 3];
            for a in 0..3 {
                lo[a] = (p[a].min(q[a]) - radius).floor() as i64;
                hi[a] = (p[a].max(q[a]) + radius).ceil() as i64;
                if lo[a] < 0 || hi[a] >= dims[a] as i64 {
                    return Err(Error::SpecInfeasible(format!(
                        "part {id} leaves the {:?} grid",
                        dims
                    )));
                }
            }
            for z in lo[2]..=hi[2] {
                for y in lo[1]..=hi[1] {
                    for x in lo[0]..=hi[0] {
                        let v = [x as f64, y as f64, z as f64];
                        if segment_distance(v, p, q) > radius {
                            continue;
                        }
                        let i = self.geometry.index(x as usize, y as usize, z as usize);
                        let cur = self.owner[i];
                        if cur == 0 {
                            self.owner[i] = id;
                        } else if cur != id && !only_empty && self.overlap.is_none() {
                            self.overlap = Some((cur, id));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn segment_distance(v: [f64; 3], p: [f64; 3], q: [f64; 3]) -> f64 {
    let d = [q[0] - p[0], q[1] - p[1], q[2] - p[2]];
    let w = [v[0] - p[0], v[1] - p[1], v[2] - p[2]];
    let len2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    let t = if len2 > 0.0 {
        ((w[0] * d[0] + w[1] * d[1] + w[2] * d[2]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let r = [w[0] - t * d[0], w[1] - t * d[1], w[2] - t * d[2]];
    (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt()
}

/// Builds the phantom. Deterministic for a given spec.
pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    let arcs = rib_arcs(spec)?;
    let geometry = Geometry::new(spec.dims, spec.spacing)?;
    let frame = Frame::new(spec);
    let [nx, ny, nz] = spec.dims.map(|n| n as f64);
    let mut canvas = Canvas {
        geometry,
        owner: vec![0u8; geometry.len()],
        overlap: None,
    };

    let spine_axis: Vec<[f64; 3]> = {
        let n = ((frame.z_hi - frame.z_lo).ceil() as usize).max(2);
        (0..n)
            .map(|i| {
                let z = frame.z_lo + (frame.z_hi - frame.z_lo) * i as f64 / (n - 1) as f64;
                [frame.cx + frame.shift(z), frame.ys, z]
            })
            .collect()
    };
    canvas.tube(&spine_axis, spec.spine_radius, SPINE, false)?;

    let samples: Vec<Vec<[f64; 3]>> = arcs.iter().map(|a| a.samples(&frame, 1024)).collect();
    for (arc, pts) in arcs.iter().zip(&samples) {
        canvas.tube(pts, spec.tube_radius, arc.label, false)?;
    }

    if spec.shoulder {
        let z = 0.93 * nz;
        let y = 0.2 * ny;
        let bar = [[0.18 * nx, y, z], [0.82 * nx, y, z]];
        canvas.tube(&bar, spec.tube_radius + 1.0, SHOULDER, false)?;
    }

    if let Some((a, b)) = canvas.overlap {
        return Err(Error::SpecInfeasible(format!("parts {a} and {b} overlap")));
    }
    check_separation(&canvas)?;

    if spec.bridges {
        // just under sqrt(3)/2: a connected chain one voxel thick
        let radius = 0.86;
        for pts in &samples {
            let head = pts[0];
            let target = [frame.cx + frame.shift(head[2]), frame.ys, head[2]];
            canvas.tube(&[head, target], radius, BRIDGE, true)?;
        }
    }

    let mut hu: Vec<i16> = Vec::new();
    let mut noise_shell = None;
    for p in &spec.perturbations {
        match *p {
            Perturbation::MetalBridge { pair_a, pair_b, side } => {
                let find = |pair| {
                    arcs.iter()
                        .find(|a| a.pair == pair && a.side == side)
                        .ok_or_else(|| Error::SpecInfeasible(format!("metal bridge: rib pair {pair} is absent")))
                };
                let (ra, rb) = (find(pair_a)?, find(pair_b)?);
                let theta = 0.5 * (ra.theta0.max(rb.theta0) + ra.theta1.min(rb.theta1));
                let bar = [ra.point(&frame, theta), rb.point(&frame, theta)];
                canvas.tube(&bar, spec.tube_radius, METAL, true)?;
            }
            Perturbation::Fracture { label, gap_voxels } => {
                let Some(k) = arcs.iter().position(|a| a.label == label) else {
                    return Err(Error::SpecInfeasible(format!("fracture: rib {label} is absent")));
                };
                cut_slab(&mut canvas, &samples[k], label, gap_voxels as f64, spec.tube_radius);
            }
            Perturbation::HuNoiseShell { sigma } => noise_shell = Some(sigma),
            Perturbation::MissingFloatingRibs { .. } | Perturbation::Scoliosis { .. } => {}
        }
    }

    hu.reserve_exact(geometry.len());
    hu.extend(canvas.owner.iter().map(|&o| if o == 0 { spec.air_hu } else { spec.bone_hu }));
    if let Some(sigma) = noise_shell {
        add_noise_shell(&mut hu, &canvas, &samples, sigma, spec.seed)?;
    }

    let labels = LabelVolume::new(
        geometry,
        canvas.owner.iter().map(|&o| if o <= 24 { o } else { 0 }).collect(),
    )?;
    let parts = PartMap {
        geometry,
        parts: canvas
            .owner
            .iter()
            .map(|&o| match o {
                0 => Part::Background as u8,
                1..=24 => Part::Rib as u8,
                SPINE => Part::Spine as u8,
                SHOULDER => Part::Shoulder as u8,
                BRIDGE => Part::Bridge as u8,
                _ => Part::Metal as u8,
            })
            .collect(),
    };
    drop(canvas);

    let spacing = geometry.spacing();
    let mut centerlines = BTreeMap::new();
    for (arc, pts) in arcs.iter().zip(&samples) {
        let mm: Vec<[f64; 3]> = pts
            .iter()
            .map(|p| [p[0] * spacing[0], p[1] * spacing[1], p[2] * spacing[2]])
            .collect();
        let line = resample(&Polyline::new(arc.label, mm), DEFAULT_RESAMPLE_POINTS)?;
        centerlines.insert(arc.label, line);
    }

    Ok(Phantom {
        volume: Volume::new(geometry, VoxelData::I16(hu), crate::ValueKind::Hu)?,
        labels,
        centerlines,
        parts,
    })
}

/// Distinct parts must not touch, even diagonally.
fn check_separation(canvas: &Canvas) -> Result<()> {
    let g = &canvas.geometry;
    let offsets = Connectivity::TwentySix.offsets();
    for (i, &o) in canvas.owner.iter().enumerate() {
        if o == 0 {
            continue;
        }
        let c = g.coords(i).map(|v| v as i64);
        for d in &offsets {
            if let Some(j) = g.checked_index([c[0] + d[0], c[1] + d[1], c[2] + d[2]]) {
                let other = canvas.owner[j];
                if other != 0 && other != o {
                    return Err(Error::SpecInfeasible(format!("parts {o} and {other} touch")));
                }
            }
        }
    }
    Ok(())
}

/// Clears rib voxels near the arc midpoint whose offset along the local
/// tangent is within half the gap.
fn cut_slab(canvas: &mut Canvas, pts: &[[f64; 3]], label: u8, gap: f64, radius: f64) {
    let mid = pts.len() / 2;
    let c = pts[mid];
    let (p, q) = (pts[mid - 1], pts[mid + 1]);
    let mut t = [q[0] - p[0], q[1] - p[1], q[2] - p[2]];
    let n = (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt();
    t = t.map(|v| v / n);
    let reach = (radius + gap).ceil() as i64 + 1;
    let g = canvas.geometry;
    let base = c.map(|v| v.round() as i64);
    for dz in -reach..=reach {
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let Some(i) = g.checked_index([base[0] + dx, base[1] + dy, base[2] + dz]) else {
                    continue;
                };
                if canvas.owner[i] != label {
                    continue;
                }
                let v = g.coords(i).map(|x| x as f64);
                let w = [v[0] - c[0], v[1] - c[1], v[2] - c[2]];
                if (w[0] * t[0] + w[1] * t[1] + w[2] * t[2]).abs() <= gap / 2.0 {
                    canvas.owner[i] = 0;
                }
            }
        }
    }
}

/// Soft tissue (40 HU plus noise) in a box-norm shell 1.15..1.3 times the
/// rib bounding box, over the rib height range.
fn add_noise_shell(hu: &mut [i16], canvas: &Canvas, ribs: &[Vec<[f64; 3]>], sigma: f64, seed: u64) -> Result<()> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in ribs.iter().flatten() {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    if ribs.is_empty() {
        return Ok(());
    }
    let center = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
    let half = [0.5 * (hi[0] - lo[0]), 0.5 * (hi[1] - lo[1])];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let normal = Normal::new(40.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let g = &canvas.geometry;
    let [nx, ny, nz] = g.dims();
    let z0 = (lo[2] - 5.0).max(0.0) as usize;
    let z1 = ((hi[2] + 5.0) as usize).min(nz - 1);
    for z in z0..=z1 {
        for y in 0..ny {
            for x in 0..nx {
                let rho = ((x as f64 - center[0]).abs() / half[0]).max((y as f64 - center[1]).abs() / half[1]);
                if !(1.15..=1.3).contains(&rho) {
                    continue;
                }
                let i = g.index(x, y, z);
                if canvas.owner[i] == 0 {
                    let v: f64 = normal.sample(&mut rng);
                    hu[i] = v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
                }
            }
        }
    }
    Ok(())
}

impl FromStr for Side {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            _ => Err(Error::Parse(format!("side must be left or right, got {s:?}"))),
        }
    }
}

impl FromStr for Sides {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Sides::Left),
            "right" => Ok(Sides::Right),
            "both" => Ok(Sides::Both),
            _ => Err(Error::Parse(format!("sides must be left, right or both, got {s:?}"))),
        }
    }
}

fn side_name(s: Side) -> &'static str {
    match s {
        Side::Left => "left",
        Side::Right => "right",
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{key}: cannot parse {v:?}")))
}

fn parse_list<T: FromStr + Copy, const N: usize>(key: &str, v: &str) -> Result<[T; N]> {
    let parts: Vec<&str> = v.split(',').collect();
    if parts.len() != N {
        return Err(Error::Parse(format!("{key}: expected {N} comma-separated values, got {v:?}")));
    }
    let parsed: Vec<T> = parts.iter().map(|p| parse_num(key, p)).collect::<Result<_>>()?;
    Ok(std::array::from_fn(|i| parsed[i]))
}

impl PhantomSpec {
    /// Parses flat `key=value` lines on top of the defaults. `#` starts a
    /// comment; perturbation keys may repeat.
    pub fn parse(text: &str) -> Result<PhantomSpec> {
        let mut spec = PhantomSpec::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse(format!("line {}: expected key=value, got {raw:?}", n + 1)));
            };
            let (key, v) = (key.trim(), value.trim());
            match key {
                "dims" => spec.dims = parse_list(key, v)?,
                "spacing" => spec.spacing = parse_list(key, v)?,
                "pairs" => spec.pairs = parse_num(key, v)?,
                "tube_radius" => spec.tube_radius = parse_num(key, v)?,
                "spine_radius" => spec.spine_radius = parse_num(key, v)?,
                "costal_gap" => spec.costal_gap = parse_num(key, v)?,
                "tilt_deg" => spec.tilt_deg = parse_num(key, v)?,
                "bone_hu" => spec.bone_hu = parse_num(key, v)?,
                "air_hu" => spec.air_hu = parse_num(key, v)?,
                "shoulder" => spec.shoulder = parse_num(key, v)?,
                "bridges" => spec.bridges = parse_num(key, v)?,
                "jitter" => spec.jitter = parse_num(key, v)?,
                "seed" => spec.seed = parse_num(key, v)?,
                "metal_bridge" => {
                    let [a, b, side]: [&str; 3] = v
                        .split(',')
                        .map(str::trim)
                        .collect::<Vec<_>>()
                        .try_into()
                        .map_err(|_| Error::Parse(format!("metal_bridge: expected pair,pair,side, got {v:?}")))?;
                    spec.perturbations.push(Perturbation::MetalBridge {
                        pair_a: parse_num(key, a)?,
                        pair_b: parse_num(key, b)?,
                        side: side.parse()?,
                    });
                }
                "missing_floating_ribs" => spec
                    .perturbations
                    .push(Perturbation::MissingFloatingRibs { sides: v.parse()? }),
                "hu_noise_shell" => spec
                    .perturbations
                    .push(Perturbation::HuNoiseShell { sigma: parse_num(key, v)? }),
                "fracture" => {
                    let [label, gap]: [usize; 2] = parse_list(key, v)?;
                    if label > 24 {
                        return Err(Error::Parse(format!("fracture: label {label} above 24")));
                    }
                    spec.perturbations.push(Perturbation::Fracture {
                        label: label as u8,
                        gap_voxels: gap,
                    });
                }
                "scoliosis" => spec
                    .perturbations
                    .push(Perturbation::Scoliosis { bend_deg: parse_num(key, v)? }),
                _ => return Err(Error::Parse(format!("line {}: unknown key {key:?}", n + 1))),
            }
        }
        validate(&spec)?;
        Ok(spec)
    }

    /// Inverse of [`PhantomSpec::parse`].
    pub fn to_config(&self) -> String {
        let mut s = String::new();
        let join = |v: &[String]| v.join(",");
        let _ = writeln!(s, "dims={}", join(&self.dims.map(|d| d.to_string())));
        let _ = writeln!(s, "spacing={}", join(&self.spacing.map(|d| d.to_string())));
        let _ = writeln!(s, "pairs={}", self.pairs);
        let _ = writeln!(s, "tube_radius={}", self.tube_radius);
        let _ = writeln!(s, "spine_radius={}", self.spine_radius);
        let _ = writeln!(s, "costal_gap={}", self.costal_gap);
        let _ = writeln!(s, "tilt_deg={}", self.tilt_deg);
        let _ = writeln!(s, "bone_hu={}", self.bone_hu);
        let _ = writeln!(s, "air_hu={}", self.air_hu);
        let _ = writeln!(s, "shoulder={}", self.shoulder);
        let _ = writeln!(s, "bridges={}", self.bridges);
        let _ = writeln!(s, "jitter={}", self.jitter);
        let _ = writeln!(s, "seed={}", self.seed);
        for p in &self.perturbations {
            let _ = match *p {
                Perturbation::MetalBridge { pair_a, pair_b, side } => {
                    writeln!(s, "metal_bridge={pair_a},{pair_b},{}", side_name(side))
                }
                Perturbation::MissingFloatingRibs { sides } => writeln!(
                    s,
                    "missing_floating_ribs={}",
                    match sides {
                        Sides::Left => "left",
                        Sides::Right => "right",
                        Sides::Both => "both",
                    }
                ),
                Perturbation::HuNoiseShell { sigma } => writeln!(s, "hu_noise_shell={sigma}"),
                Perturbation::Fracture { label, gap_voxels } => writeln!(s, "fracture={label},{gap_voxels}"),
                Perturbation::Scoliosis { bend_deg } => writeln!(s, "scoliosis={bend_deg}"),
            };
        }
        s
    }
}
