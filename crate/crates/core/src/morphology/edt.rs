//! Exact Euclidean distance transform.
//!
//! Squared distances are built by three 1D lower-envelope-of-parabolas passes
//! (Felzenszwalb & Huttenlocher), one per axis, in mm using the voxel spacing.
//! Everything outside the grid counts as background: each pass sees virtual
//! zero-cost sites one voxel before and after the line.

use crate::volume::{BinaryMask, Geometry};

/// Per-voxel distance (mm) from a foreground voxel center to the nearest
/// background voxel center; zero on background.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    geometry: Geometry,
    values: Vec<f64>,
}

impl DistanceField {
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

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

pub fn edt(mask: &BinaryMask) -> DistanceField {
    let geometry = *mask.geometry();
    let mut values = squared_edt(mask);
    for v in &mut values {
        *v = v.sqrt();
    }
    DistanceField { geometry, values }
}

/// Squared distances in mm².
pub fn squared_edt(mask: &BinaryMask) -> Vec<f64> {
    let geometry = *mask.geometry();
    let [nx, ny, nz] = geometry.dims();
    let spacing = geometry.spacing();
    let mut f: Vec<f64> = (0..geometry.len())
        .map(|i| if mask.get(i) { f64::INFINITY } else { 0.0 })
        .collect();

    let longest = nx.max(ny).max(nz);
    let mut env = Envelope::with_capacity(longest + 2);
    let mut line = vec![0.0; longest];
    let mut out = vec![0.0; longest];

    // x lines are contiguous
    for row in f.chunks_mut(nx) {
        if row.iter().all(|&v| v == 0.0) {
            continue;
        }
        line[..nx].copy_from_slice(row);
        env.run(&line[..nx], spacing[0], &mut out[..nx]);
        row.copy_from_slice(&out[..nx]);
    }

    let strided = |f: &mut [f64],
                   env: &mut Envelope,
                   line: &mut [f64],
                   out: &mut [f64],
                   start: usize,
                   stride: usize,
                   n: usize,
                   s: f64| {
        let mut any = false;
        for k in 0..n {
            line[k] = f[start + k * stride];
            any |= line[k] != 0.0;
        }
        if !any {
            return;
        }
        env.run(&line[..n], s, &mut out[..n]);
        for k in 0..n {
            f[start + k * stride] = out[k];
        }
    };

    for z in 0..nz {
        for x in 0..nx {
            let start = x + nx * ny * z;
            strided(&mut f, &mut env, &mut line, &mut out, start, nx, ny, spacing[1]);
        }
    }
    for y in 0..ny {
        for x in 0..nx {
            let start = x + nx * y;
            strided(&mut f, &mut env, &mut line, &mut out, start, nx * ny, nz, spacing[2]);
        }
    }
    f
}

/// Scratch buffers for one lower-envelope pass.
struct Envelope {
    pos: Vec<f64>,
    val: Vec<f64>,
    bounds: Vec<f64>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Envelope {
            pos: Vec::with_capacity(n),
            val: Vec::with_capacity(n),
            bounds: Vec::with_capacity(n + 1),
        }
    }

    /// out[i] = min_j (f[j] + ((i - j) s)^2) over finite sites j, including
    /// zero sites at j = -1 and j = n.
    fn run(&mut self, f: &[f64], s: f64, out: &mut [f64]) {
        let n = f.len();
        self.pos.clear();
        self.val.clear();
        self.bounds.clear();
        self.bounds.push(f64::NEG_INFINITY);

        let sites = std::iter::once((-s, 0.0))
            .chain(
                f.iter()
                    .enumerate()
                    .filter(|(_, v)| v.is_finite())
                    .map(|(j, &v)| (j as f64 * s, v)),
            )
            .chain(std::iter::once((n as f64 * s, 0.0)));

        for (q, fq) in sites {
            loop {
                let Some(&p) = self.pos.last() else { break };
                let fp = *self.val.last().unwrap();
                let cross = ((fq + q * q) - (fp + p * p)) / (2.0 * (q - p));
                if cross <= *self.bounds.last().unwrap() {
                    self.pos.pop();
                    self.val.pop();
                    self.bounds.pop();
                } else {
                    self.pos.push(q);
                    self.val.push(fq);
                    self.bounds.push(cross);
                    break;
                }
            }
            if self.pos.is_empty() {
                self.pos.push(q);
                self.val.push(fq);
                if self.bounds.is_empty() {
                    self.bounds.push(f64::NEG_INFINITY);
                }
            }
        }

        let mut k = 0;
        for (i, o) in out.iter_mut().enumerate() {
            let x = i as f64 * s;
            while k + 1 < self.pos.len() && self.bounds[k + 1] < x {
                k += 1;
            }
            let d = x - self.pos[k];
            *o = d * d + self.val[k];
        }
    }
}
