//! Brute-force reference implementations for cross-checking the fast kernels.
//!
//! Each oracle runs independent nearest-neighbour scans or flood fills; the
//! work of any single scan is capped at [`MAX_PAIRS`] candidate evaluations.

use crate::error::{Error, Result};
use crate::morphology::Connectivity;
use crate::volume::BinaryMask;

pub const MAX_PAIRS: u64 = 1_000_000;

fn check(pairs: usize) -> Result<()> {
    if pairs as u64 > MAX_PAIRS {
        Err(Error::TooLarge {
            pairs: pairs as u64,
            cap: MAX_PAIRS,
        })
    } else {
        Ok(())
    }
}

fn euclid(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn directed(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let mut total = 0.0;
    for &p in a {
        let mut best = f64::INFINITY;
        for &q in b {
            best = best.min(euclid(p, q));
        }
        total += best;
    }
    total / a.len() as f64
}

/// Sum of both directed mean nearest distances.
pub fn oracle_chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyLine);
    }
    check(a.len().max(b.len()))?;
    Ok(directed(a, b) + directed(b, a))
}

/// Directed mean nearest distance from `line` to `segmentation`.
pub fn oracle_directed_chamfer(line: &[[f64; 3]], segmentation: &[[f64; 3]]) -> Result<f64> {
    if line.is_empty() {
        return Err(Error::EmptyLine);
    }
    if segmentation.is_empty() {
        return Err(Error::EmptySegmentation);
    }
    check(segmentation.len())?;
    Ok(directed(line, segmentation))
}

/// Distance (mm) from every foreground voxel to the nearest background voxel
/// center, scanning the whole grid per voxel. Positions outside the grid are
/// background; the closest of them is one step past the nearest face.
pub fn oracle_edt(mask: &BinaryMask) -> Result<Vec<f64>> {
    let g = mask.geometry();
    check(g.len())?;
    let dims = g.dims();
    let s = g.spacing();
    let background: Vec<[f64; 3]> = (0..g.len()).filter(|&i| !mask.get(i)).map(|i| g.to_mm(i)).collect();
    Ok((0..g.len())
        .map(|i| {
            if !mask.get(i) {
                return 0.0;
            }
            let c = g.coords(i);
            let p = g.to_mm(i);
            let mut best = (0..3)
                .map(|a| ((c[a] + 1).min(dims[a] - c[a])) as f64 * s[a])
                .fold(f64::INFINITY, f64::min);
            for &q in &background {
                best = best.min(euclid(p, q));
            }
            best
        })
        .collect())
}

/// Component ids by flood fill, numbered in order of first raster voxel.
pub fn oracle_cc(mask: &BinaryMask, connectivity: Connectivity) -> Result<Vec<u32>> {
    let g = mask.geometry();
    check(g.len())?;
    let offsets = connectivity.offsets();
    let mut ids = vec![0u32; g.len()];
    let mut next = 0;
    let mut stack = Vec::new();
    for seed in 0..g.len() {
        if !mask.get(seed) || ids[seed] != 0 {
            continue;
        }
        next += 1;
        ids[seed] = next;
        stack.push(seed);
        while let Some(v) = stack.pop() {
            let c = g.coords(v).map(|x| x as i64);
            for d in &offsets {
                if let Some(j) = g.checked_index([c[0] + d[0], c[1] + d[1], c[2] + d[2]]) {
                    if mask.get(j) && ids[j] == 0 {
                        ids[j] = next;
                        stack.push(j);
                    }
                }
            }
        }
    }
    Ok(ids)
}

/// Renumbers ids in order of first appearance, keeping 0, so that two
/// labelings of the same partition compare equal.
pub fn canonical_partition(ids: &[u32]) -> Vec<u32> {
    let mut map = std::collections::HashMap::new();
    ids.iter()
        .map(|&id| {
            if id == 0 {
                0
            } else {
                let n = map.len() as u32 + 1;
                *map.entry(id).or_insert(n)
            }
        })
        .collect()
}
