use crate::volume::{BinaryMask, BoundingBox, Geometry};

/// Voxel adjacency used for component analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    /// Face neighbors only.
    Six,
    /// Face, edge and corner neighbors.
    #[default]
    TwentySix,
}

impl Connectivity {
    /// Neighbor offsets that precede a voxel in raster order.
    fn backward_offsets(self) -> Vec<[i64; 3]> {
        let mut out = Vec::new();
        for dz in -1..=0i64 {
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let before = dz < 0 || (dz == 0 && (dy < 0 || (dy == 0 && dx < 0)));
                    if !before {
                        continue;
                    }
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    if self == Connectivity::Six && manhattan != 1 {
                        continue;
                    }
                    out.push([dx, dy, dz]);
                }
            }
        }
        out
    }

    /// All neighbor offsets.
    pub fn offsets(self) -> Vec<[i64; 3]> {
        let mut out = Vec::new();
        for dz in -1..=1i64 {
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    if manhattan == 0 || (self == Connectivity::Six && manhattan != 1) {
                        continue;
                    }
                    out.push([dx, dy, dz]);
                }
            }
        }
        out
    }
}

/// Foreground partition into maximal connected sets.
///
/// Ids run 1..=K in decreasing size order; equal sizes are ordered by the
/// smallest linear index in the component. Id 0 marks background.
#[derive(Debug, Clone)]
pub struct ComponentMap {
    geometry: Geometry,
    ids: Vec<u32>,
    sizes: Vec<usize>,
    bboxes: Vec<BoundingBox>,
    centroids: Vec<[f64; 3]>,
    first_voxels: Vec<usize>,
}

impl ComponentMap {
    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    /// Number of components K.
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    #[inline]
    pub fn id(&self, index: usize) -> u32 {
        self.ids[index]
    }

    /// Sizes indexed by `id - 1`.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn size(&self, id: u32) -> usize {
        self.sizes[id as usize - 1]
    }

    pub fn bbox(&self, id: u32) -> BoundingBox {
        self.bboxes[id as usize - 1]
    }

    /// Mean voxel index of the component.
    pub fn centroid(&self, id: u32) -> [f64; 3] {
        self.centroids[id as usize - 1]
    }

    /// Smallest linear index belonging to the component.
    pub fn first_voxel(&self, id: u32) -> usize {
        self.first_voxels[id as usize - 1]
    }

    pub fn mask_of(&self, id: u32) -> BinaryMask {
        self.mask_where(|c| c == id)
    }

    pub fn mask_where(&self, keep: impl Fn(u32) -> bool) -> BinaryMask {
        BinaryMask::from_indices(
            self.geometry,
            self.ids
                .iter()
                .enumerate()
                .filter(|(_, &c)| c != 0 && keep(c))
                .map(|(i, _)| i),
        )
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    let mut root = x;
    while parent[root as usize] != root {
        root = parent[root as usize];
    }
    while parent[x as usize] != root {
        let next = parent[x as usize];
        parent[x as usize] = root;
        x = next;
    }
    root
}

/// Labels connected foreground components with a two-pass union-find scan.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> ComponentMap {
    let geometry = *mask.geometry();
    let offsets: Vec<([i64; 3], isize)> = connectivity
        .backward_offsets()
        .into_iter()
        .map(|d| {
            let [nx, ny, _] = geometry.dims().map(|n| n as i64);
            (d, (d[0] + nx * (d[1] + ny * d[2])) as isize)
        })
        .collect();
    let dims = geometry.dims().map(|n| n as i64);

    // Provisional labels, 1-based; parent[0] is unused.
    let mut provisional = vec![0u32; geometry.len()];
    let mut parent: Vec<u32> = vec![0];

    for i in mask.iter_ones() {
        let c = geometry.coords(i).map(|v| v as i64);
        let mut current = 0u32;
        for &(d, step) in &offsets {
            let n = [c[0] + d[0], c[1] + d[1], c[2] + d[2]];
            if (0..3).any(|a| n[a] < 0 || n[a] >= dims[a]) {
                continue;
            }
            let neighbor = provisional[(i as isize + step) as usize];
            if neighbor == 0 {
                continue;
            }
            let root = find(&mut parent, neighbor);
            if current == 0 {
                current = root;
            } else if root != current {
                let (lo, hi) = if root < current { (root, current) } else { (current, root) };
                parent[hi as usize] = lo;
                current = lo;
            }
        }
        if current == 0 {
            current = parent.len() as u32;
            parent.push(current);
        }
        provisional[i] = current;
    }

    // Resolve roots and gather per-root statistics.
    struct Stats {
        size: usize,
        first: usize,
        bbox: BoundingBox,
        sum: [f64; 3],
    }
    let mut slot_of_root = vec![u32::MAX; parent.len()];
    let mut stats: Vec<Stats> = Vec::new();
    for i in mask.iter_ones() {
        let root = find(&mut parent, provisional[i]);
        let c = geometry.coords(i);
        let slot = &mut slot_of_root[root as usize];
        if *slot == u32::MAX {
            *slot = stats.len() as u32;
            stats.push(Stats {
                size: 0,
                first: i,
                bbox: BoundingBox::point(c),
                sum: [0.0; 3],
            });
        }
        let s = &mut stats[*slot as usize];
        s.size += 1;
        s.bbox.include(c);
        for a in 0..3 {
            s.sum[a] += c[a] as f64;
        }
        provisional[i] = *slot + 1;
    }

    let mut order: Vec<usize> = (0..stats.len()).collect();
    order.sort_by(|&a, &b| {
        stats[b]
            .size
            .cmp(&stats[a].size)
            .then(stats[a].first.cmp(&stats[b].first))
    });
    let mut final_id = vec![0u32; stats.len()];
    for (rank, &slot) in order.iter().enumerate() {
        final_id[slot] = rank as u32 + 1;
    }
    for i in mask.iter_ones() {
        provisional[i] = final_id[provisional[i] as usize - 1];
    }

    ComponentMap {
        geometry,
        ids: provisional,
        sizes: order.iter().map(|&s| stats[s].size).collect(),
        bboxes: order.iter().map(|&s| stats[s].bbox).collect(),
        centroids: order
            .iter()
            .map(|&s| stats[s].sum.map(|v| v / stats[s].size as f64))
            .collect(),
        first_voxels: order.iter().map(|&s| stats[s].first).collect(),
    }
}

/// Default minimum component size kept by [`ccd`].
pub const DEFAULT_CCD_MIN_VOXELS: usize = 500;

/// Connected-component denoising: drops 26-connected components smaller than
/// `min_voxels` and, when `keep_top_k` is set, everything beyond the k largest.
pub fn ccd(mask: &BinaryMask, min_voxels: usize, keep_top_k: Option<usize>) -> BinaryMask {
    let cc = connected_components(mask, Connectivity::TwentySix);
    let limit = keep_top_k.unwrap_or(usize::MAX);
    cc.mask_where(|id| cc.size(id) >= min_voxels && (id as usize) <= limit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_at(g: Geometry, origin: [usize; 3], edge: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for z in 0..edge {
            for y in 0..edge {
                for x in 0..edge {
                    out.push(g.index(origin[0] + x, origin[1] + y, origin[2] + z));
                }
            }
        }
        out
    }

    #[test]
    fn two_disjoint_cubes() {
        let g = Geometry::isotropic([10, 10, 10]).unwrap();
        let mut idx = cube_at(g, [0, 0, 0], 3);
        idx.extend(cube_at(g, [5, 5, 5], 3));
        let cc = connected_components(&BinaryMask::from_indices(g, idx), Connectivity::TwentySix);
        assert_eq!(cc.count(), 2);
        assert_eq!(cc.sizes(), &[27, 27]);
        // equal sizes: the component holding voxel 0 comes first
        assert_eq!(cc.id(0), 1);
        assert_eq!(cc.bbox(2).min, [5, 5, 5]);
        assert_eq!(cc.centroid(2), [6.0, 6.0, 6.0]);
    }

    #[test]
    fn corner_contact_depends_on_connectivity() {
        let g = Geometry::isotropic([3, 3, 3]).unwrap();
        let m = BinaryMask::from_indices(g, [g.index(0, 0, 0), g.index(1, 1, 1)]);
        assert_eq!(connected_components(&m, Connectivity::TwentySix).count(), 1);
        assert_eq!(connected_components(&m, Connectivity::Six).count(), 2);
    }

    #[test]
    fn ids_follow_size_order() {
        let g = Geometry::isotropic([12, 12, 12]).unwrap();
        let mut idx = vec![g.index(0, 0, 0)];
        idx.extend(cube_at(g, [4, 4, 4], 4));
        idx.extend(cube_at(g, [0, 8, 8], 2));
        let cc = connected_components(&BinaryMask::from_indices(g, idx), Connectivity::Six);
        assert_eq!(cc.sizes(), &[64, 8, 1]);
        assert_eq!(cc.id(g.index(0, 0, 0)), 3);
    }

    #[test]
    fn u_shape_merges_late() {
        // two arms joined only at the far end force a union of provisional labels
        let g = Geometry::isotropic([5, 5, 1]).unwrap();
        let m = BinaryMask::from_fn(g, |x, y, _| x == 0 || x == 4 || y == 4);
        let cc = connected_components(&m, Connectivity::Six);
        assert_eq!(cc.count(), 1);
        assert_eq!(cc.size(1), 13);
    }

    #[test]
    fn empty_mask_has_no_components() {
        let g = Geometry::isotropic([4, 4, 4]).unwrap();
        let cc = connected_components(&BinaryMask::empty(g), Connectivity::TwentySix);
        assert_eq!(cc.count(), 0);
        assert!(cc.ids().iter().all(|&i| i == 0));
    }

    #[test]
    fn ccd_size_rule() {
        let g = Geometry::isotropic([40, 40, 40]).unwrap();
        let mut big = Vec::new();
        for z in 0..10 {
            for y in 0..25 {
                for x in 0..40 {
                    big.push(g.index(x, y, z));
                }
            }
        }
        assert_eq!(big.len(), 10_000);
        let mut idx = big.clone();
        for z in 20..24 {
            for y in 30..35 {
                for x in 0..5 {
                    idx.push(g.index(x, y, z));
                }
            }
        }
        let m = BinaryMask::from_indices(g, idx);
        let out = ccd(&m, 500, None);
        assert_eq!(out, BinaryMask::from_indices(g, big));
        assert_eq!(ccd(&out, 500, None), out);
        assert_eq!(ccd(&m, 0, None), m);
        assert_eq!(ccd(&m, 0, Some(1)), out);
    }

    #[test]
    fn ccd_on_empty() {
        let g = Geometry::isotropic([4, 4, 4]).unwrap();
        assert_eq!(ccd(&BinaryMask::empty(g), 500, None).count(), 0);
    }

    #[test]
    fn offsets_counts() {
        assert_eq!(Connectivity::Six.offsets().len(), 6);
        assert_eq!(Connectivity::TwentySix.offsets().len(), 26);
        assert_eq!(Connectivity::Six.backward_offsets().len(), 3);
        assert_eq!(Connectivity::TwentySix.backward_offsets().len(), 13);
    }
}
