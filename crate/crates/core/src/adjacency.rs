//! Segment adjacency: which segment pairs touch, and over how many faces.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::volume::SegmentationVolume;

/// Contact areas for every touching pair of distinct nonzero segments.
///
/// Keys are unordered pairs stored as `(smaller id, larger id)`; the value
/// counts face-adjacent (6-neighborhood) voxel pairs with those two labels.
pub type AdjacencyMap = BTreeMap<(u32, u32), u64>;

// Fixed slab height, so the scan partition does not depend on thread count.
const SLAB_Z: usize = 8;

/// Computes the exact contact area between every pair of adjacent segments.
pub fn segment_adjacency(seg: &SegmentationVolume) -> AdjacencyMap {
    let [nz, ny, nx] = seg.dims_zyx();
    let plane = ny * nx;
    let data = seg.data();

    let n_slabs = nz.div_ceil(SLAB_Z);
    let partial: Vec<AdjacencyMap> = (0..n_slabs)
        .into_par_iter()
        .map(|slab| {
            let z0 = slab * SLAB_Z;
            let z1 = (z0 + SLAB_Z).min(nz);
            let mut map = AdjacencyMap::new();
            let mut bump = |a: u32, b: u32| {
                if a != 0 && b != 0 && a != b {
                    let key = if a < b { (a, b) } else { (b, a) };
                    *map.entry(key).or_insert(0) += 1;
                }
            };
            for z in z0..z1 {
                for y in 0..ny {
                    let row = (z * ny + y) * nx;
                    for x in 0..nx {
                        let v = data[row + x];
                        if x + 1 < nx {
                            bump(v, data[row + x + 1]);
                        }
                        if y + 1 < ny {
                            bump(v, data[row + nx + x]);
                        }
                        if z + 1 < nz {
                            bump(v, data[row + plane + x]);
                        }
                    }
                }
            }
            map
        })
        .collect();

    let mut merged = AdjacencyMap::new();
    for map in partial {
        for (key, count) in map {
            *merged.entry(key).or_insert(0) += count;
        }
    }
    merged
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Volume;

    #[test]
    fn single_segment_has_no_adjacency() {
        let vol = Volume::from_data([2, 2, 2], [1.0, 1.0, 1.0], vec![3u32; 8]).unwrap();
        let adj = segment_adjacency(&SegmentationVolume::new(vol));
        assert!(adj.is_empty());
    }

    #[test]
    fn plane_split_contact_area_is_the_cross_section() {
        // Split a volume into two halves along z: contact area is Y * X.
        let [nz, ny, nx] = [4usize, 5, 6];
        let mut data = vec![0u32; nz * ny * nx];
        for z in 0..nz {
            for i in 0..ny * nx {
                data[z * ny * nx + i] = if z < nz / 2 { 1 } else { 2 };
            }
        }
        let vol = Volume::from_data([nz, ny, nx], [4.0, 4.0, 30.0], data).unwrap();
        let adj = segment_adjacency(&SegmentationVolume::new(vol));
        assert_eq!(adj.len(), 1);
        assert_eq!(adj[&(1, 2)], (ny * nx) as u64);
    }

    #[test]
    fn background_faces_are_excluded() {
        // 1 | 0 | 2 along x: no 1-2 contact through the background gap.
        let vol = Volume::from_data([1, 1, 3], [1.0, 1.0, 1.0], vec![1u32, 0, 2]).unwrap();
        let adj = segment_adjacency(&SegmentationVolume::new(vol));
        assert!(adj.is_empty());
    }
}
