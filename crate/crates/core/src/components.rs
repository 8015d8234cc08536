//! Connected-component labeling over binary volumes.
//!
//! Components carry a canonical id: the smallest linear index among their
//! voxels. Canonical ids make the labeling independent of visitation order
//! and of how the volume is partitioned for parallel scanning, so results
//! are bit-identical for any worker-thread count.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::Volume;

/// Voxel neighborhood used when clustering.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Connectivity {
    Six,
    Eighteen,
    TwentySix,
}

impl Connectivity {
    /// Parses the conventional 6/18/26 neighbor counts.
    pub fn from_value(value: u32) -> Result<Self> {
        match value {
            6 => Ok(Connectivity::Six),
            18 => Ok(Connectivity::Eighteen),
            26 => Ok(Connectivity::TwentySix),
            other => Err(Error::Parameter(format!(
                "connectivity must be 6, 18 or 26, got {other}"
            ))),
        }
    }

    pub fn offsets(self) -> Vec<[i64; 3]> {
        let mut offs = Vec::new();
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dz == 0 && dy == 0 && dx == 0 {
                        continue;
                    }
                    let manhattan = dz.abs() + dy.abs() + dx.abs();
                    let keep = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::Eighteen => manhattan <= 2,
                        Connectivity::TwentySix => true,
                    };
                    if keep {
                        offs.push([dz, dy, dx]);
                    }
                }
            }
        }
        offs
    }
}

/// One connected component of a binary volume.
///
/// `voxels` holds linear indices, strictly increasing; `id` equals the first
/// (smallest) of them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Component {
    pub id: u32,
    pub voxels: Vec<u32>,
}

impl Component {
    #[inline]
    pub fn size(&self) -> usize {
        self.voxels.len()
    }

    #[inline]
    pub fn contains(&self, linear_index: u32) -> bool {
        self.voxels.binary_search(&linear_index).is_ok()
    }
}

/// Finds a component by canonical id in a list sorted by id.
pub fn find_component(components: &[Component], id: u32) -> Option<&Component> {
    components
        .binary_search_by_key(&id, |c| c.id)
        .ok()
        .map(|i| &components[i])
}

const UNLABELED: u32 = u32::MAX;
// Fixed slab height so the partition (and hence nothing observable) depends
// on the worker count.
const SLAB_Z: usize = 8;

/// Labels the connected components of `mask` (nonzero = foreground).
///
/// Returns a label volume holding `component id + 1` per foreground voxel
/// (0 = background; the +1 keeps 0 free since a canonical id may itself be
/// 0), and the component list sorted by id.
pub fn connected_components(
    mask: &Volume<u8>,
    connectivity: Connectivity,
) -> Result<(Volume<u32>, Vec<Component>)> {
    let [nz, ny, nx] = mask.dims_zyx();
    let plane = ny * nx;
    let offsets = connectivity.offsets();
    let data = mask.data();

    // Pass 1: provisional labels per z-slab, in parallel. Within a slab the
    // raster scan guarantees each flood starts at its component's smallest
    // linear index, which becomes the provisional label.
    let mut provisional = vec![UNLABELED; data.len()];
    provisional
        .par_chunks_mut(SLAB_Z * plane)
        .enumerate()
        .for_each(|(slab, labels)| {
            let z0 = slab * SLAB_Z;
            let z1 = (z0 + SLAB_Z).min(nz);
            let base = z0 * plane;
            let mut stack: Vec<usize> = Vec::new();
            for local in 0..labels.len() {
                let start = base + local;
                if data[start] == 0 || labels[local] != UNLABELED {
                    continue;
                }
                labels[local] = start as u32;
                stack.push(start);
                while let Some(v) = stack.pop() {
                    let z = v / plane;
                    let rest = v % plane;
                    let y = rest / nx;
                    let x = rest % nx;
                    for off in &offsets {
                        let zz = z as i64 + off[0];
                        let yy = y as i64 + off[1];
                        let xx = x as i64 + off[2];
                        if zz < z0 as i64
                            || zz >= z1 as i64
                            || yy < 0
                            || yy >= ny as i64
                            || xx < 0
                            || xx >= nx as i64
                        {
                            continue;
                        }
                        let w = (zz as usize * ny + yy as usize) * nx + xx as usize;
                        if data[w] != 0 && labels[w - base] == UNLABELED {
                            labels[w - base] = start as u32;
                            stack.push(w);
                        }
                    }
                }
            }
        });

    // Pass 2: stitch slab boundaries with a union-find whose root is always
    // the smallest provisional label of the set.
    let mut parent: HashMap<u32, u32> = HashMap::new();
    let find = |parent: &mut HashMap<u32, u32>, mut v: u32| -> u32 {
        let mut path = Vec::new();
        while let Some(&p) = parent.get(&v) {
            if p == v {
                break;
            }
            path.push(v);
            v = p;
        }
        for n in path {
            parent.insert(n, v);
        }
        v
    };
    let mut slab_top = SLAB_Z;
    while slab_top < nz {
        let z = slab_top - 1; // last plane of the lower slab
        for y in 0..ny {
            for x in 0..nx {
                let a = (z * ny + y) * nx + x;
                if data[a] == 0 {
                    continue;
                }
                for off in &offsets {
                    if off[0] != 1 {
                        continue;
                    }
                    let yy = y as i64 + off[1];
                    let xx = x as i64 + off[2];
                    if yy < 0 || yy >= ny as i64 || xx < 0 || xx >= nx as i64 {
                        continue;
                    }
                    let b = ((z + 1) * ny + yy as usize) * nx + xx as usize;
                    if data[b] == 0 {
                        continue;
                    }
                    let ra = find(&mut parent, provisional[a]);
                    let rb = find(&mut parent, provisional[b]);
                    if ra != rb {
                        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
                        parent.insert(hi, lo);
                        parent.entry(lo).or_insert(lo);
                    }
                }
            }
        }
        slab_top += SLAB_Z;
    }

    // Pass 3: resolve canonical ids and build the label volume and the
    // component voxel lists in one ascending scan (so voxel lists come out
    // sorted and components appear in id order).
    let mut canonical: HashMap<u32, u32> = HashMap::new();
    let mut label_data = vec![0u32; data.len()];
    let mut order: Vec<u32> = Vec::new();
    let mut buckets: HashMap<u32, Vec<u32>> = HashMap::new();
    for v in 0..data.len() {
        if data[v] == 0 {
            continue;
        }
        let prov = provisional[v];
        let id = match canonical.get(&prov) {
            Some(&id) => id,
            None => {
                let id = find(&mut parent, prov);
                canonical.insert(prov, id);
                id
            }
        };
        label_data[v] = id + 1;
        match buckets.get_mut(&id) {
            Some(list) => list.push(v as u32),
            None => {
                order.push(id);
                buckets.insert(id, vec![v as u32]);
            }
        }
    }
    let components: Vec<Component> = order
        .into_iter()
        .map(|id| Component {
            id,
            voxels: buckets.remove(&id).unwrap(),
        })
        .collect();
    debug_assert!(components.windows(2).all(|w| w[0].id < w[1].id));

    let labels = Volume::from_data(mask.dims_zyx(), mask.voxel_size_nm_xyz(), label_data)?;
    Ok((labels, components))
}

/// Renders components into a u32 volume holding `id + 1` (0 = background),
/// the encoding produced by [`connected_components`].
pub fn component_label_volume(
    dims_zyx: [usize; 3],
    voxel_size_nm_xyz: [f64; 3],
    components: &[Component],
) -> Result<Volume<u32>> {
    let mut vol = Volume::zeros(dims_zyx, voxel_size_nm_xyz)?;
    let data = vol.data_mut();
    for comp in components {
        for &v in &comp.voxels {
            let i = v as usize;
            if i >= data.len() {
                return Err(Error::Shape(format!(
                    "component {} voxel {} outside volume of {} voxels",
                    comp.id,
                    v,
                    data.len()
                )));
            }
            data[i] = comp.id + 1;
        }
    }
    Ok(vol)
}

/// Rebuilds the component list from a label volume written by
/// [`component_label_volume`]. Verifies the canonical-id convention.
pub fn components_from_label_volume(labels: &Volume<u32>) -> Result<Vec<Component>> {
    let mut order: Vec<u32> = Vec::new();
    let mut buckets: HashMap<u32, Vec<u32>> = HashMap::new();
    for (v, &raw) in labels.data().iter().enumerate() {
        if raw == 0 {
            continue;
        }
        let id = raw - 1;
        match buckets.get_mut(&id) {
            Some(list) => list.push(v as u32),
            None => {
                order.push(id);
                buckets.insert(id, vec![v as u32]);
            }
        }
    }
    order.sort_unstable();
    let components: Vec<Component> = order
        .into_iter()
        .map(|id| Component {
            id,
            voxels: buckets.remove(&id).unwrap(),
        })
        .collect();
    for comp in &components {
        if comp.voxels[0] != comp.id {
            return Err(Error::Format {
                path: "<label volume>".into(),
                reason: format!(
                    "label {} does not match its smallest voxel index {}",
                    comp.id, comp.voxels[0]
                ),
            });
        }
    }
    Ok(components)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(dims: [usize; 3], fg: &[[usize; 3]]) -> Volume<u8> {
        let mut m = Volume::zeros(dims, [4.0, 4.0, 30.0]).unwrap();
        for &[z, y, x] in fg {
            m.set(z, y, x, 1);
        }
        m
    }

    #[test]
    fn empty_mask_has_no_components() {
        let m: Volume<u8> = Volume::zeros([4, 4, 4], [1.0, 1.0, 1.0]).unwrap();
        let (labels, comps) = connected_components(&m, Connectivity::TwentySix).unwrap();
        assert!(comps.is_empty());
        assert!(labels.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn corner_touch_merges_only_under_26() {
        // Two voxels sharing only a corner.
        let m = mask_from([2, 2, 2], &[[0, 0, 0], [1, 1, 1]]);
        let (_, c26) = connected_components(&m, Connectivity::TwentySix).unwrap();
        assert_eq!(c26.len(), 1);
        let (_, c6) = connected_components(&m, Connectivity::Six).unwrap();
        assert_eq!(c6.len(), 2);
        // An edge touch merges under 18 but not 6.
        let m = mask_from([1, 2, 2], &[[0, 0, 0], [0, 1, 1]]);
        let (_, c18) = connected_components(&m, Connectivity::Eighteen).unwrap();
        assert_eq!(c18.len(), 1);
        let (_, c6) = connected_components(&m, Connectivity::Six).unwrap();
        assert_eq!(c6.len(), 2);
    }

    #[test]
    fn canonical_ids_are_minimum_linear_indices() {
        let m = mask_from([1, 3, 3], &[[0, 0, 1], [0, 1, 1], [0, 2, 0]]);
        let (labels, comps) = connected_components(&m, Connectivity::Six).unwrap();
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0].id, 1);
        assert_eq!(comps[0].voxels, vec![1, 4]);
        assert_eq!(comps[1].id, 6);
        assert_eq!(labels.get(0, 0, 1), 2); // id 1, stored +1
        assert_eq!(labels.get(0, 2, 0), 7);
    }

    #[test]
    fn component_spanning_many_slabs_is_stitched() {
        // A single 1-voxel-wide column through 40 z-slices crosses several
        // slab boundaries.
        let fg: Vec<[usize; 3]> = (0..40).map(|z| [z, 0, 0]).collect();
        let m = mask_from([40, 2, 2], &fg);
        let (_, comps) = connected_components(&m, Connectivity::Six).unwrap();
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].size(), 40);
        assert_eq!(comps[0].id, 0);
    }

    #[test]
    fn label_volume_round_trip() {
        let m = mask_from([3, 3, 3], &[[0, 0, 0], [0, 0, 1], [2, 2, 2], [1, 1, 1]]);
        let (labels, comps) = connected_components(&m, Connectivity::TwentySix).unwrap();
        let rebuilt = components_from_label_volume(&labels).unwrap();
        assert_eq!(comps, rebuilt);
        let rendered = component_label_volume([3, 3, 3], [4.0, 4.0, 30.0], &comps).unwrap();
        assert_eq!(rendered.data(), labels.data());
    }

    #[test]
    fn invalid_connectivity_value_is_rejected() {
        assert!(Connectivity::from_value(4).is_err());
        assert!(Connectivity::from_value(26).is_ok());
    }
}
