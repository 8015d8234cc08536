//! Candidate generation: thresholded proximity components paired across
//! adjacent segments.
//!
//! A predicted proximity volume is thresholded at `|value| >= tau` into
//! pre-synaptic (positive) and post-synaptic (negative) 26-connected
//! components. Each component becomes a site candidate for every segment it
//! overlaps by at least `omega` voxels, and site pairs whose segments share
//! a boundary become candidates, anchored at the closest point between the
//! two components.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjacency::AdjacencyMap;
use crate::components::{connected_components, find_component, Component, Connectivity};
use crate::error::{Error, Result};
use crate::volume::{ProximityVolume, SegmentationVolume, Volume};

/// Thresholds and size gates for candidate generation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateParams {
    /// Absolute proximity threshold in (0, 1); comparisons are inclusive.
    pub tau: f64,
    /// Minimum component-segment overlap in voxels.
    pub omega: u64,
    /// Minimum segment-pair contact area to count as adjacent.
    pub min_contact_area: u64,
    /// Optional cutoff on the anchor distance; infinite disables it.
    pub max_anchor_nm: f64,
}

impl CandidateParams {
    pub fn new(tau: f64, omega: u64, min_contact_area: u64, max_anchor_nm: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::Parameter(format!("tau must lie in (0, 1), got {tau}")));
        }
        if omega < 1 {
            return Err(Error::Parameter("omega must be at least 1".into()));
        }
        if min_contact_area < 1 {
            return Err(Error::Parameter("min contact area must be at least 1".into()));
        }
        if max_anchor_nm.is_nan() || max_anchor_nm <= 0.0 {
            return Err(Error::Parameter(format!(
                "max anchor distance must be positive, got {max_anchor_nm}"
            )));
        }
        Ok(Self { tau, omega, min_contact_area, max_anchor_nm })
    }
}

impl Default for CandidateParams {
    fn default() -> Self {
        Self { tau: 0.3, omega: 100, min_contact_area: 1, max_anchor_nm: f64::INFINITY }
    }
}

/// A thresholded component paired with one segment it overlaps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SiteCandidate {
    pub component_id: u32,
    pub segment_id: u32,
    pub overlap_voxels: u64,
}

/// A putative pre -> post synaptic connection.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub pre: SiteCandidate,
    pub post: SiteCandidate,
    /// Voxel nearest the midpoint of the closest component voxel pair.
    pub anchor_zyx: [usize; 3],
    pub anchor_dist_nm: f64,
    pub score: Option<f64>,
}

/// The JSON-lines serialization of a candidate; the candidate id is the
/// 0-based line number.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CandidateRecord {
    pub pre_comp: u32,
    pub post_comp: u32,
    pub pre_seg: u32,
    pub post_seg: u32,
    pub anchor_zyx: [usize; 3],
    pub anchor_dist_nm: f64,
    pub score: Option<f64>,
}

impl From<&Candidate> for CandidateRecord {
    fn from(c: &Candidate) -> Self {
        CandidateRecord {
            pre_comp: c.pre.component_id,
            post_comp: c.post.component_id,
            pre_seg: c.pre.segment_id,
            post_seg: c.post.segment_id,
            anchor_zyx: c.anchor_zyx,
            anchor_dist_nm: c.anchor_dist_nm,
            score: c.score,
        }
    }
}

/// Splits a proximity volume at `tau` into pre (values >= tau) and post
/// (values <= -tau) 26-connected components.
pub fn polar_components(
    prox: &ProximityVolume,
    tau: f64,
) -> Result<(Vec<Component>, Vec<Component>)> {
    let dims = prox.dims_zyx();
    let spacing = prox.voxel_size_nm_xyz();
    let mut pre_mask: Volume<u8> = Volume::zeros(dims, spacing)?;
    let mut post_mask: Volume<u8> = Volume::zeros(dims, spacing)?;
    let pre_data = pre_mask.data_mut();
    let post_data = post_mask.data_mut();
    for (i, &v) in prox.data().iter().enumerate() {
        let v = v as f64;
        if v >= tau {
            pre_data[i] = 1;
        } else if v <= -tau {
            post_data[i] = 1;
        }
    }
    let (_, pre) = connected_components(&pre_mask, Connectivity::TwentySix)?;
    let (_, post) = connected_components(&post_mask, Connectivity::TwentySix)?;
    Ok((pre, post))
}

/// Pairs every component with the segments it overlaps by at least `omega`
/// voxels. Segment 0 never qualifies. Output is sorted by
/// (component id, segment id).
pub fn site_candidates(
    components: &[Component],
    seg: &SegmentationVolume,
    omega: u64,
    dims_zyx: [usize; 3],
) -> Result<Vec<SiteCandidate>> {
    if seg.dims_zyx() != dims_zyx {
        return Err(Error::Shape(format!(
            "segmentation dims {:?} do not match component volume dims {:?}",
            seg.dims_zyx(),
            dims_zyx
        )));
    }
    let seg_data = seg.data();
    let mut sites: Vec<SiteCandidate> = components
        .par_iter()
        .flat_map_iter(|comp| {
            let mut overlaps: HashMap<u32, u64> = HashMap::new();
            for &v in &comp.voxels {
                let s = seg_data[v as usize];
                if s != 0 {
                    *overlaps.entry(s).or_insert(0) += 1;
                }
            }
            let mut qualified: Vec<SiteCandidate> = overlaps
                .into_iter()
                .filter(|&(_, count)| count >= omega)
                .map(|(segment_id, overlap_voxels)| SiteCandidate {
                    component_id: comp.id,
                    segment_id,
                    overlap_voxels,
                })
                .collect();
            qualified.sort_by_key(|s| s.segment_id);
            qualified
        })
        .collect();
    sites.sort_by_key(|s| (s.component_id, s.segment_id));
    Ok(sites)
}

/// Closest approach between two components: returns the voxel nearest the
/// midpoint of the minimizing voxel pair (rounding toward the pre side) and
/// the pair's anisotropic distance in nm.
///
/// Distance ties resolve to the lexicographically smallest
/// (pre linear index, post linear index) pair.
pub fn anchor_point(
    pre: &Component,
    post: &Component,
    dims_zyx: [usize; 3],
    spacing_nm_zyx: [f64; 3],
) -> ([usize; 3], f64) {
    let [_, ny, nx] = dims_zyx;
    let coords = |v: u32| -> [usize; 3] {
        let v = v as usize;
        [v / (ny * nx), (v / nx) % ny, v % nx]
    };
    let mut best_d2 = f64::INFINITY;
    let mut best_pair = ([0usize; 3], [0usize; 3]);
    for &pv in &pre.voxels {
        let pc = coords(pv);
        // Lower bound on the pair distance from the z offset alone lets us
        // skip post voxels early on large components.
        for &ov in &post.voxels {
            let oc = coords(ov);
            let dz = (pc[0] as f64 - oc[0] as f64) * spacing_nm_zyx[0];
            let z2 = dz * dz;
            if z2 > best_d2 {
                continue;
            }
            let dy = (pc[1] as f64 - oc[1] as f64) * spacing_nm_zyx[1];
            let dx = (pc[2] as f64 - oc[2] as f64) * spacing_nm_zyx[2];
            let d2 = z2 + dy * dy + dx * dx;
            // Strict improvement only: scanning in ascending (pre, post)
            // linear order makes the first minimum the lexicographic winner.
            if d2 < best_d2 {
                best_d2 = d2;
                best_pair = (pc, oc);
            }
        }
    }
    let (pc, oc) = best_pair;
    let mut anchor = [0usize; 3];
    for axis in 0..3 {
        let sum = pc[axis] + oc[axis];
        // Round to the nearest voxel; a half-step midpoint rounds toward
        // the pre-side coordinate.
        anchor[axis] = if sum % 2 == 0 {
            sum / 2
        } else if pc[axis] < oc[axis] {
            sum / 2
        } else {
            sum / 2 + 1
        };
    }
    (anchor, best_d2.sqrt())
}

/// Enumerates candidates: every (pre site, post site) pair on distinct,
/// adjacent segments within the anchor distance cutoff, ordered by
/// (pre component, post component, pre segment, post segment).
pub fn pair_candidates(
    pre_sites: &[SiteCandidate],
    post_sites: &[SiteCandidate],
    pre_components: &[Component],
    post_components: &[Component],
    adjacency: &AdjacencyMap,
    params: &CandidateParams,
    dims_zyx: [usize; 3],
    spacing_nm_zyx: [f64; 3],
) -> Vec<Candidate> {
    // Anchor geometry depends only on the component pair; compute each once.
    let mut anchors: HashMap<(u32, u32), ([usize; 3], f64)> = HashMap::new();
    let mut out = Vec::new();
    for pre in pre_sites {
        for post in post_sites {
            if pre.segment_id == post.segment_id {
                continue;
            }
            let key = if pre.segment_id < post.segment_id {
                (pre.segment_id, post.segment_id)
            } else {
                (post.segment_id, pre.segment_id)
            };
            let contact = adjacency.get(&key).copied().unwrap_or(0);
            if contact < params.min_contact_area {
                continue;
            }
            let (anchor, dist) = *anchors
                .entry((pre.component_id, post.component_id))
                .or_insert_with(|| {
                    let e = find_component(pre_components, pre.component_id)
                        .expect("pre site refers to a known component");
                    let o = find_component(post_components, post.component_id)
                        .expect("post site refers to a known component");
                    anchor_point(e, o, dims_zyx, spacing_nm_zyx)
                });
            if dist > params.max_anchor_nm {
                continue;
            }
            out.push(Candidate {
                pre: pre.clone(),
                post: post.clone(),
                anchor_zyx: anchor,
                anchor_dist_nm: dist,
                score: None,
            });
        }
    }
    out.sort_by_key(|c| {
        (
            c.pre.component_id,
            c.post.component_id,
            c.pre.segment_id,
            c.post.segment_id,
        )
    });
    out
}

/// Rebuilds full candidates from serialized records, recomputing the
/// component-segment overlap counts that the record format omits.
pub fn candidates_from_records(
    records: &[CandidateRecord],
    pre_components: &[Component],
    post_components: &[Component],
    seg: &SegmentationVolume,
) -> Result<Vec<Candidate>> {
    let seg_data = seg.data();
    let overlap = |comp: &Component, segment: u32| -> u64 {
        comp.voxels
            .iter()
            .filter(|&&v| seg_data[v as usize] == segment)
            .count() as u64
    };
    records
        .iter()
        .map(|r| {
            let pre = find_component(pre_components, r.pre_comp).ok_or_else(|| Error::Format {
                path: "<candidates>".into(),
                reason: format!("unknown pre component {}", r.pre_comp),
            })?;
            let post =
                find_component(post_components, r.post_comp).ok_or_else(|| Error::Format {
                    path: "<candidates>".into(),
                    reason: format!("unknown post component {}", r.post_comp),
                })?;
            Ok(Candidate {
                pre: SiteCandidate {
                    component_id: r.pre_comp,
                    segment_id: r.pre_seg,
                    overlap_voxels: overlap(pre, r.pre_seg),
                },
                post: SiteCandidate {
                    component_id: r.post_comp,
                    segment_id: r.post_seg,
                    overlap_voxels: overlap(post, r.post_seg),
                },
                anchor_zyx: r.anchor_zyx,
                anchor_dist_nm: r.anchor_dist_nm,
                score: r.score,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjacency::segment_adjacency;

    fn prox_from(dims: [usize; 3], values: &[([usize; 3], f32)]) -> ProximityVolume {
        let mut v: Volume<f32> = Volume::zeros(dims, [4.0, 4.0, 30.0]).unwrap();
        for &([z, y, x], val) in values {
            v.set(z, y, x, val);
        }
        ProximityVolume::new(v).unwrap()
    }

    #[test]
    fn zero_volume_has_no_polar_components() {
        let prox = prox_from([4, 4, 4], &[]);
        let (pre, post) = polar_components(&prox, 0.3).unwrap();
        assert!(pre.is_empty() && post.is_empty());
    }

    #[test]
    fn negating_the_volume_swaps_polarities() {
        let prox = prox_from(
            [2, 3, 3],
            &[([0, 0, 0], 0.5), ([0, 0, 1], 0.4), ([1, 2, 2], -0.6)],
        );
        let negated = ProximityVolume::new(
            Volume::from_data(
                [2, 3, 3],
                [4.0, 4.0, 30.0],
                prox.data().iter().map(|&v| -v).collect(),
            )
            .unwrap(),
        )
        .unwrap();
        let (pre_a, post_a) = polar_components(&prox, 0.3).unwrap();
        let (pre_b, post_b) = polar_components(&negated, 0.3).unwrap();
        assert_eq!(pre_a, post_b);
        assert_eq!(post_a, pre_b);
    }

    #[test]
    fn threshold_is_inclusive() {
        let prox = prox_from([1, 1, 2], &[([0, 0, 0], 0.3), ([0, 0, 1], 0.29999)]);
        let (pre, _) = polar_components(&prox, 0.3).unwrap();
        assert_eq!(pre.len(), 1);
        assert_eq!(pre[0].voxels, vec![0]);
    }

    fn seg_halves(dims: [usize; 3]) -> SegmentationVolume {
        // Segment 1 where x < nx/2, segment 2 elsewhere.
        let [nz, ny, nx] = dims;
        let mut data = vec![0u32; nz * ny * nx];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    data[(z * ny + y) * nx + x] = if x < nx / 2 { 1 } else { 2 };
                }
            }
        }
        SegmentationVolume::new(Volume::from_data(dims, [4.0, 4.0, 30.0], data).unwrap())
    }

    #[test]
    fn overlap_gate_counts_per_segment() {
        // A component of 6 voxels split 4/2 across the two segments.
        let comp = Component { id: 0, voxels: vec![0, 1, 2, 3, 4, 5] };
        let seg = seg_halves([1, 1, 8]);
        let sites = site_candidates(&[comp.clone()], &seg, 3, [1, 1, 8]).unwrap();
        assert_eq!(sites.len(), 1);
        assert_eq!(sites[0].segment_id, 1);
        assert_eq!(sites[0].overlap_voxels, 4);
        // With omega above both shares, nothing qualifies.
        let sites = site_candidates(&[comp], &seg, 5, [1, 1, 8]).unwrap();
        assert!(sites.is_empty());
    }

    #[test]
    fn site_candidates_reject_dim_mismatch() {
        let comp = Component { id: 0, voxels: vec![0] };
        let seg = seg_halves([1, 1, 8]);
        assert!(matches!(
            site_candidates(&[comp], &seg, 1, [1, 2, 8]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn anchor_of_face_adjacent_components() {
        let dims = [1, 1, 4];
        let spacing = [30.0, 4.0, 4.0];
        let pre = Component { id: 1, voxels: vec![1] };
        let post = Component { id: 2, voxels: vec![2] };
        let (anchor, dist) = anchor_point(&pre, &post, dims, spacing);
        assert_eq!(dist, 4.0);
        // Half-step midpoint between x=1 and x=2 rounds toward the pre side.
        assert_eq!(anchor, [0, 0, 1]);
    }

    #[test]
    fn anchor_tie_takes_smallest_index_pair() {
        // Symmetric two-voxel components along x: pairs (1,2) and (1,3)... the
        // minimizing pairs are (x=1, x=2) with distance 4; ties between
        // equal-distance pairs resolve to the smallest (pre, post) indices.
        let dims = [1, 2, 4];
        let spacing = [30.0, 4.0, 4.0];
        let pre = Component { id: 0, voxels: vec![1, 5] }; // (0,0,1), (0,1,1)
        let post = Component { id: 2, voxels: vec![2, 6] }; // (0,0,2), (0,1,2)
        let (anchor, dist) = anchor_point(&pre, &post, dims, spacing);
        assert_eq!(dist, 4.0);
        assert_eq!(anchor, [0, 0, 1]);
    }

    #[test]
    fn pairing_requires_adjacency_and_distinct_segments() {
        let dims = [1, 1, 8];
        let spacing_xyz = [4.0, 4.0, 30.0];
        let spacing_zyx = [30.0, 4.0, 4.0];
        let seg = seg_halves(dims);
        let adj = segment_adjacency(&seg);
        let pre_comps = vec![Component { id: 0, voxels: vec![0, 1, 2] }];
        let post_comps = vec![Component { id: 5, voxels: vec![5, 6, 7] }];
        let params = CandidateParams::new(0.3, 1, 1, f64::INFINITY).unwrap();
        let pre_sites = site_candidates(&pre_comps, &seg, 1, dims).unwrap();
        let post_sites = site_candidates(&post_comps, &seg, 1, dims).unwrap();
        let cands = pair_candidates(
            &pre_sites,
            &post_sites,
            &pre_comps,
            &post_comps,
            &adj,
            &params,
            dims,
            spacing_zyx,
        );
        assert_eq!(cands.len(), 1);
        assert_eq!(cands[0].pre.segment_id, 1);
        assert_eq!(cands[0].post.segment_id, 2);

        // Remove the adjacency: no candidates.
        let empty_adj = AdjacencyMap::new();
        let cands = pair_candidates(
            &pre_sites,
            &post_sites,
            &pre_comps,
            &post_comps,
            &empty_adj,
            &params,
            dims,
            spacing_zyx,
        );
        assert!(cands.is_empty());
        let _ = spacing_xyz;
    }

    #[test]
    fn cross_product_enumeration_with_all_pairs_adjacent() {
        // 2 pre sites x 3 post sites over mutually adjacent segments -> 6.
        let dims = [1, 1, 10];
        let spacing_zyx = [30.0, 4.0, 4.0];
        let mut adj = AdjacencyMap::new();
        for a in 1..=5u32 {
            for b in (a + 1)..=5 {
                adj.insert((a, b), 10);
            }
        }
        let pre_comps = vec![
            Component { id: 0, voxels: vec![0] },
            Component { id: 1, voxels: vec![1] },
        ];
        let post_comps = vec![
            Component { id: 5, voxels: vec![5] },
            Component { id: 6, voxels: vec![6] },
            Component { id: 7, voxels: vec![7] },
        ];
        let pre_sites = vec![
            SiteCandidate { component_id: 0, segment_id: 1, overlap_voxels: 1 },
            SiteCandidate { component_id: 1, segment_id: 2, overlap_voxels: 1 },
        ];
        let post_sites = vec![
            SiteCandidate { component_id: 5, segment_id: 3, overlap_voxels: 1 },
            SiteCandidate { component_id: 6, segment_id: 4, overlap_voxels: 1 },
            SiteCandidate { component_id: 7, segment_id: 5, overlap_voxels: 1 },
        ];
        let params = CandidateParams::new(0.3, 1, 1, f64::INFINITY).unwrap();
        let cands = pair_candidates(
            &pre_sites,
            &post_sites,
            &pre_comps,
            &post_comps,
            &adj,
            &params,
            dims,
            spacing_zyx,
        );
        assert_eq!(cands.len(), 6);
        // Deterministic ordering by (pre comp, post comp, pre seg, post seg).
        let order: Vec<(u32, u32)> = cands
            .iter()
            .map(|c| (c.pre.component_id, c.post.component_id))
            .collect();
        assert_eq!(order, vec![(0, 5), (0, 6), (0, 7), (1, 5), (1, 6), (1, 7)]);
    }

    #[test]
    fn params_validation_rejects_out_of_range() {
        assert!(CandidateParams::new(0.0, 100, 1, f64::INFINITY).is_err());
        assert!(CandidateParams::new(1.0, 100, 1, f64::INFINITY).is_err());
        assert!(CandidateParams::new(0.3, 0, 1, f64::INFINITY).is_err());
        assert!(CandidateParams::new(0.3, 1, 0, f64::INFINITY).is_err());
        assert!(CandidateParams::new(0.3, 1, 1, f64::NAN).is_err());
    }
}
