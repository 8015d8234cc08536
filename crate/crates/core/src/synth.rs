//! Deterministic synthetic phantoms: Voronoi cells, planted synapses with
//! band annotations, grayscale rendering, and a noisy oracle predictor.
//!
//! Phantoms give the pipeline a fully known ground truth: every stage from
//! target synthesis to evaluation can be checked end to end without any
//! trained network. All randomness comes from one SplitMix64 stream per
//! entry point, so a seed fixes every output byte on every platform.

use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::adjacency::segment_adjacency;
use crate::distance::feature_transform;
use crate::error::{Error, Result};
use crate::eval::GroundTruthConnection;
use crate::rng::SplitMix64;
use crate::target::{make_target, TargetParams};
use crate::volume::{AnnotationVolume, ProximityVolume, SegmentationVolume, Volume};

/// Phantom geometry and rendering knobs.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PhantomConfig {
    pub dims_zyx: [usize; 3],
    pub voxel_size_nm_xyz: [f64; 3],
    pub n_cells: u32,
    pub n_synapses: u32,
    pub band_thickness_nm: f64,
    pub membrane_gray: u8,
    pub cytoplasm_gray: u8,
    pub gray_noise_std: f64,
    pub n_distractors: u32,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims_zyx: [32, 192, 192],
            voxel_size_nm_xyz: [4.0, 4.0, 30.0],
            n_cells: 25,
            n_synapses: 15,
            band_thickness_nm: 20.0,
            membrane_gray: 60,
            cytoplasm_gray: 160,
            gray_noise_std: 8.0,
            n_distractors: 0,
            seed: 7,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cells < 2 {
            return Err(Error::Parameter("a phantom needs at least 2 cells".into()));
        }
        if !self.band_thickness_nm.is_finite() || self.band_thickness_nm <= 0.0 {
            return Err(Error::Parameter(format!(
                "band thickness must be positive, got {}",
                self.band_thickness_nm
            )));
        }
        if !self.gray_noise_std.is_finite() || self.gray_noise_std < 0.0 {
            return Err(Error::Parameter(format!(
                "gray noise std must be nonnegative, got {}",
                self.gray_noise_std
            )));
        }
        Ok(())
    }
}

/// Everything a phantom knows about itself.
#[derive(Clone, Debug)]
pub struct PhantomBundle {
    pub image: Volume<u8>,
    pub gt_seg: SegmentationVolume,
    pub annotation: AnnotationVolume,
    pub connections: Vec<GroundTruthConnection>,
    pub target: ProximityVolume,
}

// Synapse placement constants. Patches use x- and y-normal boundary faces
// only: at 30 nm section spacing a z-normal cleft yields a single voxel
// layer with |proximity| barely above the usual threshold, which no
// realistic pipeline run should depend on.
const PATCH_RADIUS_NM: f64 = 60.0;
const PATCH_Z_REACH_NM: f64 = 60.0;
const MIN_PATCH_FACES: usize = 55;
const PURITY_PAD_NM: f64 = 20.0;
const MIN_CENTER_SEP_NM: f64 = 180.0;

/// One boundary face between two cells: `lower` and its +axis neighbor.
#[derive(Clone, Copy, Debug)]
struct Face {
    lower: [usize; 3],
    axis: usize, // 1 = y-normal, 2 = x-normal
}

#[derive(Clone, Debug)]
struct PlantSite {
    cells: (u32, u32), // (smaller, larger) = (pre, post)
    faces: Vec<Face>,
    center_nm: [f64; 3],
}

fn face_midpoint_nm(face: &Face, spacing_zyx: [f64; 3]) -> [f64; 3] {
    let mut m = [
        face.lower[0] as f64 * spacing_zyx[0],
        face.lower[1] as f64 * spacing_zyx[1],
        face.lower[2] as f64 * spacing_zyx[2],
    ];
    m[face.axis] += 0.5 * spacing_zyx[face.axis];
    m
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dz = a[0] - b[0];
    let dy = a[1] - b[1];
    let dx = a[2] - b[2];
    dz * dz + dy * dy + dx * dx
}

/// 26-connected flood over `subset` (indices into `faces`) starting from
/// `subset[start_pos]`. Faces touch when their lower voxels are within one
/// step on every axis (two faces on the same voxel always touch). Returns
/// sorted face indices.
fn flood_faces(faces: &[Face], subset: &[usize], start_pos: usize) -> Vec<usize> {
    let mut index_of: HashMap<[usize; 3], Vec<usize>> = HashMap::new();
    for &i in subset {
        index_of.entry(faces[i].lower).or_default().push(i);
    }
    let start = subset[start_pos];
    let mut reached: HashSet<usize> = HashSet::new();
    reached.insert(start);
    let mut queue = VecDeque::from([start]);
    while let Some(i) = queue.pop_front() {
        let c = faces[i].lower;
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let n = [c[0] as i64 + dz, c[1] as i64 + dy, c[2] as i64 + dx];
                    if n.iter().any(|&v| v < 0) {
                        continue;
                    }
                    let n = [n[0] as usize, n[1] as usize, n[2] as usize];
                    if let Some(cohabitants) = index_of.get(&n) {
                        for &j in cohabitants {
                            if reached.insert(j) {
                                queue.push_back(j);
                            }
                        }
                    }
                }
            }
        }
    }
    let mut out: Vec<usize> = reached.into_iter().collect();
    out.sort_unstable();
    out
}

/// Generates a phantom volume with `n_synapses` planted connections.
pub fn generate_phantom(cfg: &PhantomConfig) -> Result<PhantomBundle> {
    cfg.validate()?;
    let dims = cfg.dims_zyx;
    let [nz, ny, nx] = dims;
    let spacing_xyz = cfg.voxel_size_nm_xyz;
    let mut rng = SplitMix64::new(cfg.seed);

    // Voronoi cells from pseudorandom seed voxels, ids 1..=n_cells; the
    // nearest-site transform already implements the anisotropic metric and
    // its smallest-id tie rule.
    let mut seed_voxels: Vec<[usize; 3]> = Vec::with_capacity(cfg.n_cells as usize);
    let mut taken = HashSet::new();
    while seed_voxels.len() < cfg.n_cells as usize {
        let z = rng.next_below(nz as u64) as usize;
        let y = rng.next_below(ny as u64) as usize;
        let x = rng.next_below(nx as u64) as usize;
        if taken.insert([z, y, x]) {
            seed_voxels.push([z, y, x]);
        }
    }
    let sites: Vec<([usize; 3], u32)> = seed_voxels
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, i as u32 + 1))
        .collect();
    let (_, cell_ids) = feature_transform(dims, spacing_xyz, &sites)?;
    let gt_seg = SegmentationVolume::new(cell_ids);
    let seg_data_owned: Vec<u32> = gt_seg.data().to_vec();
    let seg_at = |c: [usize; 3]| seg_data_owned[(c[0] * ny + c[1]) * nx + c[2]];

    let adjacency = segment_adjacency(&gt_seg);
    let spacing_zyx = gt_seg.spacing_zyx();

    // Collect the lateral (x- and y-normal) boundary faces per pair in one
    // scan. Voronoi walls between laterally adjacent cells are built from
    // these regardless of tilt, so a patch may mix both normals.
    let mut faces_by_pair: HashMap<(u32, u32), Vec<Face>> = HashMap::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let a = seg_at([z, y, x]);
                if y + 1 < ny {
                    let b = seg_at([z, y + 1, x]);
                    if a != b {
                        let key = (a.min(b), a.max(b));
                        faces_by_pair.entry(key).or_default().push(Face { lower: [z, y, x], axis: 1 });
                    }
                }
                if x + 1 < nx {
                    let b = seg_at([z, y, x + 1]);
                    if a != b {
                        let key = (a.min(b), a.max(b));
                        faces_by_pair.entry(key).or_default().push(Face { lower: [z, y, x], axis: 2 });
                    }
                }
            }
        }
    }

    // Qualify pairs: keep only lateral faces whose neighborhood contains
    // nothing but the two cells (the thresholded proximity region lives in
    // that tube), then carve a connected patch out of the largest clean
    // wall piece.
    let pad_nm = PURITY_PAD_NM.max(cfg.band_thickness_nm);
    let debug = std::env::var_os("SYNAPTIK_PHANTOM_DEBUG").is_some();
    let (mut dbg_few, mut dbg_wall, mut dbg_patch) = (0u32, 0u32, 0u32);
    let mut qualified: Vec<PlantSite> = Vec::new();
    for &(a, b) in adjacency.keys() {
        let Some(all_faces) = faces_by_pair.get(&(a, b)) else {
            dbg_few += 1;
            continue;
        };
        if all_faces.len() < MIN_PATCH_FACES {
            dbg_few += 1;
            continue;
        }
        let is_pure = |face: &Face| -> bool {
            let mid = face_midpoint_nm(face, spacing_zyx);
            let mut lo = [0usize; 3];
            let mut hi = [0usize; 3];
            for ax in 0..3 {
                lo[ax] = ((mid[ax] - pad_nm) / spacing_zyx[ax]).floor().max(0.0) as usize;
                hi[ax] = (((mid[ax] + pad_nm) / spacing_zyx[ax]).ceil() as usize).min(dims[ax] - 1);
            }
            for z in lo[0]..=hi[0] {
                for y in lo[1]..=hi[1] {
                    for x in lo[2]..=hi[2] {
                        let center = [
                            z as f64 * spacing_zyx[0],
                            y as f64 * spacing_zyx[1],
                            x as f64 * spacing_zyx[2],
                        ];
                        if dist2(center, mid) > pad_nm * pad_nm {
                            continue;
                        }
                        let s = seg_at([z, y, x]);
                        if s != a && s != b {
                            return false;
                        }
                    }
                }
            }
            true
        };
        let faces: Vec<Face> = all_faces.iter().filter(|f| is_pure(f)).copied().collect();
        if faces.len() < MIN_PATCH_FACES {
            dbg_few += 1;
            continue;
        }
        let mids: Vec<[f64; 3]> = faces.iter().map(|f| face_midpoint_nm(f, spacing_zyx)).collect();

        // Largest 26-connected wall piece (faces touch when their lower
        // voxels do); ties resolve to the earliest start index.
        let all: Vec<usize> = (0..faces.len()).collect();
        let mut wall: Vec<usize> = Vec::new();
        {
            let mut visited = vec![false; faces.len()];
            for start in 0..faces.len() {
                if visited[start] {
                    continue;
                }
                let piece = flood_faces(&faces, &all, start);
                for &i in &piece {
                    visited[i] = true;
                }
                if piece.len() > wall.len() {
                    wall = piece;
                }
            }
        }
        if wall.len() < MIN_PATCH_FACES {
            dbg_wall += 1;
            continue;
        }

        // Patch center: try the face nearest the wall centroid plus a
        // deterministic subsample of wall faces, keeping the center whose
        // in-window connected patch is largest.
        let mut centroid = [0.0f64; 3];
        for &i in &wall {
            for ax in 0..3 {
                centroid[ax] += mids[i][ax];
            }
        }
        for c in centroid.iter_mut() {
            *c /= wall.len() as f64;
        }
        let centroid_face = wall
            .iter()
            .copied()
            .min_by(|&i, &j| {
                dist2(mids[i], centroid)
                    .partial_cmp(&dist2(mids[j], centroid))
                    .unwrap()
                    .then_with(|| (faces[i].lower, faces[i].axis).cmp(&(faces[j].lower, faces[j].axis)))
            })
            .unwrap();
        let stride = (wall.len() / 24).max(1);
        let mut candidates: Vec<usize> = vec![centroid_face];
        candidates.extend(wall.iter().copied().step_by(stride));
        let mut patch: Vec<usize> = Vec::new();
        let mut center_idx = centroid_face;
        for &cand in &candidates {
            let cand_nm = mids[cand];
            // Anisotropic window: full lateral radius on every section the
            // patch spans, since one z step eats most of a Euclidean ball.
            let in_window: Vec<usize> = wall
                .iter()
                .copied()
                .filter(|&i| {
                    let dz = mids[i][0] - cand_nm[0];
                    let dy = mids[i][1] - cand_nm[1];
                    let dx = mids[i][2] - cand_nm[2];
                    dz.abs() <= PATCH_Z_REACH_NM
                        && dy * dy + dx * dx <= PATCH_RADIUS_NM * PATCH_RADIUS_NM
                })
                .collect();
            if in_window.len() <= patch.len() {
                continue;
            }
            let flooded = flood_faces(
                &faces,
                &in_window,
                in_window.iter().position(|&i| i == cand).expect("center stays in window"),
            );
            if flooded.len() > patch.len() {
                patch = flooded;
                center_idx = cand;
            }
        }
        let center_nm = mids[center_idx];
        if patch.len() < MIN_PATCH_FACES {
            dbg_patch += 1;
            continue;
        }
        qualified.push(PlantSite {
            cells: (a, b),
            faces: patch.into_iter().map(|i| faces[i]).collect(),
            center_nm,
        });
    }

    if debug {
        eprintln!(
            "phantom qualification: {} pairs -> few {dbg_few}, wall {dbg_wall}, patch {dbg_patch}, qualified {}",
            adjacency.len(),
            qualified.len()
        );
    }

    // Pick distinct pairs pseudorandomly, spacing the patch centers out so
    // per-synapse neighborhoods never interact.
    let mut remaining = qualified;
    let mut selected: Vec<PlantSite> = Vec::new();
    while selected.len() < cfg.n_synapses as usize && !remaining.is_empty() {
        let idx = rng.next_below(remaining.len() as u64) as usize;
        let site = remaining.swap_remove(idx);
        let well_separated = selected
            .iter()
            .all(|s| dist2(s.center_nm, site.center_nm) >= MIN_CENTER_SEP_NM * MIN_CENTER_SEP_NM);
        if well_separated {
            selected.push(site);
        }
    }
    if selected.len() < cfg.n_synapses as usize {
        return Err(Error::Generation(format!(
            "requested {} synapses but only {} well-separated adjacent cell pairs qualify",
            cfg.n_synapses,
            selected.len()
        )));
    }

    // Paint annotation bands: band k gets labels 2k-1 (pre = smaller cell)
    // and 2k (post), extending from the boundary into each cell.
    let mut ann_vol: Volume<u32> = Volume::zeros(dims, spacing_xyz)?;
    let mut connections = Vec::with_capacity(selected.len());
    for (i, site) in selected.iter().enumerate() {
        let k = i as u32 + 1;
        let (pre_cell, post_cell) = site.cells;
        for face in &site.faces {
            let axis = face.axis;
            let lower = face.lower;
            let mut upper = lower;
            upper[axis] += 1;
            let (pre_voxel, post_voxel) = if seg_at(lower) == pre_cell {
                (lower, upper)
            } else {
                (upper, lower)
            };
            let t_vox = ((cfg.band_thickness_nm / spacing_zyx[axis]).round() as usize).max(1);
            let paint = |vol: &mut Volume<u32>, start: [usize; 3], toward_larger: bool, cell: u32, label: u32| {
                let mut c = start;
                for _ in 0..t_vox {
                    if seg_data_owned[(c[0] * ny + c[1]) * nx + c[2]] != cell {
                        break;
                    }
                    let existing = vol.get(c[0], c[1], c[2]);
                    if existing != 0 && existing != label {
                        break; // never overwrite another synapse
                    }
                    vol.set(c[0], c[1], c[2], label);
                    if toward_larger {
                        if c[axis] + 1 >= dims[axis] {
                            break;
                        }
                        c[axis] += 1;
                    } else {
                        if c[axis] == 0 {
                            break;
                        }
                        c[axis] -= 1;
                    }
                }
            };
            let pre_toward_larger = pre_voxel[axis] > post_voxel[axis];
            paint(&mut ann_vol, pre_voxel, pre_toward_larger, pre_cell, 2 * k - 1);
            paint(&mut ann_vol, post_voxel, !pre_toward_larger, post_cell, 2 * k);
        }
        connections.push((k, pre_cell, post_cell));
    }
    let annotation = AnnotationVolume::new(ann_vol);

    // Grayscale rendering: cytoplasm everywhere, membrane along every cell
    // boundary, then voxelwise Gaussian noise.
    let mut image: Volume<u8> = Volume::zeros(dims, spacing_xyz)?;
    {
        let img = image.data_mut();
        img.fill(cfg.cytoplasm_gray);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let v = (z * ny + y) * nx + x;
                    let s = seg_data_owned[v];
                    let boundary = (x + 1 < nx && seg_data_owned[v + 1] != s)
                        || (x > 0 && seg_data_owned[v - 1] != s)
                        || (y + 1 < ny && seg_data_owned[v + nx] != s)
                        || (y > 0 && seg_data_owned[v - nx] != s)
                        || (z + 1 < nz && seg_data_owned[v + ny * nx] != s)
                        || (z > 0 && seg_data_owned[v - ny * nx] != s);
                    if boundary {
                        img[v] = cfg.membrane_gray;
                    }
                }
            }
        }
        if cfg.gray_noise_std > 0.0 {
            for g in img.iter_mut() {
                let noisy = *g as f64 + cfg.gray_noise_std * rng.next_normal();
                *g = noisy.round().clamp(0.0, 255.0) as u8;
            }
        }
    }

    let target = make_target(&annotation, &TargetParams::default())?;

    // Spans join the painted bands to the connection list.
    let mut spans: HashMap<u32, Vec<u32>> = HashMap::new();
    for (v, &label) in annotation.data().iter().enumerate() {
        if let Some(k) = AnnotationVolume::synapse_of_label(label) {
            spans.entry(k).or_default().push(v as u32);
        }
    }
    let connections: Vec<GroundTruthConnection> = connections
        .into_iter()
        .map(|(k, pre_cell, post_cell)| GroundTruthConnection {
            synapse_id: k,
            pre_cell,
            post_cell,
            span: spans.remove(&k).unwrap_or_default(),
        })
        .collect();

    Ok(PhantomBundle { image, gt_seg, annotation, connections, target })
}

/// Stands in for a trained voxelwise predictor: the clean target plus
/// i.i.d. Gaussian noise plus spurious signed blobs away from the real
/// synapses, clamped to [-1, 1]. Deterministic in `seed`.
pub fn oracle_predict(
    target: &ProximityVolume,
    noise_std: f64,
    n_distractors: u32,
    seed: u64,
) -> Result<ProximityVolume> {
    if !noise_std.is_finite() || noise_std < 0.0 {
        return Err(Error::Parameter(format!(
            "noise std must be nonnegative, got {noise_std}"
        )));
    }
    let dims = target.dims_zyx();
    let [nz, ny, nx] = dims;
    let spacing_zyx = target.spacing_zyx();
    let mut rng = SplitMix64::new(seed);
    let mut out: Vec<f32> = target.data().to_vec();

    if noise_std > 0.0 {
        for v in out.iter_mut() {
            *v = (*v as f64 + noise_std * rng.next_normal()) as f32;
        }
    }

    let clean = target.data();
    let mut attempts = 0u64;
    let max_attempts = 1000 + 100 * n_distractors as u64;
    let mut placed = 0;
    while placed < n_distractors {
        if attempts >= max_attempts {
            return Err(Error::Generation(
                "could not place distractors away from synapses".into(),
            ));
        }
        attempts += 1;
        let cz = rng.next_below(nz as u64) as usize;
        let cy = rng.next_below(ny as u64) as usize;
        let cx = rng.next_below(nx as u64) as usize;
        if clean[(cz * ny + cy) * nx + cx] != 0.0 {
            continue;
        }
        let sign = if rng.next_below(2) == 0 { 1.0 } else { -1.0 };
        let amplitude = 0.6 + 0.35 * rng.next_f64();
        // Blob widths chosen so a distractor crosses the usual component
        // size gate: a few sections thick, tens of nm across.
        let sigma_inplane = 16.0 + 8.0 * rng.next_f64();
        let sigma_z = 35.0 + 10.0 * rng.next_f64();
        let sigma = [sigma_z, sigma_inplane, sigma_inplane];
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let center = [cz, cy, cx];
        for ax in 0..3 {
            let reach = (3.0 * sigma[ax] / spacing_zyx[ax]).ceil() as usize;
            lo[ax] = center[ax].saturating_sub(reach);
            hi[ax] = (center[ax] + reach).min(dims[ax] - 1);
        }
        for z in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for x in lo[2]..=hi[2] {
                    let dz = (z as f64 - cz as f64) * spacing_zyx[0] / sigma[0];
                    let dy = (y as f64 - cy as f64) * spacing_zyx[1] / sigma[1];
                    let dx = (x as f64 - cx as f64) * spacing_zyx[2] / sigma[2];
                    let g = (-(dz * dz + dy * dy + dx * dx) / 2.0).exp();
                    let v = (z * ny + y) * nx + x;
                    out[v] = (out[v] as f64 + sign * amplitude * g) as f32;
                }
            }
        }
        placed += 1;
    }

    for v in out.iter_mut() {
        *v = v.clamp(-1.0, 1.0);
    }
    let vol = Volume::from_data(dims, target.voxel_size_nm_xyz(), out)?;
    Ok(ProximityVolume::new_unchecked(vol))
}
