//! Exact anisotropic nearest-site feature transform.
//!
//! For a set of labeled sites on the voxel grid, computes at every voxel the
//! exact Euclidean distance in nanometers to the nearest site and the id of
//! that site, with ties broken toward the smallest site id.
//!
//! The transform is separable: one lower-envelope-of-parabolas pass per
//! axis, each pass scaled by that axis' voxel spacing. Distances and ids are
//! propagated together as the lexicographic minimum of `(distance^2, id)`,
//! which distributes over the per-axis passes. Envelope boundaries are kept
//! as exact rationals and parabolas whose winning interval degenerates to a
//! single point are retained, so voxels that are exactly equidistant from
//! several sites resolve to the smallest id rather than to whichever
//! parabola the floating-point envelope happened to keep.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::Volume;

/// Left interval boundary of an envelope entry, as a rational `num / den`
/// with `den > 0`. `den == 0` encodes negative infinity.
#[derive(Clone, Copy, Debug)]
struct Boundary {
    num: f64,
    den: f64,
}

impl Boundary {
    const NEG_INF: Boundary = Boundary { num: -1.0, den: 0.0 };

    fn cmp(self, other: Boundary) -> Ordering {
        match (self.den == 0.0, other.den == 0.0) {
            (true, true) => Ordering::Equal,
            (true, false) => Ordering::Less,
            (false, true) => Ordering::Greater,
            (false, false) => cross_cmp(self.num, self.den, other.num, other.den),
        }
    }

    /// Compares the boundary against the integer grid position `t`.
    fn cmp_position(self, t: f64) -> Ordering {
        if self.den == 0.0 {
            return Ordering::Less;
        }
        cross_cmp(self.num, self.den, t, 1.0)
    }
}

/// Compares `n1/d1` with `n2/d2` for positive denominators. Uses i128
/// cross-multiplication when all operands are exactly representable
/// integers (the common case for integral nm spacings), falling back to
/// floating point otherwise.
fn cross_cmp(n1: f64, d1: f64, n2: f64, d2: f64) -> Ordering {
    const LIMIT: f64 = 9.2e18; // stay within i64 before widening
    let integral = |v: f64| v.fract() == 0.0 && v.abs() < LIMIT;
    if integral(n1) && integral(d1) && integral(n2) && integral(d2) {
        let lhs = n1 as i128 * d2 as i128;
        let rhs = n2 as i128 * d1 as i128;
        lhs.cmp(&rhs)
    } else {
        (n1 * d2).partial_cmp(&(n2 * d1)).unwrap_or(Ordering::Equal)
    }
}

#[derive(Clone, Copy, Debug)]
struct Parabola {
    center: f64,
    base: f64,
    id: u32,
    left: Boundary,
}

/// Abscissa where the parabola centered at `q` (base `fq`) meets the one at
/// `p < q` (base `fp`), both with leading coefficient `w2`.
fn intersection(p: &Parabola, center_q: f64, base_q: f64, w2: f64) -> Boundary {
    let num = (base_q - p.base) + w2 * (center_q * center_q - p.center * p.center);
    let den = 2.0 * w2 * (center_q - p.center);
    Boundary { num, den }
}

/// One 1D lower-envelope pass over a line of `(dist2, id)` samples.
///
/// `f[i]` is the squared-distance base at grid position `i` (infinite where
/// no source reaches the line) and `w2` the squared spacing of this axis.
/// Writes the pass output back into `f` and `ids`.
fn envelope_line(f: &mut [f64], ids: &mut [u32], w2: f64, scratch: &mut Vec<Parabola>) {
    let n = f.len();
    scratch.clear();
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let center = q as f64;
        loop {
            match scratch.last() {
                None => {
                    scratch.push(Parabola {
                        center,
                        base: f[q],
                        id: ids[q],
                        left: Boundary::NEG_INF,
                    });
                    break;
                }
                Some(top) => {
                    let s = intersection(top, center, f[q], w2);
                    // Strict comparison retains parabolas that still win at
                    // exactly one point; they matter for id tie-breaking.
                    if s.cmp(top.left) == Ordering::Less {
                        scratch.pop();
                    } else {
                        scratch.push(Parabola {
                            center,
                            base: f[q],
                            id: ids[q],
                            left: s,
                        });
                        break;
                    }
                }
            }
        }
    }
    if scratch.is_empty() {
        return; // line has no finite sources
    }

    let mut k = 0usize;
    for q in 0..n {
        let t = q as f64;
        while k + 1 < scratch.len() && scratch[k + 1].left.cmp_position(t) != Ordering::Greater {
            k += 1;
        }
        // Entry k covers t; entries below k whose right boundary equals t
        // tie with it exactly.
        let mut best_val = value_at(&scratch[k], t, w2);
        let mut best_id = scratch[k].id;
        let mut j = k;
        while j > 0 && scratch[j].left.cmp_position(t) == Ordering::Equal {
            j -= 1;
            let v = value_at(&scratch[j], t, w2);
            match v.partial_cmp(&best_val).unwrap_or(Ordering::Equal) {
                Ordering::Less => {
                    best_val = v;
                    best_id = scratch[j].id;
                }
                Ordering::Equal => best_id = best_id.min(scratch[j].id),
                Ordering::Greater => {}
            }
        }
        f[q] = best_val;
        ids[q] = best_id;
    }
}

#[inline]
fn value_at(p: &Parabola, t: f64, w2: f64) -> f64 {
    let d = t - p.center;
    p.base + w2 * d * d
}

/// Computes the exact anisotropic distance (nm) and nearest-site id volumes
/// for `sites`, given as `(voxel coordinate zyx, nonzero site id)` pairs.
///
/// Ties resolve to the smallest site id. Results are independent of site
/// order and worker-thread count.
pub fn feature_transform(
    dims_zyx: [usize; 3],
    voxel_size_nm_xyz: [f64; 3],
    sites: &[([usize; 3], u32)],
) -> Result<(Volume<f32>, Volume<u32>)> {
    if sites.is_empty() {
        return Err(Error::Parameter("feature transform requires at least one site".into()));
    }
    let mut dist2: Volume<f64> = Volume::zeros(dims_zyx, voxel_size_nm_xyz)?;
    let [nz, ny, nx] = dims_zyx;
    let plane = ny * nx;
    dist2.data_mut().fill(f64::INFINITY);
    let mut ids: Vec<u32> = vec![0; nz * plane];

    let d2 = dist2.data_mut();
    for &(coord, id) in sites {
        let [z, y, x] = coord;
        if z >= nz || y >= ny || x >= nx {
            return Err(Error::Parameter(format!(
                "site at {coord:?} is outside dims {dims_zyx:?}"
            )));
        }
        if id == 0 {
            return Err(Error::Parameter("site ids must be nonzero".into()));
        }
        let v = (z * ny + y) * nx + x;
        if d2[v] == 0.0 {
            ids[v] = ids[v].min(id);
        } else {
            d2[v] = 0.0;
            ids[v] = id;
        }
    }

    let [sx, sy, sz] = voxel_size_nm_xyz;

    // Pass along x: lines are contiguous.
    d2.par_chunks_mut(nx)
        .zip(ids.par_chunks_mut(nx))
        .for_each(|(f_line, id_line)| {
            let mut scratch = Vec::new();
            envelope_line(f_line, id_line, sx * sx, &mut scratch);
        });

    // Pass along y: per z-plane, gather strided lines.
    d2.par_chunks_mut(plane)
        .zip(ids.par_chunks_mut(plane))
        .for_each(|(f_plane, id_plane)| {
            let mut scratch = Vec::new();
            let mut f_line = vec![0.0f64; ny];
            let mut id_line = vec![0u32; ny];
            for x in 0..nx {
                for y in 0..ny {
                    f_line[y] = f_plane[y * nx + x];
                    id_line[y] = id_plane[y * nx + x];
                }
                envelope_line(&mut f_line, &mut id_line, sy * sy, &mut scratch);
                for y in 0..ny {
                    f_plane[y * nx + x] = f_line[y];
                    id_plane[y * nx + x] = id_line[y];
                }
            }
        });

    // Pass along z: transpose z-lines into contiguous rows, process, and
    // scatter back; every write target is owned by exactly one task.
    let mut f_t = vec![0.0f64; nz * plane];
    let mut id_t = vec![0u32; nz * plane];
    {
        let d2_ref: &[f64] = d2;
        let ids_ref: &[u32] = &ids;
        f_t.par_chunks_mut(nz)
            .zip(id_t.par_chunks_mut(nz))
            .enumerate()
            .for_each(|(i, (f_line, id_line))| {
                for z in 0..nz {
                    f_line[z] = d2_ref[z * plane + i];
                    id_line[z] = ids_ref[z * plane + i];
                }
                let mut scratch = Vec::new();
                envelope_line(f_line, id_line, sz * sz, &mut scratch);
            });
    }
    {
        let f_t_ref: &[f64] = &f_t;
        let id_t_ref: &[u32] = &id_t;
        d2.par_chunks_mut(plane)
            .zip(ids.par_chunks_mut(plane))
            .enumerate()
            .for_each(|(z, (f_plane, id_plane))| {
                for i in 0..plane {
                    f_plane[i] = f_t_ref[i * nz + z];
                    id_plane[i] = id_t_ref[i * nz + z];
                }
            });
    }

    let dist: Vec<f32> = d2.par_iter().map(|&v| v.sqrt() as f32).collect();
    let dist_vol = Volume::from_data(dims_zyx, voxel_size_nm_xyz, dist)?;
    let id_vol = Volume::from_data(dims_zyx, voxel_size_nm_xyz, ids)?;
    Ok((dist_vol, id_vol))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_site_list_is_a_parameter_error() {
        let r = feature_transform([2, 2, 2], [1.0, 1.0, 1.0], &[]);
        assert!(matches!(r, Err(Error::Parameter(_))));
    }

    #[test]
    fn zero_site_id_is_rejected() {
        let r = feature_transform([2, 2, 2], [1.0, 1.0, 1.0], &[([0, 0, 0], 0)]);
        assert!(matches!(r, Err(Error::Parameter(_))));
    }

    #[test]
    fn single_site_distance_zero_at_itself() {
        let (dist, ids) =
            feature_transform([3, 3, 3], [4.0, 4.0, 30.0], &[([1, 2, 0], 9)]).unwrap();
        assert_eq!(dist.get(1, 2, 0), 0.0);
        assert!(ids.data().iter().all(|&v| v == 9));
        // A voxel one x-step away is 4 nm out.
        assert_eq!(dist.get(1, 2, 1), 4.0);
        // One z-step is 30 nm.
        assert_eq!(dist.get(2, 2, 0), 30.0);
    }

    #[test]
    fn midpoint_tie_resolves_to_smaller_id() {
        // Two sites 10 voxels apart along x with spacing (4, 4, 30): the
        // midpoint voxel sits 20 nm from either site.
        let sites = [([0, 0, 0], 5u32), ([0, 0, 10], 3u32)];
        let (dist, ids) = feature_transform([1, 1, 11], [4.0, 4.0, 30.0], &sites).unwrap();
        assert_eq!(dist.get(0, 0, 5), 20.0);
        assert_eq!(ids.get(0, 0, 5), 3);
        assert_eq!(ids.get(0, 0, 4), 5);
        assert_eq!(ids.get(0, 0, 6), 3);
    }

    #[test]
    fn duplicate_sites_keep_smallest_id() {
        let sites = [([0, 1, 1], 7u32), ([0, 1, 1], 2u32)];
        let (_, ids) = feature_transform([1, 3, 3], [1.0, 1.0, 1.0], &sites).unwrap();
        assert!(ids.data().iter().all(|&v| v == 2));
    }

    #[test]
    fn diagonal_tie_across_axes() {
        // With isotropic unit spacing, the voxel at (0,1,1) is sqrt(2) from
        // the site at (0,0,0)... and from sites placed symmetrically around
        // it; equidistant sites must resolve to the smallest id.
        let sites = [([0, 0, 0], 4u32), ([0, 2, 2], 6u32), ([0, 0, 2], 9u32)];
        let (dist, ids) = feature_transform([1, 3, 3], [1.0, 1.0, 1.0], &sites).unwrap();
        let d = dist.get(0, 1, 1);
        assert!((d - (2.0f64).sqrt() as f32).abs() < 1e-6);
        assert_eq!(ids.get(0, 1, 1), 4);
    }

    #[test]
    fn adjacent_voxels_satisfy_step_bound() {
        // |dist(u) - dist(v)| <= step length for any face-adjacent pair.
        let sites = [([0, 0, 0], 1u32), ([3, 5, 2], 2u32), ([1, 1, 7], 3u32)];
        let (dist, _) = feature_transform([4, 6, 8], [4.0, 4.0, 30.0], &sites).unwrap();
        let [nz, ny, nx] = dist.dims_zyx();
        let steps = dist.spacing_zyx();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let d = dist.get(z, y, x) as f64;
                    if z + 1 < nz {
                        assert!((d - dist.get(z + 1, y, x) as f64).abs() <= steps[0] + 1e-9);
                    }
                    if y + 1 < ny {
                        assert!((d - dist.get(z, y + 1, x) as f64).abs() <= steps[1] + 1e-9);
                    }
                    if x + 1 < nx {
                        assert!((d - dist.get(z, y, x + 1) as f64).abs() <= steps[2] + 1e-9);
                    }
                }
            }
        }
    }
}
