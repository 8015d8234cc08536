//! Dense 3D volumes with anisotropic voxel spacing.
//!
//! All volumes store their samples x-fastest in row-major order with
//! dimensions recorded as `(Z, Y, X)`: the linear index of voxel
//! `(z, y, x)` is `(z * Y + y) * X + x`. Spacing is recorded per axis in
//! nanometers as `(sx, sy, sz)`; distances everywhere in this crate are
//! physical (nm), not voxel counts, because the target-field width is
//! resolution dependent.

use crate::error::{Error, Result};

/// Marker trait for the sample types a [`Volume`] may hold on disk.
pub trait Sample: Copy + Default + Send + Sync + 'static {
    const DTYPE: &'static str;
}

impl Sample for u8 {
    const DTYPE: &'static str = "u8";
}
impl Sample for u32 {
    const DTYPE: &'static str = "u32";
}
impl Sample for f32 {
    const DTYPE: &'static str = "f32";
}

/// A dense 3D array with voxel spacing in nanometers.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    dims_zyx: [usize; 3],
    voxel_size_nm_xyz: [f64; 3],
    data: Vec<T>,
}

impl<T: Copy + Default> Volume<T> {
    /// Builds a volume from raw data. Fails if the data length does not
    /// equal `Z * Y * X` or any spacing component is not strictly positive
    /// and finite.
    pub fn from_data(
        dims_zyx: [usize; 3],
        voxel_size_nm_xyz: [f64; 3],
        data: Vec<T>,
    ) -> Result<Self> {
        validate_dims(dims_zyx)?;
        validate_spacing(voxel_size_nm_xyz)?;
        let n = dims_zyx[0] * dims_zyx[1] * dims_zyx[2];
        if data.len() != n {
            return Err(Error::Shape(format!(
                "data length {} does not match dims {:?} (expected {})",
                data.len(),
                dims_zyx,
                n
            )));
        }
        Ok(Self {
            dims_zyx,
            voxel_size_nm_xyz,
            data,
        })
    }

    /// A volume filled with `T::default()`.
    pub fn zeros(dims_zyx: [usize; 3], voxel_size_nm_xyz: [f64; 3]) -> Result<Self> {
        validate_dims(dims_zyx)?;
        validate_spacing(voxel_size_nm_xyz)?;
        let n = dims_zyx[0] * dims_zyx[1] * dims_zyx[2];
        Ok(Self {
            dims_zyx,
            voxel_size_nm_xyz,
            data: vec![T::default(); n],
        })
    }

    #[inline]
    pub fn dims_zyx(&self) -> [usize; 3] {
        self.dims_zyx
    }

    #[inline]
    pub fn voxel_size_nm_xyz(&self) -> [f64; 3] {
        self.voxel_size_nm_xyz
    }

    /// Spacing reordered to match `(z, y, x)` coordinates.
    #[inline]
    pub fn spacing_zyx(&self) -> [f64; 3] {
        let [sx, sy, sz] = self.voxel_size_nm_xyz;
        [sz, sy, sx]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn linear_index(&self, z: usize, y: usize, x: usize) -> usize {
        debug_assert!(z < self.dims_zyx[0] && y < self.dims_zyx[1] && x < self.dims_zyx[2]);
        (z * self.dims_zyx[1] + y) * self.dims_zyx[2] + x
    }

    /// Inverse of [`Self::linear_index`].
    #[inline]
    pub fn coords_of(&self, index: usize) -> [usize; 3] {
        let x = index % self.dims_zyx[2];
        let rest = index / self.dims_zyx[2];
        let y = rest % self.dims_zyx[1];
        let z = rest / self.dims_zyx[1];
        [z, y, x]
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> T {
        self.data[self.linear_index(z, y, x)]
    }

    #[inline]
    pub fn set(&mut self, z: usize, y: usize, x: usize, value: T) {
        let i = self.linear_index(z, y, x);
        self.data[i] = value;
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Errors unless `other` has the same dimensions.
    pub fn check_same_dims<U>(&self, other: &Volume<U>, what: &str) -> Result<()> {
        if self.dims_zyx != other.dims_zyx {
            return Err(Error::Shape(format!(
                "{what}: dims {:?} vs {:?}",
                self.dims_zyx, other.dims_zyx
            )));
        }
        Ok(())
    }

    /// Anisotropic squared distance in nm^2 between two voxel centers.
    #[inline]
    pub fn dist2_nm(&self, a: [usize; 3], b: [usize; 3]) -> f64 {
        let s = self.spacing_zyx();
        let mut acc = 0.0;
        for axis in 0..3 {
            let d = (a[axis] as f64 - b[axis] as f64) * s[axis];
            acc += d * d;
        }
        acc
    }
}

fn validate_dims(dims: [usize; 3]) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Parameter(format!("dims must be positive, got {dims:?}")));
    }
    let n = dims[0]
        .checked_mul(dims[1])
        .and_then(|p| p.checked_mul(dims[2]))
        .ok_or_else(|| Error::Parameter(format!("dims overflow: {dims:?}")))?;
    // Component ids and label volumes are u32; keep linear indices addressable.
    if n >= u32::MAX as usize {
        return Err(Error::Parameter(format!(
            "volume of {n} voxels exceeds the supported u32 index range"
        )));
    }
    Ok(())
}

fn validate_spacing(spacing: [f64; 3]) -> Result<()> {
    if spacing.iter().any(|&s| !s.is_finite() || s <= 0.0) {
        return Err(Error::Parameter(format!(
            "voxel size components must be positive and finite, got {spacing:?}"
        )));
    }
    Ok(())
}

/// Integer labels partitioning the volume into segments; 0 is "no segment".
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationVolume(Volume<u32>);

impl SegmentationVolume {
    pub fn new(volume: Volume<u32>) -> Self {
        Self(volume)
    }

    #[inline]
    pub fn volume(&self) -> &Volume<u32> {
        &self.0
    }

    pub fn into_volume(self) -> Volume<u32> {
        self.0
    }

    /// Sorted list of the distinct nonzero segment ids present.
    pub fn segment_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.0.data().iter().copied().filter(|&v| v != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

impl std::ops::Deref for SegmentationVolume {
    type Target = Volume<u32>;
    fn deref(&self) -> &Volume<u32> {
        &self.0
    }
}

/// Paired synapse band labels: 0 is background, odd id `2k-1` marks the
/// pre-synaptic band of synapse `k` and even id `2k` the post-synaptic band.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationVolume(Volume<u32>);

impl AnnotationVolume {
    pub fn new(volume: Volume<u32>) -> Self {
        Self(volume)
    }

    #[inline]
    pub fn volume(&self) -> &Volume<u32> {
        &self.0
    }

    pub fn into_volume(self) -> Volume<u32> {
        self.0
    }

    /// Synapse index `k` for a band label, or `None` for background.
    #[inline]
    pub fn synapse_of_label(label: u32) -> Option<u32> {
        if label == 0 {
            None
        } else {
            Some(label.div_ceil(2))
        }
    }

    #[inline]
    pub fn is_pre_label(label: u32) -> bool {
        label != 0 && label % 2 == 1
    }

    pub fn pre_label(synapse_id: u32) -> u32 {
        2 * synapse_id - 1
    }

    pub fn post_label(synapse_id: u32) -> u32 {
        2 * synapse_id
    }

    /// Sorted ids of the synapses with at least one annotated voxel.
    pub fn synapse_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self
            .0
            .data()
            .iter()
            .filter_map(|&v| Self::synapse_of_label(v))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

impl std::ops::Deref for AnnotationVolume {
    type Target = Volume<u32>;
    fn deref(&self) -> &Volume<u32> {
        &self.0
    }
}

/// Signed proximity values in `[-1, 1]`; positive on the pre-synaptic side.
#[derive(Clone, Debug, PartialEq)]
pub struct ProximityVolume(Volume<f32>);

impl ProximityVolume {
    /// Wraps a volume after checking every value is finite with |v| <= 1.
    pub fn new(volume: Volume<f32>) -> Result<Self> {
        for (i, &v) in volume.data().iter().enumerate() {
            if !v.is_finite() || v.abs() > 1.0 {
                return Err(Error::Parameter(format!(
                    "proximity value {v} at linear index {i} is outside [-1, 1]"
                )));
            }
        }
        Ok(Self(volume))
    }

    /// Wraps without scanning; for volumes this crate just produced.
    pub(crate) fn new_unchecked(volume: Volume<f32>) -> Self {
        Self(volume)
    }

    #[inline]
    pub fn volume(&self) -> &Volume<f32> {
        &self.0
    }

    pub fn into_volume(self) -> Volume<f32> {
        self.0
    }
}

impl std::ops::Deref for ProximityVolume {
    type Target = Volume<f32>;
    fn deref(&self) -> &Volume<f32> {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_index_is_x_fastest() {
        let v: Volume<u8> = Volume::zeros([2, 3, 4], [4.0, 4.0, 30.0]).unwrap();
        assert_eq!(v.linear_index(0, 0, 0), 0);
        assert_eq!(v.linear_index(0, 0, 1), 1);
        assert_eq!(v.linear_index(0, 1, 0), 4);
        assert_eq!(v.linear_index(1, 0, 0), 12);
        assert_eq!(v.coords_of(17), [1, 1, 1]);
    }

    #[test]
    fn rejects_mismatched_data_length() {
        let err = Volume::<u8>::from_data([2, 2, 2], [1.0, 1.0, 1.0], vec![0; 7]);
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn rejects_bad_spacing() {
        let err = Volume::<u8>::zeros([2, 2, 2], [0.0, 1.0, 1.0]);
        assert!(matches!(err, Err(Error::Parameter(_))));
        let err = Volume::<u8>::zeros([2, 2, 2], [1.0, f64::NAN, 1.0]);
        assert!(matches!(err, Err(Error::Parameter(_))));
    }

    #[test]
    fn proximity_rejects_out_of_range() {
        let v = Volume::from_data([1, 1, 2], [1.0, 1.0, 1.0], vec![0.5f32, 1.5]).unwrap();
        assert!(ProximityVolume::new(v).is_err());
    }

    #[test]
    fn annotation_label_helpers() {
        assert_eq!(AnnotationVolume::synapse_of_label(0), None);
        assert_eq!(AnnotationVolume::synapse_of_label(1), Some(1));
        assert_eq!(AnnotationVolume::synapse_of_label(2), Some(1));
        assert_eq!(AnnotationVolume::synapse_of_label(7), Some(4));
        assert!(AnnotationVolume::is_pre_label(3));
        assert!(!AnnotationVolume::is_pre_label(4));
        assert_eq!(AnnotationVolume::pre_label(3), 5);
        assert_eq!(AnnotationVolume::post_label(3), 6);
    }

    #[test]
    fn anisotropic_distance_uses_spacing() {
        let v: Volume<u8> = Volume::zeros([4, 4, 4], [4.0, 4.0, 30.0]).unwrap();
        // One step in z is 30 nm, one step in x is 4 nm.
        assert_eq!(v.dist2_nm([0, 0, 0], [1, 0, 0]), 900.0);
        assert_eq!(v.dist2_nm([0, 0, 0], [0, 0, 1]), 16.0);
    }
}
