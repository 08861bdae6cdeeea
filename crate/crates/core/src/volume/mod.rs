//! Volumetric data model: a 3D activity map (SUV units) plus acquisition
//! metadata. Two on-disk formats are supported, a raw little-endian payload
//! with a JSON sidecar and single-file NIfTI-1.

mod manifest;
mod nifti;
mod raw;

pub use manifest::{
    split_dataset, DatasetManifest, SplitBucket, SubjectEntry, MANIFEST_SCHEMA_VERSION,
};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use std::convert::TryFrom;
use std::path::Path;

/// Dose-reduction factor of an acquisition. `Full` is the standard dose.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum DoseLevel {
    Full,
    Drf4,
    Drf10,
    Drf20,
    Drf50,
    Drf100,
}

impl DoseLevel {
    pub const REDUCED: [DoseLevel; 5] = [
        DoseLevel::Drf4,
        DoseLevel::Drf10,
        DoseLevel::Drf20,
        DoseLevel::Drf50,
        DoseLevel::Drf100,
    ];

    pub fn factor(self) -> u32 {
        match self {
            DoseLevel::Full => 1,
            DoseLevel::Drf4 => 4,
            DoseLevel::Drf10 => 10,
            DoseLevel::Drf20 => 20,
            DoseLevel::Drf50 => 50,
            DoseLevel::Drf100 => 100,
        }
    }

    pub fn from_factor(f: u32) -> Result<Self> {
        match f {
            1 => Ok(DoseLevel::Full),
            4 => Ok(DoseLevel::Drf4),
            10 => Ok(DoseLevel::Drf10),
            20 => Ok(DoseLevel::Drf20),
            50 => Ok(DoseLevel::Drf50),
            100 => Ok(DoseLevel::Drf100),
            other => Err(Error::config(format!(
                "unsupported dose-reduction factor {other}; expected one of 1, 4, 10, 20, 50, 100"
            ))),
        }
    }
}

impl TryFrom<u32> for DoseLevel {
    type Error = String;
    fn try_from(v: u32) -> std::result::Result<Self, String> {
        DoseLevel::from_factor(v).map_err(|e| e.to_string())
    }
}

impl From<DoseLevel> for u32 {
    fn from(d: DoseLevel) -> u32 {
        d.factor()
    }
}

/// A PET volume. Voxels are indexed `[x, y, z]`; the on-disk payload is
/// 32-bit little-endian float with x fastest and z slowest.
#[derive(Clone, Debug)]
pub struct Volume<F: Scalar> {
    pub voxels: Array3<F>,
    /// Voxel pitch in millimetres along x, y, z.
    pub spacing: [f64; 3],
    pub dose: DoseLevel,
    pub id: String,
}

impl<F: Scalar> Volume<F> {
    /// Validating constructor: dimensions and spacing must be positive, every
    /// voxel finite and non-negative (activity cannot be negative).
    pub fn new(voxels: Array3<F>, spacing: [f64; 3], dose: DoseLevel, id: &str) -> Result<Self> {
        let dim = voxels.dim();
        if dim.0 == 0 || dim.1 == 0 || dim.2 == 0 {
            return Err(Error::data(format!("volume '{id}' has empty dimension {dim:?}")));
        }
        if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::data(format!(
                "volume '{id}' has non-positive spacing {spacing:?}"
            )));
        }
        let bad = voxels
            .iter()
            .filter(|v| !v.is_finite() || **v < F::zero())
            .count();
        if bad > 0 {
            return Err(Error::data(format!(
                "volume '{id}' rejected: {bad} invalid voxel{} (non-finite or negative)",
                if bad == 1 { "" } else { "s" }
            )));
        }
        Ok(Volume { voxels, spacing, dose, id: id.to_string() })
    }

    pub fn shape(&self) -> [usize; 3] {
        let d = self.voxels.dim();
        [d.0, d.1, d.2]
    }

    pub fn min_max(&self) -> (F, F) {
        let mut lo = F::infinity();
        let mut hi = F::neg_infinity();
        for &v in self.voxels.iter() {
            if v < lo {
                lo = v;
            }
            if v > hi {
                hi = v;
            }
        }
        (lo, hi)
    }

    /// Map SUV values into the network's working range by dividing by `scale`.
    /// Metadata is preserved; `denormalize_suv` inverts the map.
    pub fn normalize_suv(&self, scale: f64) -> Result<Volume<F>> {
        if !scale.is_finite() || scale <= 0.0 {
            return Err(Error::config(format!("suv scale must be positive, got {scale}")));
        }
        let s = F::of(scale);
        let mut out = self.clone();
        out.voxels.mapv_inplace(|v| v / s);
        Ok(out)
    }

    pub fn denormalize_suv(&self, scale: f64) -> Result<Volume<F>> {
        if !scale.is_finite() || scale <= 0.0 {
            return Err(Error::config(format!("suv scale must be positive, got {scale}")));
        }
        let s = F::of(scale);
        let mut out = self.clone();
        out.voxels.mapv_inplace(|v| v * s);
        Ok(out)
    }
}

/// Load a volume, format chosen by extension: `.vol` (raw + sidecar) or
/// `.nii` / `.nii.gz` (NIfTI-1, float32).
pub fn load_volume<F: Scalar>(path: &Path) -> Result<Volume<F>> {
    match format_of(path)? {
        VolumeFormat::Raw => raw::read(path),
        VolumeFormat::Nifti => nifti::read(path),
    }
}

/// Save a volume, format chosen by extension (see [`load_volume`]).
pub fn save_volume<F: Scalar>(path: &Path, v: &Volume<F>) -> Result<()> {
    match format_of(path)? {
        VolumeFormat::Raw => raw::write(path, v),
        VolumeFormat::Nifti => nifti::write(path, v),
    }
}

enum VolumeFormat {
    Raw,
    Nifti,
}

fn format_of(path: &Path) -> Result<VolumeFormat> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    if name.ends_with(".vol") {
        Ok(VolumeFormat::Raw)
    } else if name.ends_with(".nii") || name.ends_with(".nii.gz") {
        Ok(VolumeFormat::Nifti)
    } else {
        Err(Error::config(format!(
            "unsupported volume extension on '{}' (expected .vol, .nii or .nii.gz)",
            path.display()
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn cube(fill: f32) -> Array3<f32> {
        Array3::from_elem((4, 3, 2), fill)
    }

    #[test]
    fn dose_levels_round_trip() {
        for d in DoseLevel::REDUCED {
            assert_eq!(DoseLevel::from_factor(d.factor()).unwrap(), d);
        }
        assert_eq!(DoseLevel::from_factor(1).unwrap(), DoseLevel::Full);
        assert!(DoseLevel::from_factor(7).is_err());
    }

    #[test]
    fn rejects_invalid_voxels_with_count() {
        let mut v = cube(1.0);
        v[[0, 0, 0]] = f32::NAN;
        let err = Volume::new(v, [1.0; 3], DoseLevel::Full, "bad").unwrap_err();
        assert!(err.to_string().contains("1 invalid voxel"), "{err}");
        let mut v = cube(1.0);
        v[[0, 0, 0]] = -2.0;
        v[[1, 0, 0]] = f32::INFINITY;
        let err = Volume::new(v, [1.0; 3], DoseLevel::Full, "bad").unwrap_err();
        assert!(err.to_string().contains("2 invalid voxels"), "{err}");
    }

    #[test]
    fn rejects_bad_spacing() {
        assert!(Volume::new(cube(0.0), [1.0, 0.0, 1.0], DoseLevel::Full, "s").is_err());
        assert!(Volume::new(cube(0.0), [1.0, -1.0, 1.0], DoseLevel::Full, "s").is_err());
    }

    #[test]
    fn normalize_divides_and_inverts() {
        let v = Volume::new(cube(20.0), [1.0; 3], DoseLevel::Drf4, "s").unwrap();
        let n = v.normalize_suv(20.0).unwrap();
        assert!(n.voxels.iter().all(|&x| x == 1.0));
        assert_eq!(n.dose, DoseLevel::Drf4);
        assert_eq!(n.id, "s");
        let back = n.denormalize_suv(20.0).unwrap();
        for (a, b) in back.voxels.iter().zip(v.voxels.iter()) {
            assert!((a - b).abs() <= 20.0 * 1e-6);
        }
        // scale 1 is the identity, bit for bit
        let idn = v.normalize_suv(1.0).unwrap();
        assert_eq!(idn.voxels, v.voxels);
    }

    #[test]
    fn normalize_rejects_nonpositive_scale() {
        let v = Volume::new(cube(1.0), [1.0; 3], DoseLevel::Full, "s").unwrap();
        assert!(v.normalize_suv(0.0).is_err());
        assert!(v.normalize_suv(-3.0).is_err());
    }

    #[test]
    fn load_rejects_unknown_extension() {
        let err = load_volume::<f32>(Path::new("x.mhd")).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
