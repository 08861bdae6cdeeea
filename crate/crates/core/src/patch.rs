//! Patch pipeline: deterministic lattice extraction for inference, uniform
//! mean-overlap merging, and random paired crops for training batches.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct PatchGridSpec {
    pub patch_shape: [usize; 3],
    pub stride: [usize; 3],
}

impl PatchGridSpec {
    pub fn validate(&self) -> Result<()> {
        for d in 0..3 {
            if self.patch_shape[d] == 0 {
                return Err(Error::config(format!("patch shape {:?} has a zero axis", self.patch_shape)));
            }
            if self.stride[d] == 0 || self.stride[d] > self.patch_shape[d] {
                return Err(Error::config(format!(
                    "stride {:?} must satisfy 1 <= stride <= patch shape {:?} on every axis",
                    self.stride, self.patch_shape
                )));
            }
        }
        Ok(())
    }

    fn check_fits(&self, vol_shape: [usize; 3]) -> Result<()> {
        self.validate()?;
        for d in 0..3 {
            if self.patch_shape[d] > vol_shape[d] {
                return Err(Error::config(format!(
                    "patch shape {:?} exceeds volume shape {:?} on axis {d}",
                    self.patch_shape, vol_shape
                )));
            }
        }
        Ok(())
    }
}

/// A patch cut from a volume, remembering where it came from.
#[derive(Clone, Debug)]
pub struct Patch<F: Scalar> {
    pub origin: [usize; 3],
    pub data: Array3<F>,
}

/// Origins along one axis: the regular lattice `0, s, 2s, ...` plus a final
/// origin clamped to `extent - patch` so the boundary is always covered.
pub fn lattice_origins(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
    debug_assert!(patch <= extent && stride >= 1);
    let last = extent - patch;
    let mut out = Vec::new();
    let mut o = 0usize;
    loop {
        if o >= last {
            out.push(last);
            break;
        }
        out.push(o);
        o += stride;
    }
    out
}

/// Cut the full lattice of patches out of a volume.
pub fn extract_patches<F: Scalar>(
    voxels: &Array3<F>,
    grid: &PatchGridSpec,
) -> Result<Vec<Patch<F>>> {
    let dim = voxels.dim();
    let vol_shape = [dim.0, dim.1, dim.2];
    grid.check_fits(vol_shape)?;
    let [px, py, pz] = grid.patch_shape;
    let ox = lattice_origins(vol_shape[0], px, grid.stride[0]);
    let oy = lattice_origins(vol_shape[1], py, grid.stride[1]);
    let oz = lattice_origins(vol_shape[2], pz, grid.stride[2]);
    let mut out = Vec::with_capacity(ox.len() * oy.len() * oz.len());
    for &x0 in &ox {
        for &y0 in &oy {
            for &z0 in &oz {
                let data = voxels
                    .slice(ndarray::s![x0..x0 + px, y0..y0 + py, z0..z0 + pz])
                    .to_owned();
                out.push(Patch { origin: [x0, y0, z0], data });
            }
        }
    }
    Ok(out)
}

/// Reassemble a volume from patches, averaging where they overlap. Sums are
/// accumulated in f64 so overlapping copies that agree merge back exactly.
pub fn merge_patches<F: Scalar>(vol_shape: [usize; 3], patches: &[Patch<F>]) -> Result<Array3<F>> {
    if patches.is_empty() {
        return Err(Error::data("merge_patches: no patches".to_string()));
    }
    let mut sums = Array3::<f64>::zeros((vol_shape[0], vol_shape[1], vol_shape[2]));
    let mut counts = Array3::<u32>::zeros((vol_shape[0], vol_shape[1], vol_shape[2]));
    for p in patches {
        let d = p.data.dim();
        for a in 0..3 {
            let end = p.origin[a] + [d.0, d.1, d.2][a];
            if end > vol_shape[a] {
                return Err(Error::data(format!(
                    "patch at {:?} with shape {:?} overruns volume {:?}",
                    p.origin,
                    [d.0, d.1, d.2],
                    vol_shape
                )));
            }
        }
        for ((x, y, z), &v) in p.data.indexed_iter() {
            let idx = [p.origin[0] + x, p.origin[1] + y, p.origin[2] + z];
            sums[idx] += v.as_f64();
            counts[idx] += 1;
        }
    }
    let holes = counts.iter().filter(|&&c| c == 0).count();
    if holes > 0 {
        return Err(Error::data(format!(
            "merge_patches: {holes} voxels not covered by any patch"
        )));
    }
    let mut out = Array3::from_elem((vol_shape[0], vol_shape[1], vol_shape[2]), F::zero());
    ndarray::Zip::from(&mut out).and(&sums).and(&counts).for_each(|o, &s, &c| {
        *o = F::of(s / c as f64);
    });
    Ok(out)
}

/// Crop the same random window out of a low-dose/standard-dose pair.
pub fn random_crop_pair<F: Scalar, R: Rng>(
    low: &Array3<F>,
    standard: &Array3<F>,
    patch_shape: [usize; 3],
    rng: &mut R,
) -> Result<(Array3<F>, Array3<F>)> {
    if low.dim() != standard.dim() {
        return Err(Error::data(format!(
            "random_crop_pair: volume shapes differ ({:?} vs {:?})",
            low.dim(),
            standard.dim()
        )));
    }
    let dim = low.dim();
    let vol_shape = [dim.0, dim.1, dim.2];
    let grid = PatchGridSpec { patch_shape, stride: patch_shape };
    grid.check_fits(vol_shape)?;
    let mut origin = [0usize; 3];
    for d in 0..3 {
        origin[d] = rng.gen_range(0..=vol_shape[d] - patch_shape[d]);
    }
    let sl = ndarray::s![
        origin[0]..origin[0] + patch_shape[0],
        origin[1]..origin[1] + patch_shape[1],
        origin[2]..origin[2] + patch_shape[2]
    ];
    Ok((low.slice(sl).to_owned(), standard.slice(sl).to_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng;

    fn noise(shape: (usize, usize, usize), seed: u64) -> Array3<f32> {
        let mut rng = rng_from(seed);
        Array3::from_shape_fn(shape, |_| rng.gen_range(0.0f32..5.0))
    }

    #[test]
    fn clamped_lattice_matches_hand_computation() {
        assert_eq!(lattice_origins(50, 32, 32), vec![0, 18]);
        assert_eq!(lattice_origins(20, 16, 16), vec![0, 4]);
        assert_eq!(lattice_origins(64, 32, 32), vec![0, 32]);
        assert_eq!(lattice_origins(64, 32, 16), vec![0, 16, 32]);
        assert_eq!(lattice_origins(32, 32, 16), vec![0]);
    }

    #[test]
    fn patch_counts_for_reference_grids() {
        let v = noise((50, 50, 20), 1);
        let g = PatchGridSpec { patch_shape: [32, 32, 16], stride: [32, 32, 16] };
        let ps = extract_patches(&v, &g).unwrap();
        assert_eq!(ps.len(), 8);
        let mut xs: Vec<usize> = ps.iter().map(|p| p.origin[0]).collect();
        xs.sort_unstable();
        xs.dedup();
        assert_eq!(xs, vec![0, 18]);
        let mut zs: Vec<usize> = ps.iter().map(|p| p.origin[2]).collect();
        zs.sort_unstable();
        zs.dedup();
        assert_eq!(zs, vec![0, 4]);

        let v = noise((64, 64, 32), 2);
        let g = PatchGridSpec { patch_shape: [32, 32, 16], stride: [32, 32, 16] };
        assert_eq!(extract_patches(&v, &g).unwrap().len(), 8);
        let g = PatchGridSpec { patch_shape: [32, 32, 16], stride: [16, 16, 8] };
        assert_eq!(extract_patches(&v, &g).unwrap().len(), 27);
    }

    #[test]
    fn merge_of_extract_is_identity() {
        let v = noise((50, 50, 20), 3);
        for stride in [[32, 32, 16], [16, 16, 8], [20, 20, 10]] {
            let g = PatchGridSpec { patch_shape: [32, 32, 16], stride };
            let ps = extract_patches(&v, &g).unwrap();
            let back = merge_patches([50, 50, 20], &ps).unwrap();
            assert_eq!(back, v, "stride {stride:?}");
        }
    }

    #[test]
    fn overlap_averages_disagreeing_patches() {
        // two constant patches covering the same 2x2x2 volume
        let p1 = Patch { origin: [0, 0, 0], data: Array3::from_elem((2, 2, 2), 1.0f32) };
        let p2 = Patch { origin: [0, 0, 0], data: Array3::from_elem((2, 2, 2), 3.0f32) };
        let m = merge_patches([2, 2, 2], &[p1, p2]).unwrap();
        assert!(m.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn coverage_hole_is_rejected() {
        let p = Patch { origin: [0, 0, 0], data: Array3::from_elem((2, 2, 2), 1.0f32) };
        let err = merge_patches([4, 2, 2], &[p]).unwrap_err();
        assert!(err.to_string().contains("not covered"), "{err}");
    }

    #[test]
    fn patch_larger_than_volume_is_rejected() {
        let v = noise((16, 16, 8), 4);
        let g = PatchGridSpec { patch_shape: [32, 32, 16], stride: [16, 16, 8] };
        assert!(extract_patches(&v, &g).is_err());
    }

    #[test]
    fn zero_stride_is_rejected() {
        let g = PatchGridSpec { patch_shape: [8, 8, 8], stride: [0, 8, 8] };
        assert!(g.validate().is_err());
        let g = PatchGridSpec { patch_shape: [8, 8, 8], stride: [9, 8, 8] };
        assert!(g.validate().is_err());
    }

    #[test]
    fn crop_pair_takes_identical_windows() {
        let low = noise((40, 40, 20), 5);
        let std = noise((40, 40, 20), 6);
        let mut rng = rng_from(7);
        let (a, b) = random_crop_pair(&low, &std, [16, 16, 8], &mut rng).unwrap();
        assert_eq!(a.dim(), (16, 16, 8));
        assert_eq!(b.dim(), (16, 16, 8));
        // find the window in `low` matching `a`; `b` must be the same window of `std`
        let mut found = false;
        for x in 0..=24 {
            for y in 0..=24 {
                for z in 0..=12 {
                    let sl = ndarray::s![x..x + 16, y..y + 16, z..z + 8];
                    if low.slice(sl) == a {
                        assert_eq!(std.slice(sl), b);
                        found = true;
                    }
                }
            }
        }
        assert!(found);
    }

    #[test]
    fn crop_pair_single_position_is_origin() {
        let low = noise((16, 16, 8), 8);
        let std = noise((16, 16, 8), 9);
        let mut rng = rng_from(1);
        let (a, _) = random_crop_pair(&low, &std, [16, 16, 8], &mut rng).unwrap();
        assert_eq!(a, low);
    }

    #[test]
    fn crop_pair_rejects_mismatched_shapes() {
        let low = noise((16, 16, 8), 8);
        let std = noise((16, 16, 9), 9);
        let mut rng = rng_from(1);
        assert!(random_crop_pair(&low, &std, [8, 8, 8], &mut rng).is_err());
    }

    #[test]
    fn crop_pair_is_deterministic_under_seed() {
        let low = noise((40, 40, 20), 5);
        let std = noise((40, 40, 20), 6);
        let (a1, b1) = random_crop_pair(&low, &std, [16, 16, 8], &mut rng_from(42)).unwrap();
        let (a2, b2) = random_crop_pair(&low, &std, [16, 16, 8], &mut rng_from(42)).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
    }
}
