//! Image-quality metrics (PSNR, SSIM, NRMSE), the five-level weighted score,
//! and SUV statistics over spherical reference ROIs. All accumulation is in
//! f64 regardless of the volume scalar type.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volume::Volume;
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

fn check_same_shape<F: Scalar>(a: &Array3<F>, b: &Array3<F>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::data(format!(
            "volume shapes differ: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

fn range_of<F: Scalar>(reference: &Array3<F>) -> Result<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in reference.iter() {
        let x = v.as_f64();
        lo = lo.min(x);
        hi = hi.max(x);
    }
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::numeric(format!(
            "reference has zero dynamic range (min = max = {lo})"
        )));
    }
    Ok(range)
}

fn mse<F: Scalar>(a: &Array3<F>, b: &Array3<F>) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x.as_f64() - y.as_f64();
        acc += d * d;
    }
    acc / a.len() as f64
}

/// Peak signal-to-noise ratio in dB with the reference dynamic range as the
/// peak: `20 log10(range / rmse)`. Identical volumes return `+inf`.
pub fn psnr<F: Scalar>(reference: &Array3<F>, test: &Array3<F>) -> Result<f64> {
    check_same_shape(reference, test)?;
    let range = range_of(reference)?;
    let m = mse(reference, test);
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (range / m.sqrt()).log10())
}

/// Normalized RMSE as a percentage of the reference dynamic range.
pub fn nrmse<F: Scalar>(reference: &Array3<F>, test: &Array3<F>) -> Result<f64> {
    check_same_shape(reference, test)?;
    let range = range_of(reference)?;
    Ok(100.0 * mse(reference, test).sqrt() / range)
}

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Mean structural similarity over all fully-interior 7x7x7 windows with a
/// uniform weighting. Local statistics use the biased (1/n) estimator; the
/// dynamic range comes from the reference. See [`ssim_with_range`] to force a
/// range when the reference is degenerate.
pub fn ssim<F: Scalar>(reference: &Array3<F>, test: &Array3<F>) -> Result<f64> {
    let range = range_of(reference)?;
    ssim_with_range(reference, test, range)
}

pub fn ssim_with_range<F: Scalar>(
    reference: &Array3<F>,
    test: &Array3<F>,
    range: f64,
) -> Result<f64> {
    check_same_shape(reference, test)?;
    if !(range > 0.0) || !range.is_finite() {
        return Err(Error::numeric(format!("ssim range must be positive, got {range}")));
    }
    let (nx, ny, nz) = reference.dim();
    let w = SSIM_WINDOW;
    if nx < w || ny < w || nz < w {
        return Err(Error::config(format!(
            "ssim window {w}^3 does not fit volume {:?}",
            reference.dim()
        )));
    }

    // integral images over x, y, x^2, y^2, xy
    let mut pre = [
        Array3::<f64>::zeros((nx + 1, ny + 1, nz + 1)),
        Array3::<f64>::zeros((nx + 1, ny + 1, nz + 1)),
        Array3::<f64>::zeros((nx + 1, ny + 1, nz + 1)),
        Array3::<f64>::zeros((nx + 1, ny + 1, nz + 1)),
        Array3::<f64>::zeros((nx + 1, ny + 1, nz + 1)),
    ];
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let a = reference[[x, y, z]].as_f64();
                let b = test[[x, y, z]].as_f64();
                let vals = [a, b, a * a, b * b, a * b];
                for (p, v) in pre.iter_mut().zip(vals) {
                    p[[x + 1, y + 1, z + 1]] = v
                        + p[[x, y + 1, z + 1]]
                        + p[[x + 1, y, z + 1]]
                        + p[[x + 1, y + 1, z]]
                        - p[[x, y, z + 1]]
                        - p[[x, y + 1, z]]
                        - p[[x + 1, y, z]]
                        + p[[x, y, z]];
                }
            }
        }
    }
    let window_sum = |p: &Array3<f64>, x: usize, y: usize, z: usize| -> f64 {
        let (x1, y1, z1) = (x + w, y + w, z + w);
        p[[x1, y1, z1]] - p[[x, y1, z1]] - p[[x1, y, z1]] - p[[x1, y1, z]]
            + p[[x, y, z1]]
            + p[[x, y1, z]]
            + p[[x1, y, z]]
            - p[[x, y, z]]
    };

    let c1 = (SSIM_K1 * range) * (SSIM_K1 * range);
    let c2 = (SSIM_K2 * range) * (SSIM_K2 * range);
    let n = (w * w * w) as f64;
    let mut acc = 0.0f64;
    let mut count = 0usize;
    for x in 0..=nx - w {
        for y in 0..=ny - w {
            for z in 0..=nz - w {
                let sx = window_sum(&pre[0], x, y, z);
                let sy = window_sum(&pre[1], x, y, z);
                let sxx = window_sum(&pre[2], x, y, z);
                let syy = window_sum(&pre[3], x, y, z);
                let sxy = window_sum(&pre[4], x, y, z);
                let mx = sx / n;
                let my = sy / n;
                let vx = sxx / n - mx * mx;
                let vy = syy / n - my * my;
                let cxy = sxy / n - mx * my;
                let lum = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
                let cs = (2.0 * cxy + c2) / (vx + vy + c2);
                acc += lum * cs;
                count += 1;
            }
        }
    }
    Ok((acc / count as f64).clamp(-1.0, 1.0))
}

/// Which dose level carries the heaviest weight when collapsing per-DRF
/// scores into one number. Both orderings use the weights 35/25/20/15/5 %.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightOrdering {
    /// 35 % on DRF 4, tapering to 5 % on DRF 100. Reproduces the published
    /// per-method averages.
    #[default]
    AsTables,
    /// 35 % on DRF 100, tapering to 5 % on DRF 4: the highest reduction
    /// dominates.
    AsEquation,
}

pub const WEIGHTED_DRFS: [u32; 5] = [4, 10, 20, 50, 100];
const WEIGHTS_DESC: [f64; 5] = [0.35, 0.25, 0.20, 0.15, 0.05];

/// Collapse per-DRF scores into a single weighted number. The map must hold
/// exactly the five reduced dose levels.
pub fn weighted_score(per_drf: &BTreeMap<u32, f64>, ordering: WeightOrdering) -> Result<f64> {
    for drf in WEIGHTED_DRFS {
        if !per_drf.contains_key(&drf) {
            return Err(Error::config(format!(
                "weighted_score: missing DRF {drf} (need all of {WEIGHTED_DRFS:?})"
            )));
        }
    }
    for k in per_drf.keys() {
        if !WEIGHTED_DRFS.contains(k) {
            return Err(Error::config(format!("weighted_score: unexpected DRF {k}")));
        }
    }
    let mut acc = 0.0;
    for (i, drf) in WEIGHTED_DRFS.iter().enumerate() {
        let w = match ordering {
            WeightOrdering::AsTables => WEIGHTS_DESC[i],
            WeightOrdering::AsEquation => WEIGHTS_DESC[4 - i],
        };
        acc += w * per_drf[drf];
    }
    Ok(acc)
}

/// Spherical reference ROI in world millimetres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiSphere {
    pub center_mm: [f64; 3],
    pub diameter_mm: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RoiStats {
    pub suv_max: f64,
    pub suv_mean: f64,
    pub voxels: usize,
}

/// SUVmax / SUVmean over the voxels whose centres fall inside the sphere.
/// Voxel centres sit at `(i + 0.5) * spacing`. The reference protocol uses
/// 20 mm spheres, so diameters outside 20 +/- 1 mm are rejected, as are
/// spheres that poke out of the volume.
pub fn roi_suv_stats<F: Scalar>(v: &Volume<F>, roi: &RoiSphere) -> Result<RoiStats> {
    if !(19.0..=21.0).contains(&roi.diameter_mm) {
        return Err(Error::config(format!(
            "reference ROI diameter must be 20 +/- 1 mm, got {}",
            roi.diameter_mm
        )));
    }
    let r = roi.diameter_mm / 2.0;
    let shape = v.shape();
    for d in 0..3 {
        let extent = shape[d] as f64 * v.spacing[d];
        if roi.center_mm[d] - r < 0.0 || roi.center_mm[d] + r > extent {
            return Err(Error::config(format!(
                "ROI at {:?} (r = {r} mm) leaves the volume (extent axis {d}: {extent} mm)",
                roi.center_mm
            )));
        }
    }
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for d in 0..3 {
        lo[d] = (((roi.center_mm[d] - r) / v.spacing[d] - 0.5).floor().max(0.0)) as usize;
        hi[d] = (((roi.center_mm[d] + r) / v.spacing[d] + 0.5).ceil() as usize).min(shape[d]);
    }
    let r2 = r * r;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for x in lo[0]..hi[0] {
        let dx = (x as f64 + 0.5) * v.spacing[0] - roi.center_mm[0];
        for y in lo[1]..hi[1] {
            let dy = (y as f64 + 0.5) * v.spacing[1] - roi.center_mm[1];
            for z in lo[2]..hi[2] {
                let dz = (z as f64 + 0.5) * v.spacing[2] - roi.center_mm[2];
                if dx * dx + dy * dy + dz * dz <= r2 {
                    let val = v.voxels[[x, y, z]].as_f64();
                    max = max.max(val);
                    sum += val;
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::data(format!(
            "ROI at {:?} contains no voxel centres (spacing {:?})",
            roi.center_mm, v.spacing
        )));
    }
    Ok(RoiStats { suv_max: max, suv_mean: sum / count as f64, voxels: count })
}

/// Absolute percentage error of an estimate against a positive reference.
pub fn percentage_error(estimate: f64, reference: f64) -> Result<f64> {
    if !(reference > 0.0) || !reference.is_finite() {
        return Err(Error::config(format!(
            "percentage_error: reference must be positive, got {reference}"
        )));
    }
    Ok(100.0 * (estimate - reference).abs() / reference)
}
