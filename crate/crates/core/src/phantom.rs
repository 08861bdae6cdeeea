//! Synthetic phantom generator and dose-reduction simulator. Phantoms are
//! additive compositions of smooth-edged ellipsoids over a uniform
//! background; low-dose acquisitions are simulated by Poisson thinning of the
//! expected count map, which preserves the mean and scales variance by DRF.

use crate::error::{Error, Result};
use crate::metrics::RoiSphere;
use crate::rng::{derive_seed, rng_from};
use crate::scalar::Scalar;
use crate::volume::{
    save_volume, DatasetManifest, DoseLevel, SubjectEntry, Volume,
};
use ndarray::Array3;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Ellipsoid {
    /// Centre in world millimetres.
    pub center_mm: [f64; 3],
    /// Semi-axes in millimetres.
    pub radii_mm: [f64; 3],
    pub suv: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Sphere {
    pub center_mm: [f64; 3],
    pub radius_mm: f64,
    pub suv: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    pub background_suv: f64,
    #[serde(default)]
    pub organs: Vec<Ellipsoid>,
    #[serde(default)]
    pub lesions: Vec<Sphere>,
    /// Scanner sensitivity: expected full-dose counts per voxel per SUV.
    pub counts_per_suv: f64,
}

impl PhantomSpec {
    pub fn extent_mm(&self) -> [f64; 3] {
        [
            self.shape[0] as f64 * self.spacing[0],
            self.shape[1] as f64 * self.spacing[1],
            self.shape[2] as f64 * self.spacing[2],
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape.iter().any(|&n| n == 0) {
            return Err(Error::config(format!("phantom shape {:?} has a zero axis", self.shape)));
        }
        if self.spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::config(format!("phantom spacing {:?} must be positive", self.spacing)));
        }
        if !self.background_suv.is_finite() || self.background_suv < 0.0 {
            return Err(Error::config(format!(
                "background SUV must be non-negative, got {}",
                self.background_suv
            )));
        }
        if !self.counts_per_suv.is_finite() || self.counts_per_suv <= 0.0 {
            return Err(Error::config(format!(
                "counts_per_suv must be positive, got {}",
                self.counts_per_suv
            )));
        }
        let extent = self.extent_mm();
        let margin = self.mean_spacing() * 0.5; // half the falloff band
        let check = |center: &[f64; 3], radii: &[f64; 3], what: &str| -> Result<()> {
            for d in 0..3 {
                if radii[d] <= 0.0 || !radii[d].is_finite() {
                    return Err(Error::config(format!("{what}: radius must be positive")));
                }
                if center[d] - radii[d] - margin < 0.0 || center[d] + radii[d] + margin > extent[d] {
                    return Err(Error::config(format!(
                        "{what} at {center:?} with radii {radii:?} leaves the volume (extent {extent:?})"
                    )));
                }
            }
            Ok(())
        };
        for (i, o) in self.organs.iter().enumerate() {
            if !o.suv.is_finite() || o.suv < 0.0 {
                return Err(Error::config(format!("organ {i}: SUV must be non-negative")));
            }
            check(&o.center_mm, &o.radii_mm, &format!("organ {i}"))?;
        }
        for (i, l) in self.lesions.iter().enumerate() {
            if !l.suv.is_finite() || l.suv < 0.0 {
                return Err(Error::config(format!("lesion {i}: SUV must be non-negative")));
            }
            check(&l.center_mm, &[l.radius_mm; 3], &format!("lesion {i}"))?;
        }
        Ok(())
    }

    fn mean_spacing(&self) -> f64 {
        (self.spacing[0] + self.spacing[1] + self.spacing[2]) / 3.0
    }
}

/// Edge weight of an ellipsoid at normalized radius `rho`: 1 inside, 0
/// outside, linear across a band one voxel wide centred on the surface.
fn edge_weight(rho: f64, delta: f64) -> f64 {
    ((1.0 - rho) / delta + 0.5).clamp(0.0, 1.0)
}

fn add_ellipsoid<F: Scalar>(
    voxels: &mut Array3<F>,
    spacing: [f64; 3],
    center: [f64; 3],
    radii: [f64; 3],
    amplitude: f64,
    mean_spacing: f64,
) {
    let r_geo = (radii[0] * radii[1] * radii[2]).cbrt();
    let delta = mean_spacing / r_geo;
    let dim = voxels.dim();
    let shape = [dim.0, dim.1, dim.2];
    // bounding box of the support (surface band included)
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for d in 0..3 {
        let reach = radii[d] * (1.0 + delta);
        lo[d] = (((center[d] - reach) / spacing[d] - 0.5).floor().max(0.0)) as usize;
        hi[d] = ((((center[d] + reach) / spacing[d] - 0.5).ceil()) as usize + 1).min(shape[d]);
    }
    for x in lo[0]..hi[0] {
        let dx = ((x as f64 + 0.5) * spacing[0] - center[0]) / radii[0];
        for y in lo[1]..hi[1] {
            let dy = ((y as f64 + 0.5) * spacing[1] - center[1]) / radii[1];
            for z in lo[2]..hi[2] {
                let dz = ((z as f64 + 0.5) * spacing[2] - center[2]) / radii[2];
                let rho = (dx * dx + dy * dy + dz * dz).sqrt();
                let w = edge_weight(rho, delta);
                if w > 0.0 {
                    voxels[[x, y, z]] = voxels[[x, y, z]] + F::of(amplitude * w);
                }
            }
        }
    }
}

/// Render a phantom spec into a full-dose volume. Voxel centres sit at
/// `(i + 0.5) * spacing`; object contributions are `(suv - background)`
/// scaled by the smooth edge weight, so a voxel at an object centre reads the
/// object SUV exactly.
pub fn generate_phantom<F: Scalar>(spec: &PhantomSpec, id: &str) -> Result<Volume<F>> {
    spec.validate()?;
    let mut voxels = Array3::from_elem(
        (spec.shape[0], spec.shape[1], spec.shape[2]),
        F::of(spec.background_suv),
    );
    let h = spec.mean_spacing();
    for o in &spec.organs {
        add_ellipsoid(
            &mut voxels,
            spec.spacing,
            o.center_mm,
            o.radii_mm,
            o.suv - spec.background_suv,
            h,
        );
    }
    for l in &spec.lesions {
        add_ellipsoid(
            &mut voxels,
            spec.spacing,
            l.center_mm,
            [l.radius_mm; 3],
            l.suv - spec.background_suv,
            h,
        );
    }
    // additive composition can undershoot zero when an object is colder than
    // the background; activity is clamped at zero
    voxels.mapv_inplace(|v| v.max(F::zero()));
    Volume::new(voxels, spec.spacing, DoseLevel::Full, id)
}

/// Poisson-resample a volume at a given dose fraction. `factor` is the DRF as
/// a real number; `factor = 1` reproduces full-dose count statistics (still
/// noisy). Exposed separately from [`simulate_low_dose`] so variance
/// references at DRF 1 can be drawn.
pub fn poisson_thin<F: Scalar>(
    voxels: &Array3<F>,
    counts_per_suv: f64,
    factor: f64,
    seed: u64,
) -> Result<Array3<F>> {
    if !counts_per_suv.is_finite() || counts_per_suv <= 0.0 {
        return Err(Error::config(format!("counts_per_suv must be positive, got {counts_per_suv}")));
    }
    if !factor.is_finite() || factor < 1.0 {
        return Err(Error::config(format!("dose-reduction factor must be >= 1, got {factor}")));
    }
    let mut rng = rng_from(seed);
    let scale = factor / counts_per_suv;
    let mut out = voxels.to_owned();
    for v in out.iter_mut() {
        let lambda = v.as_f64() * counts_per_suv / factor;
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(Error::numeric(format!("negative or non-finite rate {lambda}")));
        }
        let counts = if lambda == 0.0 {
            0.0
        } else {
            Poisson::new(lambda)
                .map_err(|e| Error::numeric(format!("poisson({lambda}): {e}")))?
                .sample(&mut rng)
        };
        *v = F::of(counts * scale);
    }
    Ok(out)
}

/// Simulate a low-dose acquisition of a full-dose volume. DRF 1 is an exact
/// copy; reduced doses draw voxelwise Poisson counts at `1/drf` of the
/// full-dose rate and rescale back to SUV, so the mean is preserved and the
/// variance grows by the DRF.
pub fn simulate_low_dose<F: Scalar>(
    full: &Volume<F>,
    drf: DoseLevel,
    counts_per_suv: f64,
    seed: u64,
) -> Result<Volume<F>> {
    if drf == DoseLevel::Full {
        return Ok(full.clone());
    }
    let voxels = poisson_thin(&full.voxels, counts_per_suv, drf.factor() as f64, seed)?;
    Volume::new(voxels, full.spacing, drf, &full.id)
}

/// Randomization ranges for cohort generation. Each subject gets a body
/// ellipsoid, a liver with a recorded 20 mm reference ROI at its centre, and
/// a handful of hot lesions placed inside the liver.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhantomTemplate {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    pub background_suv_range: [f64; 2],
    pub body_suv_range: [f64; 2],
    pub liver_suv_range: [f64; 2],
    pub lesion_suv_range: [f64; 2],
    pub lesion_radius_mm_range: [f64; 2],
    pub lesions_per_subject: [usize; 2],
    pub counts_per_suv: f64,
}

impl Default for PhantomTemplate {
    fn default() -> Self {
        PhantomTemplate {
            shape: [64, 64, 32],
            spacing: [2.0, 2.0, 2.0],
            background_suv_range: [0.2, 0.4],
            body_suv_range: [0.9, 1.3],
            liver_suv_range: [1.8, 2.6],
            lesion_suv_range: [4.0, 12.0],
            lesion_radius_mm_range: [4.0, 8.0],
            lesions_per_subject: [1, 3],
            counts_per_suv: 100.0,
        }
    }
}

impl PhantomTemplate {
    /// Draw one subject's phantom spec and its reference ROI.
    pub fn sample(&self, rng: &mut impl Rng) -> (PhantomSpec, RoiSphere) {
        let extent = [
            self.shape[0] as f64 * self.spacing[0],
            self.shape[1] as f64 * self.spacing[1],
            self.shape[2] as f64 * self.spacing[2],
        ];
        let u = |rng: &mut dyn rand::RngCore, r: [f64; 2]| -> f64 {
            if r[0] == r[1] {
                r[0]
            } else {
                rng.gen_range(r[0]..r[1])
            }
        };
        let background = u(rng, self.background_suv_range);
        let body_suv = u(rng, self.body_suv_range);
        let body_center = [extent[0] * 0.5, extent[1] * 0.5, extent[2] * 0.5];
        let body_radii = [
            extent[0] * rng.gen_range(0.38..0.42),
            extent[1] * rng.gen_range(0.38..0.42),
            extent[2] * rng.gen_range(0.38..0.42),
        ];
        let liver_suv = u(rng, self.liver_suv_range);
        let liver_center = [
            body_center[0] + body_radii[0] * rng.gen_range(-0.25..0.25),
            body_center[1] + body_radii[1] * rng.gen_range(-0.25..0.25),
            body_center[2] + body_radii[2] * rng.gen_range(-0.2..0.2),
        ];
        let liver_radii = [
            body_radii[0] * rng.gen_range(0.40..0.48),
            body_radii[1] * rng.gen_range(0.40..0.48),
            body_radii[2] * rng.gen_range(0.40..0.48),
        ];
        let n_lesions = rng.gen_range(self.lesions_per_subject[0]..=self.lesions_per_subject[1]);
        let mut lesions = Vec::with_capacity(n_lesions);
        for _ in 0..n_lesions {
            let radius = u(rng, self.lesion_radius_mm_range);
            // place inside the liver, comfortably away from its surface
            let dir: [f64; 3] = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let center = [
                liver_center[0] + dir[0] * (liver_radii[0] * 0.5 - radius).max(0.0),
                liver_center[1] + dir[1] * (liver_radii[1] * 0.5 - radius).max(0.0),
                liver_center[2] + dir[2] * (liver_radii[2] * 0.5 - radius).max(0.0),
            ];
            lesions.push(Sphere { center_mm: center, radius_mm: radius, suv: u(rng, self.lesion_suv_range) });
        }
        let spec = PhantomSpec {
            shape: self.shape,
            spacing: self.spacing,
            background_suv: background,
            organs: vec![
                Ellipsoid { center_mm: body_center, radii_mm: body_radii, suv: body_suv },
                Ellipsoid { center_mm: liver_center, radii_mm: liver_radii, suv: liver_suv },
            ],
            lesions,
            counts_per_suv: self.counts_per_suv,
        };
        let roi = RoiSphere { center_mm: liver_center, diameter_mm: 20.0 };
        (spec, roi)
    }
}

/// Generate a cohort: for every subject, one full-dose volume plus one
/// simulated acquisition per requested DRF, written under `out_dir` with a
/// manifest. Every subject owns derived seeds, so the output is byte-for-byte
/// reproducible and independent of scheduling.
pub fn build_dataset<F: Scalar>(
    template: &PhantomTemplate,
    n_subjects: usize,
    drfs: &[DoseLevel],
    split_fractions: [f64; 3],
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if n_subjects == 0 {
        return Err(Error::config("build_dataset: n_subjects must be positive".to_string()));
    }
    if drfs.is_empty() || drfs.contains(&DoseLevel::Full) {
        return Err(Error::config(
            "build_dataset: drfs must be a non-empty list of reduced dose levels".to_string(),
        ));
    }
    std::fs::create_dir_all(out_dir)?;

    let entries: Vec<SubjectEntry> = (0..n_subjects)
        .into_par_iter()
        .map(|i| -> Result<SubjectEntry> {
            let subject = format!("s{i:03}");
            let mut rng = rng_from(derive_seed(seed, i as u64));
            let (spec, roi) = template.sample(&mut rng);
            let full: Volume<F> = generate_phantom(&spec, &subject)?;
            let full_name = format!("{subject}_full.vol");
            save_volume(&out_dir.join(&full_name), &full)?;
            let mut low = BTreeMap::new();
            for (j, &drf) in drfs.iter().enumerate() {
                let s = derive_seed(seed, (i as u64) << 16 | (j as u64 + 1));
                let lv = simulate_low_dose(&full, drf, template.counts_per_suv, s)?;
                let name = format!("{subject}_drf{}.vol", drf.factor());
                save_volume(&out_dir.join(&name), &lv)?;
                low.insert(drf.factor().to_string(), name.into());
            }
            Ok(SubjectEntry { subject, full: full_name.into(), low, roi: Some(roi) })
        })
        .collect::<Result<Vec<_>>>()?;

    let ids: Vec<String> = entries.iter().map(|e| e.subject.clone()).collect();
    let split = crate::volume::split_dataset(&ids, split_fractions, derive_seed(seed, u64::MAX))?;
    let manifest = DatasetManifest {
        schema_version: crate::volume::MANIFEST_SCHEMA_VERSION,
        entries,
        split,
    };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::nrmse;

    fn plain_spec() -> PhantomSpec {
        PhantomSpec {
            shape: [40, 40, 20],
            spacing: [2.0, 2.0, 2.0],
            background_suv: 1.0,
            organs: vec![],
            lesions: vec![],
            counts_per_suv: 100.0,
        }
    }

    #[test]
    fn no_objects_gives_constant_background() {
        let v: Volume<f32> = generate_phantom(&plain_spec(), "bg").unwrap();
        assert!(v.voxels.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn sphere_centre_voxel_reads_its_suv_exactly() {
        let mut spec = plain_spec();
        // centre of voxel [20, 20, 10] is at (41, 41, 21) mm
        spec.lesions.push(Sphere { center_mm: [41.0, 41.0, 21.0], radius_mm: 8.0, suv: 8.0 });
        let v: Volume<f64> = generate_phantom(&spec, "c").unwrap();
        assert_eq!(v.voxels[[20, 20, 10]], 8.0);
        // far corner is untouched background
        assert_eq!(v.voxels[[0, 0, 0]], 1.0);
    }

    #[test]
    fn integral_matches_analytic_ellipsoid_volumes() {
        // oracle: sum over voxels of (value - background) * voxel volume should
        // approach sum of 4/3 pi abc * (suv - background) for smooth edges
        let spec = PhantomSpec {
            shape: [80, 80, 60],
            spacing: [2.0, 2.0, 2.0],
            background_suv: 0.5,
            organs: vec![Ellipsoid {
                center_mm: [80.0, 80.0, 60.0],
                radii_mm: [50.0, 40.0, 35.0],
                suv: 2.5,
            }],
            lesions: vec![Sphere { center_mm: [80.0, 80.0, 60.0], radius_mm: 12.0, suv: 9.0 }],
            counts_per_suv: 100.0,
        };
        let v: Volume<f64> = generate_phantom(&spec, "i").unwrap();
        let voxel_vol = 8.0;
        let measured: f64 =
            v.voxels.iter().map(|&x| (x - spec.background_suv) * voxel_vol).sum();
        let expected = 4.0 / 3.0 * std::f64::consts::PI
            * (50.0 * 40.0 * 35.0 * (2.5 - 0.5) + 12.0f64.powi(3) * (9.0 - 0.5));
        let rel = (measured - expected).abs() / expected;
        assert!(rel < 0.05, "relative integral error {rel}");
    }

    #[test]
    fn objects_outside_bounds_are_rejected() {
        let mut spec = plain_spec();
        spec.lesions.push(Sphere { center_mm: [5.0, 40.0, 20.0], radius_mm: 8.0, suv: 4.0 });
        assert!(spec.validate().is_err());
    }

    #[test]
    fn drf1_is_an_exact_copy() {
        let full: Volume<f32> = generate_phantom(&plain_spec(), "full").unwrap();
        let same = simulate_low_dose(&full, DoseLevel::Full, 100.0, 9).unwrap();
        assert_eq!(same.voxels, full.voxels);
        assert_eq!(same.dose, DoseLevel::Full);
    }

    #[test]
    fn low_dose_is_deterministic_and_seed_sensitive() {
        let full: Volume<f32> = generate_phantom(&plain_spec(), "d").unwrap();
        let a = simulate_low_dose(&full, DoseLevel::Drf20, 100.0, 5).unwrap();
        let b = simulate_low_dose(&full, DoseLevel::Drf20, 100.0, 5).unwrap();
        let c = simulate_low_dose(&full, DoseLevel::Drf20, 100.0, 6).unwrap();
        assert_eq!(a.voxels, b.voxels);
        assert_ne!(a.voxels, c.voxels);
        assert_eq!(a.dose, DoseLevel::Drf20);
    }

    #[test]
    fn thinning_preserves_mean_within_monte_carlo_bands() {
        // constant volume: voxelwise average over seeds must stay within 3 sigma
        let full: Volume<f64> = generate_phantom(&plain_spec(), "m").unwrap();
        let n_seeds = 40;
        let drf = DoseLevel::Drf10;
        let mut acc = Array3::<f64>::zeros(full.voxels.dim());
        for s in 0..n_seeds {
            let low = simulate_low_dose(&full, drf, 100.0, 1000 + s).unwrap();
            acc += &low.voxels;
        }
        acc.mapv_inplace(|x| x / n_seeds as f64);
        // per-voxel sd of the mean: sqrt(v * drf / cps) / sqrt(n)
        let sd = (1.0 * 10.0 / 100.0f64).sqrt() / (n_seeds as f64).sqrt();
        let worst = acc.iter().map(|&m| (m - 1.0).abs()).fold(0.0, f64::max);
        // 3-sigma band with a Bonferroni-ish slack for 32k voxels
        assert!(worst < 5.0 * sd, "worst deviation {worst}, sd {sd}");
    }

    #[test]
    fn degradation_is_monotone_in_drf() {
        let mut spec = plain_spec();
        spec.lesions.push(Sphere { center_mm: [41.0, 41.0, 21.0], radius_mm: 10.0, suv: 6.0 });
        let full: Volume<f64> = generate_phantom(&spec, "mono").unwrap();
        let mut mean_err = Vec::new();
        for drf in DoseLevel::REDUCED {
            let mut acc = 0.0;
            for s in 0..10u64 {
                let low = simulate_low_dose(&full, drf, 100.0, 70 + s).unwrap();
                acc += nrmse(&full.voxels, &low.voxels).unwrap();
            }
            mean_err.push(acc / 10.0);
        }
        for w in mean_err.windows(2) {
            assert!(w[1] > w[0], "NRMSE not increasing: {mean_err:?}");
        }
    }

    #[test]
    fn dataset_layout_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let t = PhantomTemplate { shape: [32, 32, 16], ..Default::default() };
        let drfs = [DoseLevel::Drf4, DoseLevel::Drf100];
        let m = build_dataset::<f32>(&t, 5, &drfs, [0.6, 0.2, 0.2], 11, dir.path()).unwrap();
        assert_eq!(m.entries.len(), 5);
        for e in &m.entries {
            assert!(dir.path().join(&e.full).exists());
            assert_eq!(e.low.len(), 2);
            for p in e.low.values() {
                assert!(dir.path().join(p).exists());
            }
            assert!(e.roi.is_some());
        }
        // regeneration into a second directory is byte-identical
        let dir2 = tempfile::tempdir().unwrap();
        build_dataset::<f32>(&t, 5, &drfs, [0.6, 0.2, 0.2], 11, dir2.path()).unwrap();
        for e in &m.entries {
            let a = std::fs::read(dir.path().join(&e.full)).unwrap();
            let b = std::fs::read(dir2.path().join(&e.full)).unwrap();
            assert_eq!(a, b, "full volume of {} differs", e.subject);
            for p in e.low.values() {
                let a = std::fs::read(dir.path().join(p)).unwrap();
                let b = std::fs::read(dir2.path().join(p)).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn dataset_rejects_full_dose_in_drf_list() {
        let dir = tempfile::tempdir().unwrap();
        let t = PhantomTemplate::default();
        let err =
            build_dataset::<f32>(&t, 3, &[DoseLevel::Full], [0.6, 0.2, 0.2], 1, dir.path())
                .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
