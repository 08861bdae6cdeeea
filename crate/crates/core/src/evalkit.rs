//! Cohort-level evaluation: per-(subject, DRF) metric rows, per-DRF
//! aggregates, and the weighted overall scores, bundled into a serializable
//! report.
//!
//! The report deliberately echoes the normalization conventions the metric
//! implementations chose (peak and normalizer from the reference range,
//! uniform SSIM window), so a saved JSON file is auditable on its own.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    nrmse, percentage_error, psnr, roi_suv_stats, ssim, weighted_score, RoiSphere, WeightOrdering,
    WEIGHTED_DRFS,
};
use crate::scalar::Scalar;
use crate::volume::{load_volume, DatasetManifest, DoseLevel, SplitBucket, Volume};

/// One metric triple; also reused for the weighted overall scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    /// dB, from the reference volume's range.
    pub psnr: f64,
    pub ssim: f64,
    /// Percent of the reference volume's range.
    pub nrmse: f64,
}

/// SUV statistics of candidate and reference over one subject's ROI, with
/// their absolute percentage errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiComparison {
    pub suv_max_ref: f64,
    pub suv_max_pred: f64,
    pub suv_mean_ref: f64,
    pub suv_mean_pred: f64,
    pub pe_suv_max: f64,
    pub pe_suv_mean: f64,
}

/// One evaluated (subject, DRF) pairing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectRow {
    pub subject: String,
    pub drf: u32,
    #[serde(flatten)]
    pub metrics: MetricTriple,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub roi: Option<RoiComparison>,
}

/// The measurement conventions behind every number in a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub psnr_peak: String,
    pub nrmse_normalizer: String,
    pub ssim_window: [usize; 3],
    /// K1 and K2 of the SSIM stabilizers.
    pub ssim_k: [f64; 2],
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions {
            psnr_peak: "reference range".into(),
            nrmse_normalizer: "reference range".into(),
            ssim_window: [7, 7, 7],
            ssim_k: [0.01, 0.03],
        }
    }
}

/// Everything one evaluation run measured. `weighted` holds both ordering
/// variants and is populated exactly when all five canonical DRFs were
/// evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    /// Which split bucket was evaluated ("train" | "val" | "test").
    pub bucket: String,
    pub conventions: Conventions,
    pub rows: Vec<SubjectRow>,
    /// Cohort mean of each metric per DRF.
    pub per_drf: BTreeMap<u32, MetricTriple>,
    /// Keyed "as_tables" / "as_equation"; empty unless all five DRFs present.
    pub weighted: BTreeMap<String, MetricTriple>,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

fn ordering_key(ordering: WeightOrdering) -> &'static str {
    match ordering {
        WeightOrdering::AsTables => "as_tables",
        WeightOrdering::AsEquation => "as_equation",
    }
}

impl MetricsReport {
    /// Aggregate raw rows into a report. Fails on an empty row set and on
    /// out-of-range metric values.
    pub fn from_rows(bucket: SplitBucket, rows: Vec<SubjectRow>) -> Result<MetricsReport> {
        if rows.is_empty() {
            return Err(Error::data("cannot build a metrics report from zero rows"));
        }
        for r in &rows {
            if !(-1.0..=1.0).contains(&r.metrics.ssim) {
                return Err(Error::numeric(format!(
                    "subject '{}' DRF {}: ssim {} outside [-1, 1]",
                    r.subject, r.drf, r.metrics.ssim
                )));
            }
            if !(r.metrics.nrmse >= 0.0) {
                return Err(Error::numeric(format!(
                    "subject '{}' DRF {}: nrmse {} is negative or NaN",
                    r.subject, r.drf, r.metrics.nrmse
                )));
            }
        }

        let mut sums: BTreeMap<u32, (MetricTriple, usize)> = BTreeMap::new();
        for r in &rows {
            let (acc, n) = sums
                .entry(r.drf)
                .or_insert((MetricTriple { psnr: 0.0, ssim: 0.0, nrmse: 0.0 }, 0));
            acc.psnr += r.metrics.psnr;
            acc.ssim += r.metrics.ssim;
            acc.nrmse += r.metrics.nrmse;
            *n += 1;
        }
        let per_drf: BTreeMap<u32, MetricTriple> = sums
            .into_iter()
            .map(|(drf, (acc, n))| {
                let n = n as f64;
                (drf, MetricTriple { psnr: acc.psnr / n, ssim: acc.ssim / n, nrmse: acc.nrmse / n })
            })
            .collect();

        let mut weighted = BTreeMap::new();
        if WEIGHTED_DRFS.iter().all(|d| per_drf.contains_key(d)) && per_drf.len() == WEIGHTED_DRFS.len()
        {
            for ordering in [WeightOrdering::AsTables, WeightOrdering::AsEquation] {
                let collapse = |f: fn(&MetricTriple) -> f64| -> Result<f64> {
                    let m: BTreeMap<u32, f64> =
                        per_drf.iter().map(|(&d, t)| (d, f(t))).collect();
                    weighted_score(&m, ordering)
                };
                weighted.insert(
                    ordering_key(ordering).to_string(),
                    MetricTriple {
                        psnr: collapse(|t| t.psnr)?,
                        ssim: collapse(|t| t.ssim)?,
                        nrmse: collapse(|t| t.nrmse)?,
                    },
                );
            }
        }

        Ok(MetricsReport {
            schema_version: REPORT_SCHEMA_VERSION,
            bucket: format!("{bucket}"),
            conventions: Conventions::default(),
            rows,
            per_drf,
            weighted,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::data(format!("cannot serialize metrics report: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<MetricsReport> {
        let text = std::fs::read_to_string(path)?;
        let report: MetricsReport = serde_json::from_str(&text)
            .map_err(|e| Error::data(format!("{}: not a metrics report: {e}", path.display())))?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::data(format!(
                "{}: report schema version {} unsupported (expected {})",
                path.display(),
                report.schema_version,
                REPORT_SCHEMA_VERSION
            )));
        }
        Ok(report)
    }

    /// One CSV row per (subject, DRF); ROI columns appear only when at least
    /// one row carries an ROI comparison.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let with_roi = self.rows.iter().any(|r| r.roi.is_some());
        let mut out = String::from("subject,drf,psnr,ssim,nrmse");
        if with_roi {
            out.push_str(",suv_max_ref,suv_max_pred,suv_mean_ref,suv_mean_pred,pe_suv_max,pe_suv_mean");
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}",
                r.subject, r.drf, r.metrics.psnr, r.metrics.ssim, r.metrics.nrmse
            ));
            if with_roi {
                match &r.roi {
                    Some(c) => out.push_str(&format!(
                        ",{},{},{},{},{},{}",
                        c.suv_max_ref,
                        c.suv_max_pred,
                        c.suv_mean_ref,
                        c.suv_mean_pred,
                        c.pe_suv_max,
                        c.pe_suv_mean
                    )),
                    None => out.push_str(",,,,,,"),
                }
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// A standalone ROI definition, for overriding or augmenting the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiDef {
    pub subject: String,
    #[serde(flatten)]
    pub roi: RoiSphere,
}

/// Read a JSON list of per-subject ROI spheres.
pub fn load_roi_defs(path: &Path) -> Result<Vec<RoiDef>> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::config(format!("{}: not an ROI list: {e}", path.display())))
}

/// Evaluate a candidate synthesis against the standard-dose reference over
/// one split bucket. `candidate` maps each low-dose volume to the volume the
/// metrics should judge (the identity closure scores the low-dose input
/// itself). ROI statistics are produced for subjects whose manifest entry
/// defines a sphere; `roi_overrides` takes precedence per subject.
pub fn evaluate_bucket<F: Scalar>(
    manifest: &DatasetManifest,
    base: &Path,
    bucket: SplitBucket,
    drfs: &[DoseLevel],
    roi_overrides: &[RoiDef],
    mut candidate: impl FnMut(&Volume<F>) -> Result<Volume<F>>,
) -> Result<MetricsReport> {
    if drfs.is_empty() {
        return Err(Error::config("evaluation needs at least one dose-reduction factor"));
    }
    let mut rows = Vec::new();
    for entry in manifest.subjects_in(bucket) {
        let full: Volume<F> = load_volume(&base.join(&entry.full))?;
        let roi = roi_overrides
            .iter()
            .find(|d| d.subject == entry.subject)
            .map(|d| &d.roi)
            .or(entry.roi.as_ref());
        for &drf in drfs {
            let rel = entry.low_path(drf).ok_or_else(|| {
                Error::data(format!(
                    "subject '{}' has no DRF-{} volume to evaluate",
                    entry.subject,
                    drf.factor()
                ))
            })?;
            let low: Volume<F> = load_volume(&base.join(rel))?;
            let cand = candidate(&low)?;
            if cand.shape() != full.shape() {
                return Err(Error::data(format!(
                    "subject '{}' DRF {}: candidate shape {:?} differs from reference {:?}",
                    entry.subject,
                    drf.factor(),
                    cand.shape(),
                    full.shape()
                )));
            }
            let metrics = MetricTriple {
                psnr: psnr(&full.voxels, &cand.voxels)?,
                ssim: ssim(&full.voxels, &cand.voxels)?,
                nrmse: nrmse(&full.voxels, &cand.voxels)?,
            };
            let roi_cmp = match roi {
                None => None,
                Some(sphere) => {
                    let r = roi_suv_stats(&full, sphere)?;
                    let p = roi_suv_stats(&cand, sphere)?;
                    Some(RoiComparison {
                        suv_max_ref: r.suv_max,
                        suv_max_pred: p.suv_max,
                        suv_mean_ref: r.suv_mean,
                        suv_mean_pred: p.suv_mean,
                        pe_suv_max: percentage_error(p.suv_max, r.suv_max)?,
                        pe_suv_mean: percentage_error(p.suv_mean, r.suv_mean)?,
                    })
                }
            };
            rows.push(SubjectRow {
                subject: entry.subject.clone(),
                drf: drf.factor(),
                metrics,
                roi: roi_cmp,
            });
        }
    }
    MetricsReport::from_rows(bucket, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{build_dataset, PhantomTemplate};

    fn triple(p: f64, s: f64, n: f64) -> MetricTriple {
        MetricTriple { psnr: p, ssim: s, nrmse: n }
    }

    fn row(subject: &str, drf: u32, m: MetricTriple) -> SubjectRow {
        SubjectRow { subject: subject.into(), drf, metrics: m, roi: None }
    }

    #[test]
    fn aggregation_means_each_drf() {
        let rows = vec![
            row("a", 4, triple(50.0, 0.9, 10.0)),
            row("b", 4, triple(54.0, 0.7, 14.0)),
            row("a", 100, triple(40.0, 0.5, 30.0)),
        ];
        let rep = MetricsReport::from_rows(SplitBucket::Test, rows).unwrap();
        assert_eq!(rep.bucket, "test");
        assert_eq!(rep.per_drf.len(), 2);
        let d4 = &rep.per_drf[&4];
        assert!((d4.psnr - 52.0).abs() < 1e-12);
        assert!((d4.ssim - 0.8).abs() < 1e-12);
        assert!((d4.nrmse - 12.0).abs() < 1e-12);
        assert_eq!(rep.per_drf[&100], triple(40.0, 0.5, 30.0));
        // only two DRFs: no weighted section
        assert!(rep.weighted.is_empty());
    }

    #[test]
    fn weighted_section_needs_all_five_drfs() {
        // per-DRF PSNR values chosen so the two orderings disagree
        let vals = [(4u32, 60.0), (10, 58.0), (20, 56.0), (50, 54.0), (100, 52.0)];
        let rows: Vec<SubjectRow> =
            vals.iter().map(|&(d, p)| row("a", d, triple(p, 0.9, 10.0))).collect();
        let rep = MetricsReport::from_rows(SplitBucket::Val, rows).unwrap();
        assert_eq!(rep.weighted.len(), 2);
        let tables = &rep.weighted["as_tables"];
        let equation = &rep.weighted["as_equation"];
        // hand-folded sums over the two weight orderings
        let want_tables = 0.35 * 60.0 + 0.25 * 58.0 + 0.20 * 56.0 + 0.15 * 54.0 + 0.05 * 52.0;
        let want_eq = 0.35 * 52.0 + 0.25 * 54.0 + 0.20 * 56.0 + 0.15 * 58.0 + 0.05 * 60.0;
        assert!((tables.psnr - want_tables).abs() < 1e-12);
        assert!((equation.psnr - want_eq).abs() < 1e-12);
        // ssim is constant across DRFs, so both orderings collapse to it
        assert!((tables.ssim - 0.9).abs() < 1e-12);
        assert!((equation.ssim - 0.9).abs() < 1e-12);
    }

    #[test]
    fn reports_reject_empty_and_out_of_range_rows() {
        assert!(matches!(
            MetricsReport::from_rows(SplitBucket::Test, vec![]),
            Err(Error::Data(_))
        ));
        let bad_ssim = vec![row("a", 4, triple(50.0, 1.5, 10.0))];
        assert!(matches!(
            MetricsReport::from_rows(SplitBucket::Test, bad_ssim),
            Err(Error::Numeric(_))
        ));
        let bad_nrmse = vec![row("a", 4, triple(50.0, 0.5, -1.0))];
        assert!(matches!(
            MetricsReport::from_rows(SplitBucket::Test, bad_nrmse),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn json_round_trip_and_version_gate() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![row("a", 4, triple(50.0, 0.9, 10.0))];
        let rep = MetricsReport::from_rows(SplitBucket::Test, rows).unwrap();
        let path = dir.path().join("report.json");
        rep.write_json(&path).unwrap();
        let back = MetricsReport::read_json(&path).unwrap();
        assert_eq!(back, rep);
        assert_eq!(back.conventions.psnr_peak, "reference range");
        assert_eq!(back.conventions.ssim_window, [7, 7, 7]);

        // a bumped version must be refused, not silently reinterpreted
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        v["schema_version"] = serde_json::json!(99);
        std::fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
        assert!(matches!(MetricsReport::read_json(&path), Err(Error::Data(_))));
    }

    #[test]
    fn csv_layout_follows_the_roi_presence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");

        let plain = MetricsReport::from_rows(
            SplitBucket::Test,
            vec![row("a", 4, triple(50.0, 0.9, 10.0)), row("a", 100, triple(40.0, 0.8, 20.0))],
        )
        .unwrap();
        plain.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("subject,drf,psnr,ssim,nrmse\n"));
        assert_eq!(text.lines().count(), 3);

        let mut with_roi = plain.clone();
        with_roi.rows[0].roi = Some(RoiComparison {
            suv_max_ref: 8.0,
            suv_max_pred: 7.6,
            suv_mean_ref: 4.0,
            suv_mean_pred: 3.8,
            pe_suv_max: 5.0,
            pe_suv_mean: 5.0,
        });
        with_roi.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "subject,drf,psnr,ssim,nrmse,suv_max_ref,suv_max_pred,suv_mean_ref,suv_mean_pred,pe_suv_max,pe_suv_mean"
        );
        // the ROI-less row pads its columns
        assert!(lines.nth(1).unwrap().ends_with(",,,,,,"));
    }

    #[test]
    fn roi_defs_parse_and_reject_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rois.json");
        std::fs::write(
            &path,
            r#"[{"subject": "s0", "center_mm": [40.0, 40.0, 30.0], "diameter_mm": 20.0}]"#,
        )
        .unwrap();
        let defs = load_roi_defs(&path).unwrap();
        assert_eq!(defs.len(), 1);
        assert_eq!(defs[0].subject, "s0");
        assert_eq!(defs[0].roi.diameter_mm, 20.0);

        std::fs::write(&path, r#"[{"subject": "s0", "radius": 10.0}]"#).unwrap();
        assert!(matches!(load_roi_defs(&path), Err(Error::Config(_))));
    }

    #[test]
    fn bucket_evaluation_scores_the_identity_baseline() {
        let dir = tempfile::tempdir().unwrap();
        let template = PhantomTemplate { shape: [32, 32, 16], ..PhantomTemplate::default() };
        let drfs = [DoseLevel::Drf4, DoseLevel::Drf100];
        let manifest =
            build_dataset::<f32>(&template, 4, &drfs, [0.5, 0.25, 0.25], 21, dir.path()).unwrap();

        let rep = evaluate_bucket::<f32>(
            &manifest,
            dir.path(),
            SplitBucket::Train,
            &drfs,
            &[],
            |low| Ok(low.clone()),
        )
        .unwrap();
        // two train subjects x two DRFs
        assert_eq!(rep.rows.len(), 4);
        assert_eq!(rep.per_drf.len(), 2);
        for r in &rep.rows {
            assert!(r.metrics.psnr.is_finite() && r.metrics.psnr > 0.0);
            assert!(r.metrics.nrmse > 0.0);
            assert!(r.roi.is_some(), "phantom manifests carry a liver ROI");
            let roi = r.roi.unwrap();
            assert!(roi.pe_suv_max >= 0.0 && roi.pe_suv_mean >= 0.0);
        }
        // heavier dose reduction scores strictly worse for the identity
        assert!(rep.per_drf[&100].psnr < rep.per_drf[&4].psnr);
        assert!(rep.per_drf[&100].nrmse > rep.per_drf[&4].nrmse);

        // a requested DRF the dataset lacks is a data error
        let err = evaluate_bucket::<f32>(
            &manifest,
            dir.path(),
            SplitBucket::Train,
            &[DoseLevel::Drf20],
            &[],
            |low| Ok(low.clone()),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err}");

        // ROI overrides take precedence over the manifest sphere
        let subject = rep.rows[0].subject.clone();
        let moved = RoiDef {
            subject: subject.clone(),
            roi: RoiSphere { center_mm: [32.0, 32.0, 16.0], diameter_mm: 20.0 },
        };
        let rep2 = evaluate_bucket::<f32>(
            &manifest,
            dir.path(),
            SplitBucket::Train,
            &[DoseLevel::Drf4],
            &[moved],
            |low| Ok(low.clone()),
        )
        .unwrap();
        let changed = rep2.rows.iter().find(|r| r.subject == subject).unwrap();
        let original = rep.rows.iter().find(|r| r.subject == subject && r.drf == 4).unwrap();
        assert_ne!(changed.roi.unwrap().suv_mean_ref, original.roi.unwrap().suv_mean_ref);
    }
}
