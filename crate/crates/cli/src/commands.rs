//! One function per subcommand. Each receives the fully-resolved config (the
//! same document already frozen into the run directory) and writes every
//! artifact under `out`; inputs are never touched.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use aegan_core::evalkit::{evaluate_bucket, load_roi_defs, MetricsReport};
use aegan_core::gan::{self, ResidualMode, Synthesizer, TrainConfig};
use aegan_core::networks::{save_checkpoint, NetworkSpec, SectionRef, SspModel};
use aegan_core::patch::PatchGridSpec;
use aegan_core::phantom::build_dataset;
use aegan_core::ssp::{collect_pretrain_patches, pretrain};
use aegan_core::stats::{kfold_split, paired_ttest};
use aegan_core::volume::{DatasetManifest, SplitBucket};
use aegan_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{lambda_for_tasks, parse_drf_mix, resolve_dataset, ExperimentConfig};
use crate::plot::{bar_chart, box_chart, metric_panels, BarGroup, BoxGroup};

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn block<'a, T>(b: &'a Option<T>, name: &str) -> Result<&'a T> {
    b.as_ref()
        .ok_or_else(|| Error::config(format!("{name}: config has no {name} block")))
}

fn load_manifest(dataset: &Path) -> Result<(DatasetManifest, PathBuf)> {
    let base = resolve_dataset(dataset);
    let manifest = DatasetManifest::load(&base.join("manifest.json"))?;
    Ok((manifest, base))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::data(format!("encode '{}': {e}", path.display())))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

// ---- phantom-gen ----

pub fn phantom_gen(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let b = block(&cfg.phantom, "phantom")?;
    let drfs = parse_drf_mix(&b.drf_mix)?;
    let manifest =
        build_dataset::<f32>(&b.template(), b.n_subjects, &drfs, b.split_fractions, cfg.seed, out)?;

    let mut files = 0usize;
    let mut bytes = 0u64;
    for e in &manifest.entries {
        for rel in std::iter::once(&e.full).chain(e.low.values()) {
            files += 1;
            bytes += std::fs::metadata(out.join(rel))?.len();
        }
    }
    let counts = |bucket| manifest.subjects_in(bucket).len();
    println!(
        "phantom cohort: {} subjects x {} dose levels -> {} volumes, {} bytes",
        b.n_subjects,
        drfs.len() + 1,
        files,
        bytes
    );
    println!(
        "split: train {} / val {} / test {}",
        counts(SplitBucket::Train),
        counts(SplitBucket::Val),
        counts(SplitBucket::Test)
    );
    let mpath = out.join("manifest.json");
    println!("manifest: {} sha256 {}", mpath.display(), sha256_hex(&mpath)?);
    Ok(())
}

// ---- pretrain ----

pub fn pretrain_run(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let b = block(&cfg.pretrain, "pretrain")?;
    let (manifest, base) = load_manifest(&b.dataset)?;
    let drfs = parse_drf_mix(&b.drf_mix)?;
    let grid = PatchGridSpec {
        patch_shape: b.patch_shape,
        stride: b.stride.unwrap_or(b.patch_shape),
    };
    let items = collect_pretrain_patches::<f32>(
        &manifest,
        &base,
        SplitBucket::Train,
        &grid,
        &drfs,
        b.suv_scale,
    )?;

    let mut ssp_cfg = b.config.clone();
    if let Some(tasks) = &b.tasks {
        ssp_cfg.lambda = lambda_for_tasks(tasks, ssp_cfg.lambda)?;
    }
    let mut spec = NetworkSpec::pixel_net(b.base_channels);
    if let Some(ds) = &b.depth_strides {
        spec.depth_strides = ds.clone();
    }
    let mut model = SspModel::<f32>::new(spec.clone(), ssp_cfg.seed)?;
    let report = pretrain(&mut model, &items, &ssp_cfg)?;
    report.write_csv(&out.join("pretrain_log.csv"))?;

    let ckpt = out.join("ssp.ckpt");
    let meta = serde_json::json!({ "stage": "ssp", "config": ssp_cfg });
    save_checkpoint(&ckpt, meta, &[SectionRef { name: "ssp", spec: Some(&spec), store: &model.store }])?;

    let (first, last) = match (report.curve.first(), report.curve.last()) {
        (Some(f), Some(l)) => (f.total, l.total),
        _ => (f64::NAN, f64::NAN),
    };
    println!("pre-training: {} patches, {} steps", items.len(), report.steps());
    println!("total loss {first:.4} -> {last:.4}");
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}

// ---- train / ablate ----

/// Named ablations of the generator stack. `pix` keeps only the draft
/// network; `-ae` / `-dis` add the refiner and the critic; `ar` switches the
/// refiner to the autoregressive arrangement; `no-ssp` drops any pre-trained
/// encoder warm start.
pub fn apply_ablation(
    cfg: &mut TrainConfig,
    pretrained: &mut Option<PathBuf>,
    name: &str,
) -> Result<()> {
    match name {
        "pix" => {
            cfg.adversarial = false;
            cfg.residual_mode = ResidualMode::None;
        }
        "pix-ae" => {
            cfg.adversarial = false;
            cfg.residual_mode = ResidualMode::Ae;
        }
        "pix-dis" => {
            cfg.adversarial = true;
            cfg.residual_mode = ResidualMode::None;
        }
        "pix-ae-dis" => {
            cfg.adversarial = true;
            cfg.residual_mode = ResidualMode::Ae;
        }
        "ar" => {
            cfg.adversarial = true;
            cfg.residual_mode = ResidualMode::Ar;
        }
        "no-ssp" => {
            cfg.pretrained_encoder = None;
            *pretrained = None;
        }
        other => {
            return Err(Error::config(format!(
                "ablation '{other}' is not one of pix, pix-ae, pix-dis, pix-ae-dis, ar, no-ssp"
            )))
        }
    }
    Ok(())
}

pub fn train_run(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let b = block(&cfg.train, "train")?;
    let (manifest, base) = load_manifest(&b.dataset)?;

    let mut tc = b.config.clone();
    if let Some(mix) = &b.drf_mix {
        tc.drf_mix = parse_drf_mix(mix)?;
    }
    if let Some(p) = &b.pretrained {
        tc.pretrained_encoder = Some(p.clone());
    }

    let (trainer, report) = gan::train::<f32>(&manifest, &base, &tc, &b.specs)?;
    report.write_csv(&out.join("train_log.csv"))?;
    let ckpt = out.join("model.ckpt");
    trainer.save_checkpoint(&ckpt)?;

    let epochs = &report.epochs;
    println!(
        "training: {} epochs (stopped early: {}), residual {}, critic {}",
        epochs.len(),
        report.stopped_early,
        tc.residual_mode,
        if tc.adversarial { "on" } else { "off" }
    );
    if let (Some(f), Some(l)) = (epochs.first(), epochs.last()) {
        println!(
            "l_content {:.4} -> {:.4}; val psnr {:.2} dB",
            f.l_content, l.l_content, l.val_psnr
        );
    }
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}

// ---- eval ----

#[derive(Serialize)]
struct TtestRow {
    drf: u32,
    n: usize,
    t: f64,
    df: usize,
    p: f64,
}

/// Per-DRF paired t-test of candidate PSNR against the raw low-dose input's
/// PSNR, paired by subject.
fn ttest_section(synth: &MetricsReport, input: &MetricsReport) -> Result<serde_json::Value> {
    let by_key: BTreeMap<(String, u32), f64> = input
        .rows
        .iter()
        .map(|r| ((r.subject.clone(), r.drf), r.metrics.psnr))
        .collect();
    let mut per_drf: BTreeMap<u32, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in &synth.rows {
        let base = by_key.get(&(r.subject.clone(), r.drf)).copied().ok_or_else(|| {
            Error::data(format!("t-test: no input row for subject '{}' DRF {}", r.subject, r.drf))
        })?;
        let e = per_drf.entry(r.drf).or_default();
        e.0.push(r.metrics.psnr);
        e.1.push(base);
    }
    let mut rows = Vec::new();
    for (drf, (a, b)) in &per_drf {
        let res = paired_ttest(a, b)?;
        rows.push(TtestRow { drf: *drf, n: a.len(), t: res.t, df: res.df, p: res.p });
    }
    Ok(serde_json::json!({
        "metric": "psnr",
        "baseline": "low-dose input",
        "rows": rows,
    }))
}

pub fn eval_run(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let b = block(&cfg.eval, "eval")?;
    let (manifest, base) = load_manifest(&b.dataset)?;
    let drfs = parse_drf_mix(&b.drf_mix)?;
    let synth = Synthesizer::<f32>::load(&b.checkpoint)?;
    let grid = PatchGridSpec {
        patch_shape: b.patch_shape,
        stride: b.stride.unwrap_or(b.patch_shape),
    };
    let rois = match &b.roi_defs {
        Some(p) => load_roi_defs(p)?,
        None => Vec::new(),
    };

    let report = evaluate_bucket::<f32>(&manifest, &base, b.bucket, &drfs, &rois, |low| {
        synth.infer_volume(low, &grid)
    })?;
    report.write_json(&out.join("report.json"))?;
    report.write_csv(&out.join("report.csv"))?;

    if b.ttest_vs_input {
        let input = evaluate_bucket::<f32>(&manifest, &base, b.bucket, &drfs, &rois, |low| {
            Ok(low.clone())
        })?;
        write_json(&out.join("ttest.json"), &ttest_section(&report, &input)?)?;
    }
    if let Some(k) = b.kfold {
        let ids: Vec<String> = manifest.entries.iter().map(|e| e.subject.clone()).collect();
        let folds = kfold_split(&ids, k, cfg.seed)?;
        let folds: Vec<serde_json::Value> = folds
            .into_iter()
            .map(|(train, val)| serde_json::json!({ "train": train, "val": val }))
            .collect();
        write_json(
            &out.join("kfold.json"),
            &serde_json::json!({ "k": k, "seed": cfg.seed, "folds": folds }),
        )?;
    }

    let drf_list: Vec<String> = drfs.iter().map(|d| d.factor().to_string()).collect();
    println!(
        "evaluated {} bucket: {} rows over DRFs {}",
        report.bucket,
        report.rows.len(),
        drf_list.join(", ")
    );
    for (key, m) in &report.weighted {
        println!("weighted {key}: psnr {:.3} dB, ssim {:.4}, nrmse {:.3} %", m.psnr, m.ssim, m.nrmse);
    }
    println!("report: {}", out.join("report.json").display());
    Ok(())
}

// ---- plot ----

/// Per-DRF bar groups for one metric across all reports.
fn metric_groups(
    reports: &[MetricsReport],
    drfs: &[u32],
    pick: impl Fn(&aegan_core::evalkit::MetricTriple) -> f64,
) -> Vec<BarGroup> {
    drfs.iter()
        .map(|drf| BarGroup {
            label: format!("DRF {drf}"),
            values: reports.iter().map(|r| r.per_drf.get(drf).map(&pick)).collect(),
        })
        .collect()
}

pub fn plot_run(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let b = block(&cfg.plot, "plot")?;
    if b.reports.is_empty() {
        return Err(Error::config("plot.reports: need at least one report"));
    }
    let labels: Vec<String> = match &b.labels {
        Some(ls) => {
            if ls.len() != b.reports.len() {
                return Err(Error::config(format!(
                    "plot.labels: {} labels for {} reports",
                    ls.len(),
                    b.reports.len()
                )));
            }
            ls.clone()
        }
        None => b
            .reports
            .iter()
            .map(|p| {
                p.parent()
                    .and_then(|d| d.file_name())
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| format!("run {}", p.display()))
            })
            .collect(),
    };
    let reports: Vec<MetricsReport> = b
        .reports
        .iter()
        .map(|p| MetricsReport::read_json(p))
        .collect::<Result<_>>()?;

    let mut drfs: Vec<u32> = reports.iter().flat_map(|r| r.per_drf.keys().copied()).collect();
    drfs.sort_unstable();
    drfs.dedup();

    let mut written = Vec::new();

    let panels = vec![
        ("PSNR (DB)", metric_groups(&reports, &drfs, |m| m.psnr), 1.0),
        ("NRMSE (%)", metric_groups(&reports, &drfs, |m| m.nrmse), 1e-9),
        ("SSIM", metric_groups(&reports, &drfs, |m| m.ssim), 1.0 / 1.08),
    ];
    let p = out.join("metrics_by_drf.png");
    metric_panels(&p, &panels, &labels)?;
    written.push(p);

    // Weighted overall PSNR under both DRF-weight pairings; reports that did
    // not cover all five canonical DRFs show as N/A.
    let weighted_groups: Vec<BarGroup> = ["as_tables", "as_equation"]
        .iter()
        .map(|key| BarGroup {
            label: key.replace('_', " ").to_uppercase(),
            values: reports.iter().map(|r| r.weighted.get(*key).map(|m| m.psnr)).collect(),
        })
        .collect();
    let p = out.join("weighted_scores.png");
    bar_chart(&p, "WEIGHTED PSNR (DB)", &labels, &weighted_groups, 1.0)?;
    written.push(p);

    if reports.len() >= 2 {
        let p = out.join("ssp_comparison.png");
        bar_chart(&p, "PSNR BY DRF (DB)", &labels, &metric_groups(&reports, &drfs, |m| m.psnr), 1.0)?;
        written.push(p);
    }

    let any_roi = reports.iter().any(|r| r.rows.iter().any(|row| row.roi.is_some()));
    if any_roi {
        let groups: Vec<BoxGroup> = drfs
            .iter()
            .map(|drf| BoxGroup {
                label: format!("DRF {drf}"),
                samples: reports
                    .iter()
                    .map(|r| {
                        r.rows
                            .iter()
                            .filter(|row| row.drf == *drf)
                            .filter_map(|row| row.roi.as_ref().map(|c| c.pe_suv_mean))
                            .collect()
                    })
                    .collect(),
            })
            .collect();
        let p = out.join("roi_error_box.png");
        box_chart(&p, "ROI SUV MEAN ERROR (%)", &labels, &groups)?;
        written.push(p);
    }

    for p in &written {
        println!("figure: {}", p.display());
    }
    Ok(())
}
