//! JSON experiment configs: one versioned document, one block per command.
//!
//! Loading is fail-closed. Unknown keys are rejected everywhere, and every
//! schema error names the JSON path it came from (`phantom.shape`,
//! `train.config.lr0`), so a typo points at itself instead of at serde
//! internals. The top-level `seed` drives every stage — per-block
//! `config.seed` values are overwritten with it before anything runs, so one
//! number reproduces the whole pipeline.

use std::path::{Path, PathBuf};

use aegan_core::gan::{drf_mix_preset, TrainConfig, TrainSpecs};
use aegan_core::phantom::PhantomTemplate;
use aegan_core::ssp::SspConfig;
use aegan_core::volume::{DoseLevel, SplitBucket};
use aegan_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    /// Run directory; `--out` overrides it. Everything a command writes goes
    /// under here, starting with the frozen echo of this config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phantom: Option<PhantomBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<PretrainBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot: Option<PlotBlock>,
}

/// Synthetic cohort generation. Every anatomy knob defaults to the template's
/// value; only the grid and cohort size are mandatory.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomBlock {
    pub shape: [usize; 3],
    pub n_subjects: usize,
    #[serde(default = "d_spacing")]
    pub spacing: [f64; 3],
    /// Reduced dose levels to simulate: a preset, a range, or factors ("4,100").
    #[serde(default = "d_mix")]
    pub drf_mix: String,
    /// Train/val/test fractions, summing to one.
    #[serde(default = "d_split")]
    pub split_fractions: [f64; 3],
    #[serde(default = "d_background")]
    pub background_suv_range: [f64; 2],
    #[serde(default = "d_body")]
    pub body_suv_range: [f64; 2],
    #[serde(default = "d_liver")]
    pub liver_suv_range: [f64; 2],
    #[serde(default = "d_lesion_suv")]
    pub lesion_suv_range: [f64; 2],
    #[serde(default = "d_lesion_radius")]
    pub lesion_radius_mm_range: [f64; 2],
    #[serde(default = "d_lesions")]
    pub lesions_per_subject: [usize; 2],
    #[serde(default = "d_counts")]
    pub counts_per_suv: f64,
}

impl PhantomBlock {
    pub fn template(&self) -> PhantomTemplate {
        PhantomTemplate {
            shape: self.shape,
            spacing: self.spacing,
            background_suv_range: self.background_suv_range,
            body_suv_range: self.body_suv_range,
            liver_suv_range: self.liver_suv_range,
            lesion_suv_range: self.lesion_suv_range,
            lesion_radius_mm_range: self.lesion_radius_mm_range,
            lesions_per_subject: self.lesions_per_subject,
            counts_per_suv: self.counts_per_suv,
        }
    }
}

fn d_spacing() -> [f64; 3] {
    PhantomTemplate::default().spacing
}
fn d_background() -> [f64; 2] {
    PhantomTemplate::default().background_suv_range
}
fn d_body() -> [f64; 2] {
    PhantomTemplate::default().body_suv_range
}
fn d_liver() -> [f64; 2] {
    PhantomTemplate::default().liver_suv_range
}
fn d_lesion_suv() -> [f64; 2] {
    PhantomTemplate::default().lesion_suv_range
}
fn d_lesion_radius() -> [f64; 2] {
    PhantomTemplate::default().lesion_radius_mm_range
}
fn d_lesions() -> [usize; 2] {
    PhantomTemplate::default().lesions_per_subject
}
fn d_counts() -> f64 {
    PhantomTemplate::default().counts_per_suv
}
fn d_mix() -> String {
    "all".to_string()
}
fn d_split() -> [f64; 3] {
    [0.6, 0.2, 0.2]
}
fn d_patch() -> [usize; 3] {
    TrainConfig::default().patch_shape
}
fn d_suv_scale() -> f64 {
    TrainConfig::default().suv_scale
}
fn d_base_channels() -> usize {
    16
}
fn d_bucket() -> SplitBucket {
    SplitBucket::Test
}

/// Self-supervised encoder pre-training over the train bucket's reduced-dose
/// volumes.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainBlock {
    /// Dataset root (the directory holding `manifest.json`).
    pub dataset: PathBuf,
    #[serde(default)]
    pub config: SspConfig,
    #[serde(default = "d_base_channels")]
    pub base_channels: usize,
    /// Encoder per-level strides; omitted keeps the canonical schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_strides: Option<Vec<[usize; 3]>>,
    #[serde(default = "d_patch")]
    pub patch_shape: [usize; 3],
    /// Patch lattice stride; defaults to the patch shape (no overlap).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<[usize; 3]>,
    #[serde(default = "d_mix")]
    pub drf_mix: String,
    #[serde(default = "d_suv_scale")]
    pub suv_scale: f64,
    /// Optional pretext-task subset (`drl`, `rotation`, `cpc`, `restoration`).
    /// Tasks left out keep a zero weight; omitting the list keeps all four.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tasks: Option<Vec<String>>,
}

/// Which loss weight each named pretext task owns.
const TASK_NAMES: [&str; 4] = ["drl", "rotation", "cpc", "restoration"];

/// Translate a task subset into a lambda mask over `base` (weights of tasks
/// not named drop to zero).
pub fn lambda_for_tasks(tasks: &[String], base: [f64; 4]) -> Result<[f64; 4]> {
    if tasks.is_empty() {
        return Err(Error::config("pretrain.tasks: the subset cannot be empty"));
    }
    let mut lambda = [0.0; 4];
    for t in tasks {
        let i = TASK_NAMES
            .iter()
            .position(|n| n == t)
            .ok_or_else(|| {
                Error::config(format!(
                    "pretrain.tasks: unknown task '{t}'; expected drl, rotation, cpc, restoration"
                ))
            })?;
        lambda[i] = base[i];
    }
    Ok(lambda)
}

/// Adversarial-stage training. `config` and `specs` take the library defaults
/// when omitted; the preset string and checkpoint path here exist so a config
/// can say "100" or point at an `ssp.ckpt` without spelling out enum lists.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainBlock {
    pub dataset: PathBuf,
    #[serde(default)]
    pub config: TrainConfig,
    #[serde(default)]
    pub specs: TrainSpecs,
    /// Overrides `config.drf_mix` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drf_mix: Option<String>,
    /// Pre-trained encoder checkpoint; overrides `config.pretrained_encoder`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrained: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalBlock {
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    #[serde(default = "d_bucket")]
    pub bucket: SplitBucket,
    #[serde(default = "d_mix")]
    pub drf_mix: String,
    #[serde(default = "d_patch")]
    pub patch_shape: [usize; 3],
    /// Synthesis lattice stride; defaults to the patch shape.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<[usize; 3]>,
    /// JSON list of per-subject ROI spheres overriding the manifest's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roi_defs: Option<PathBuf>,
    /// Paired t-test of the synthesis against the raw low-dose input, per DRF.
    #[serde(default)]
    pub ttest_vs_input: bool,
    /// Emit a k-fold cross-validation plan over the whole cohort.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kfold: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotBlock {
    /// Metric reports (`report.json` files) to draw; at least one.
    pub reports: Vec<PathBuf>,
    /// One legend label per report; defaults to the parent directory names.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|msg| Error::config(format!("{}: {msg}", path.display())))
}

fn parse_config(text: &str) -> std::result::Result<ExperimentConfig, String> {
    let mut de = serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(&mut de).map_err(pathed)?;
    if cfg.schema_version != CONFIG_SCHEMA_VERSION {
        return Err(format!(
            "schema_version: this build reads version {CONFIG_SCHEMA_VERSION}, got {}",
            cfg.schema_version
        ));
    }
    Ok(cfg)
}

/// Render a deserialization error as `json.path: message`. Serde reports
/// absent and unexpected keys at the containing object, so the offending
/// field name is spliced onto the path to point at the key itself.
fn pathed(err: serde_path_to_error::Error<serde_json::Error>) -> String {
    let path = err.path().to_string();
    let msg = err.into_inner().to_string();
    let field = ["missing field `", "unknown field `"]
        .iter()
        .find_map(|tag| msg.split_once(tag).and_then(|(_, rest)| rest.split('`').next()))
        .map(str::to_string);
    match field {
        Some(f) if path == "." => format!("{f}: {msg}"),
        Some(f) => format!("{path}.{f}: {msg}"),
        None if path == "." => msg,
        None => format!("{path}: {msg}"),
    }
}

/// A preset/range/bare factor as in training configs, plus comma lists
/// ("4,100") for cohorts probing non-contiguous dose levels.
pub fn parse_drf_mix(s: &str) -> Result<Vec<DoseLevel>> {
    if !s.contains(',') {
        return drf_mix_preset(s);
    }
    let mut out = Vec::new();
    for part in s.split(',') {
        let f: u32 = part
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("DRF list '{s}': '{part}' is not a factor")))?;
        let level = DoseLevel::from_factor(f)?;
        if out.contains(&level) {
            return Err(Error::config(format!("DRF list '{s}' repeats factor {f}")));
        }
        out.push(level);
    }
    Ok(out)
}

/// Dataset roots resolve against `$AEGAN_CACHE` when the path is relative and
/// the variable is set; absolute paths and unset environments pass through.
pub fn resolve_dataset(p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    match std::env::var_os("AEGAN_CACHE") {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(p),
        _ => p.to_path_buf(),
    }
}
