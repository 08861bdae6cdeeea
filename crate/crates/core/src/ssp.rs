//! Self-supervised pre-training of the Pixel-Net encoder.
//!
//! Every training step turns each source patch into two independently
//! augmented views (rotate, then cut out) and routes the batch through four
//! heads that share the encoder: dose-reduction-level classification,
//! rotation prediction, contrastive coding over view pairs, and restoration
//! of the un-perturbed patch. The plain loss functions here are the reference
//! semantics; `ssp_graph_losses` builds the identical quantities on the tape
//! for training.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::networks::{SspModel, SspOutputs, DRL_CLASSES, ROTATION_CLASSES};
use crate::optim::Adam;
use crate::patch::{extract_patches, PatchGridSpec};
use crate::rng::{derive_seed, rng_from};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::volume::{load_volume, DatasetManifest, DoseLevel, SplitBucket, Volume};
use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Dose-reduction-level class: {4,10} -> 0, {20,50} -> 1, {100} -> 2.
pub fn drl_class_of(drf: DoseLevel) -> Result<usize> {
    match drf {
        DoseLevel::Full => Err(Error::config("full dose has no dose-reduction class")),
        DoseLevel::Drf4 | DoseLevel::Drf10 => Ok(0),
        DoseLevel::Drf20 | DoseLevel::Drf50 => Ok(1),
        DoseLevel::Drf100 => Ok(2),
    }
}

/// Exact 90°·k rotation about the depth axis — a pure index permutation, so
/// it needs square in-plane patches and never interpolates.
pub fn rotate_patch<F: Scalar>(p: &Array3<F>, k: usize) -> Result<Array3<F>> {
    let (w, h, d) = p.dim();
    if w != h {
        return Err(Error::config(format!(
            "rotation needs square in-plane patches, got {w}x{h}x{d}"
        )));
    }
    if k >= ROTATION_CLASSES {
        return Err(Error::config(format!("rotation class {k} out of range 0..{ROTATION_CLASSES}")));
    }
    let n = w;
    Ok(match k {
        0 => p.clone(),
        1 => Array3::from_shape_fn((n, n, d), |(i, j, z)| p[[j, n - 1 - i, z]]),
        2 => Array3::from_shape_fn((n, n, d), |(i, j, z)| p[[n - 1 - i, n - 1 - j, z]]),
        _ => Array3::from_shape_fn((n, n, d), |(i, j, z)| p[[n - 1 - j, i, z]]),
    })
}

/// An axis-aligned cuboid inside a patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileBox {
    pub origin: [usize; 3],
    pub extent: [usize; 3],
}

impl TileBox {
    pub fn numel(&self) -> usize {
        self.extent.iter().product()
    }

    pub fn touches(&self, idx: [usize; 3]) -> bool {
        (0..3).all(|a| idx[a] >= self.origin[a] && idx[a] < self.origin[a] + self.extent[a])
    }
}

/// What a cutout perturbation did, precisely enough to reconstruct which
/// voxels may differ from the input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoutRecord {
    pub shape: [usize; 3],
    pub dropped: Vec<TileBox>,
    pub shuffled: Vec<TileBox>,
    /// Border band width when out-painting fired.
    pub border_outpainted: Option<usize>,
    pub dropped_fraction: f64,
}

impl CutoutRecord {
    /// Whether any recorded perturbation may have written this voxel.
    pub fn touches(&self, idx: [usize; 3]) -> bool {
        if let Some(w) = self.border_outpainted {
            if (0..3).any(|a| idx[a] < w || idx[a] >= self.shape[a] - w) {
                return true;
            }
        }
        self.dropped.iter().chain(&self.shuffled).any(|t| t.touches(idx))
    }
}

fn tile_values<F: Scalar>(a: &Array3<F>, t: &TileBox) -> Vec<F> {
    let mut out = Vec::with_capacity(t.numel());
    for x in t.origin[0]..t.origin[0] + t.extent[0] {
        for y in t.origin[1]..t.origin[1] + t.extent[1] {
            for z in t.origin[2]..t.origin[2] + t.extent[2] {
                out.push(a[[x, y, z]]);
            }
        }
    }
    out
}

fn fill_tile<F: Scalar>(a: &mut Array3<F>, t: &TileBox, mut f: impl FnMut() -> F) {
    for x in t.origin[0]..t.origin[0] + t.extent[0] {
        for y in t.origin[1]..t.origin[1] + t.extent[1] {
            for z in t.origin[2]..t.origin[2] + t.extent[2] {
                a[[x, y, z]] = f();
            }
        }
    }
}

/// Cutout with the default 30% dropout budget.
pub fn cutout_perturb<F: Scalar>(p: &Array3<F>, seed: u64) -> Result<(Array3<F>, CutoutRecord)> {
    cutout_perturb_frac(p, 0.30, seed)
}

/// The perturbation behind every SSP view: zero interior tiles until at least
/// `drop_fraction` of the patch is gone, value-shuffle the next two tiles,
/// then with probability 1/2 repaint the border band with uniform noise drawn
/// from the patch's value range. Tiles live strictly inside the band, so the
/// three regions are disjoint and the record describes the output exactly.
/// Tiles are small relative to the patch, which caps the dropout overshoot
/// well inside ±2% of the budget.
pub fn cutout_perturb_frac<F: Scalar>(
    p: &Array3<F>,
    drop_fraction: f64,
    seed: u64,
) -> Result<(Array3<F>, CutoutRecord)> {
    let (dx, dy, dz) = p.dim();
    let shape = [dx, dy, dz];
    if shape.iter().any(|&d| d < 8) {
        return Err(Error::config(format!(
            "cutout needs at least 8 voxels per axis, got {shape:?}"
        )));
    }
    if !(drop_fraction > 0.0 && drop_fraction < 1.0) {
        return Err(Error::config(format!("drop fraction must lie in (0, 1), got {drop_fraction}")));
    }
    let total = dx * dy * dz;
    let band = if shape.iter().copied().min().unwrap() < 16 { 1 } else { 2 };
    let tile = if total >= 8192 { 4 } else { 2 };
    let starts = |lo: usize, hi: usize| -> Vec<(usize, usize)> {
        (lo..hi).step_by(tile).map(|s| (s, tile.min(hi - s))).collect()
    };
    let mut tiles = Vec::new();
    for &(x0, ex) in &starts(band, dx - band) {
        for &(y0, ey) in &starts(band, dy - band) {
            for &(z0, ez) in &starts(band, dz - band) {
                tiles.push(TileBox { origin: [x0, y0, z0], extent: [ex, ey, ez] });
            }
        }
    }
    let mut rng = rng_from(seed);
    tiles.shuffle(&mut rng);
    let mut out = p.clone();
    let target = drop_fraction * total as f64;
    let mut dropped = Vec::new();
    let mut dropped_voxels = 0usize;
    let mut rest = tiles.into_iter();
    while (dropped_voxels as f64) < target {
        let t = rest.next().ok_or_else(|| {
            Error::config(format!(
                "cannot drop {drop_fraction} of a {shape:?} patch while protecting its border"
            ))
        })?;
        fill_tile(&mut out, &t, F::zero);
        dropped_voxels += t.numel();
        dropped.push(t);
    }
    let mut shuffled = Vec::new();
    for _ in 0..2 {
        let t = rest.next().ok_or_else(|| {
            Error::config(format!(
                "no tiles left to shuffle after dropping {drop_fraction} of {shape:?}"
            ))
        })?;
        let mut vals = tile_values(p, &t);
        vals.shuffle(&mut rng);
        let mut it = vals.into_iter();
        fill_tile(&mut out, &t, || it.next().expect("one value per tile voxel"));
        shuffled.push(t);
    }
    let border_outpainted = if rng.gen_bool(0.5) {
        let (lo, hi) = p.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v.as_f64()), hi.max(v.as_f64()))
        });
        for x in 0..dx {
            for y in 0..dy {
                for z in 0..dz {
                    let in_band = x < band
                        || x >= dx - band
                        || y < band
                        || y >= dy - band
                        || z < band
                        || z >= dz - band;
                    if in_band {
                        // constant patches have an empty value range; keep them constant
                        out[[x, y, z]] =
                            if hi > lo { F::of(rng.gen_range(lo..hi)) } else { F::of(lo) };
                    }
                }
            }
        }
        Some(band)
    } else {
        None
    };
    let record = CutoutRecord {
        shape,
        dropped,
        shuffled,
        border_outpainted,
        dropped_fraction: dropped_voxels as f64 / total as f64,
    };
    Ok((out, record))
}

// ---- reference losses ----

fn cross_entropy_1d<F: Scalar>(logits: &[F], label: usize, classes: usize, what: &str) -> Result<F> {
    if logits.len() != classes {
        return Err(Error::config(format!(
            "{what} expects {classes} logits, got {}",
            logits.len()
        )));
    }
    if label >= classes {
        return Err(Error::config(format!("{what} label {label} out of range 0..{classes}")));
    }
    let vals: Vec<f64> = logits.iter().map(|v| v.as_f64()).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(format!("{what} logits must be finite, got {vals:?}")));
    }
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    Ok(F::of(lse - vals[label]))
}

/// −log softmax(logits)[label] over the three dose-reduction classes.
pub fn loss_classification<F: Scalar>(logits: &[F], label: usize) -> Result<F> {
    cross_entropy_1d(logits, label, DRL_CLASSES, "dose-level classification")
}

/// −log softmax(logits)[label] over the four rotation classes.
pub fn loss_rotation<F: Scalar>(logits: &[F], label: usize) -> Result<F> {
    cross_entropy_1d(logits, label, ROTATION_CLASSES, "rotation prediction")
}

/// Contrastive loss over 2N codes: for each anchor i with positive partner
/// j(i), −log of the softmax (over every other code k ≠ i) of the cosine
/// similarity divided by `sigma`, averaged over all 2N anchors. Codes are
/// L2-normalized here before use.
pub fn loss_cpc<F: Scalar>(codes: &Array2<F>, pairing: &[usize], sigma: f64) -> Result<F> {
    let (rows, dim) = codes.dim();
    if rows < 2 || rows % 2 != 0 {
        return Err(Error::config(format!(
            "contrastive loss needs 2N codes with N >= 1, got {rows}"
        )));
    }
    if pairing.len() != rows {
        return Err(Error::config(format!(
            "pairing length {} does not match {rows} codes",
            pairing.len()
        )));
    }
    for (i, &j) in pairing.iter().enumerate() {
        if j >= rows || j == i {
            return Err(Error::config(format!(
                "pairing[{i}] = {j} is not a distinct partner index"
            )));
        }
    }
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::config(format!("temperature must be positive, got {sigma}")));
    }
    let mut z = vec![0.0f64; rows * dim];
    for i in 0..rows {
        let mut norm2 = 0.0;
        for d in 0..dim {
            let v = codes[[i, d]].as_f64();
            if !v.is_finite() {
                return Err(Error::numeric(format!("code {i} has a non-finite component")));
            }
            norm2 += v * v;
        }
        if norm2 == 0.0 {
            return Err(Error::numeric(format!(
                "code {i} has zero norm; cosine similarity is undefined"
            )));
        }
        let inv = norm2.sqrt().recip();
        for d in 0..dim {
            z[i * dim + d] = codes[[i, d]].as_f64() * inv;
        }
    }
    let sim = |a: usize, b: usize| -> f64 {
        (0..dim).map(|d| z[a * dim + d] * z[b * dim + d]).sum::<f64>() / sigma
    };
    let mut acc = 0.0;
    for i in 0..rows {
        let terms: Vec<f64> = (0..rows).filter(|&k| k != i).map(|k| sim(i, k)).collect();
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
        acc += lse - sim(i, pairing[i]);
    }
    Ok(F::of(acc / rows as f64))
}

/// Mean absolute voxel difference.
pub fn loss_restoration<F: Scalar>(restored: &Array3<F>, original: &Array3<F>) -> Result<F> {
    if restored.dim() != original.dim() {
        return Err(Error::config(format!(
            "restoration shapes differ: {:?} vs {:?}",
            restored.dim(),
            original.dim()
        )));
    }
    let acc: f64 = restored
        .iter()
        .zip(original.iter())
        .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
        .sum();
    Ok(F::of(acc / restored.len() as f64))
}

/// λ1·L_class + λ2·L_rot + λ3·L_cpc + λ4·L_rest.
pub fn ssp_total_loss<F: Scalar>(parts: [F; 4], lambda: [f64; 4]) -> Result<F> {
    if parts.iter().any(|p| !p.is_finite()) {
        return Err(Error::numeric(format!("loss parts must be finite, got {parts:?}")));
    }
    Ok(parts.iter().zip(lambda).map(|(&p, l)| p * F::of(l)).sum())
}

// ---- pre-training ----

/// Pre-training hyperparameters. `lambda` weights the four heads in the order
/// classification, rotation, contrastive, restoration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SspConfig {
    pub lambda: [f64; 4],
    /// Contrastive temperature.
    pub sigma: f64,
    pub dropout_fraction: f64,
    /// Source patches per step; each contributes two views.
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Hard cap on optimization steps across all epochs.
    pub max_steps: Option<usize>,
}

impl Default for SspConfig {
    fn default() -> Self {
        SspConfig {
            lambda: [1.0; 4],
            sigma: 0.5,
            dropout_fraction: 0.30,
            batch_size: 4,
            epochs: 5,
            lr: 2e-4,
            weight_decay: 0.01,
            seed: 0,
            max_steps: None,
        }
    }
}

impl SspConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::config(format!(
                "loss weights must be finite and non-negative, got {:?}",
                self.lambda
            )));
        }
        if !self.sigma.is_finite() || self.sigma <= 0.0 {
            return Err(Error::config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.dropout_fraction > 0.0 && self.dropout_fraction < 1.0) {
            return Err(Error::config(format!(
                "dropout_fraction must lie in (0, 1), got {}",
                self.dropout_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be positive"));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::config(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// One source patch of the pre-training corpus.
#[derive(Clone, Debug)]
pub struct SspItem<F: Scalar> {
    pub patch: Array3<F>,
    pub drf: DoseLevel,
    /// Identifies the parent patch; the two views of one source are the
    /// contrastive positives.
    pub source: String,
}

/// One augmented view of a source patch.
#[derive(Clone, Debug)]
pub struct SspView<F: Scalar> {
    pub data: Array3<F>,
    pub rotation_class: usize,
    pub drl_class: usize,
    pub record: CutoutRecord,
    pub source: String,
}

/// Build one view: rotate first (so the rotation label is unambiguous), then
/// cut out. Returns the view and its restoration target — the rotated patch
/// before perturbation, since restoration should undo the cutout, not the
/// rotation.
pub fn make_view<F: Scalar>(
    item: &SspItem<F>,
    drop_fraction: f64,
    seed: u64,
) -> Result<(SspView<F>, Array3<F>)> {
    let k = rng_from(seed).gen_range(0..ROTATION_CLASSES);
    let rotated = rotate_patch(&item.patch, k)?;
    let (data, record) = cutout_perturb_frac(&rotated, drop_fraction, derive_seed(seed, 1))?;
    let view = SspView {
        data,
        rotation_class: k,
        drl_class: drl_class_of(item.drf)?,
        record,
        source: item.source.clone(),
    };
    Ok((view, rotated))
}

/// Stack single-channel patches into a `[N, 1, x, y, z]` batch.
pub fn pack_views<F: Scalar>(arrs: &[Array3<F>]) -> Tensor<F> {
    assert!(!arrs.is_empty());
    let d = arrs[0].dim();
    let mut data = Vec::with_capacity(arrs.len() * d.0 * d.1 * d.2);
    for a in arrs {
        debug_assert_eq!(a.dim(), d);
        data.extend(a.iter().copied());
    }
    Tensor::new(vec![arrs.len(), 1, d.0, d.1, d.2], data)
}

pub struct SspStepLosses {
    pub class: Var,
    pub rotation: Var,
    pub cpc: Var,
    pub restoration: Var,
    pub total: Var,
}

/// Contrastive loss on the tape. Row-normalized codes, cosine-similarity
/// matrix scaled by 1/sigma, the diagonal pushed to −1e9 so each row's
/// softmax runs over k ≠ i only, then the mean positive log-probability.
pub fn graph_cpc<F: Scalar>(g: &mut Graph<F>, codes: Var, pairing: &[usize], sigma: f64) -> Var {
    let rows = g.shape_of(codes)[0];
    assert_eq!(pairing.len(), rows, "one positive partner per code");
    let z = g.l2_normalize_rows(codes);
    let zt = g.transpose2d(z);
    let s = g.matmul(z, zt);
    let s = g.mul_scalar(s, F::of(1.0 / sigma));
    let mut mask = Tensor::zeros(&[rows, rows]);
    for i in 0..rows {
        mask.data_mut()[i * rows + i] = F::of(-1e9);
    }
    let mask = g.constant(mask);
    let s = g.add(s, mask);
    let lsm = g.log_softmax_rows(s);
    let pos = g.select_rows(lsm, pairing);
    let m = g.mean_all(pos);
    g.mul_scalar(m, F::of(-1.0))
}

/// The four head losses and their weighted total, on the tape.
#[allow(clippy::too_many_arguments)]
pub fn ssp_graph_losses<F: Scalar>(
    g: &mut Graph<F>,
    outs: &SspOutputs,
    drl_labels: &[usize],
    rotation_labels: &[usize],
    pairing: &[usize],
    restoration_targets: &Tensor<F>,
    lambda: [f64; 4],
    sigma: f64,
) -> SspStepLosses {
    let class = g.cross_entropy(outs.drl_logits, drl_labels);
    let rotation = g.cross_entropy(outs.rotation_logits, rotation_labels);
    let cpc = graph_cpc(g, outs.cpc_codes, pairing, sigma);
    let target = g.constant(restoration_targets.clone());
    let restoration = g.l1_loss(outs.restored, target);
    let mut total = g.mul_scalar(class, F::of(lambda[0]));
    for (part, l) in [(rotation, lambda[1]), (cpc, lambda[2]), (restoration, lambda[3])] {
        let w = g.mul_scalar(part, F::of(l));
        total = g.add(total, w);
    }
    SspStepLosses { class, rotation, cpc, restoration, total }
}

/// Cut every reduced-dose volume of a split bucket into SUV-normalized
/// pre-training patches, mixing all requested dose levels.
pub fn collect_pretrain_patches<F: Scalar>(
    manifest: &DatasetManifest,
    base: &Path,
    bucket: SplitBucket,
    grid: &PatchGridSpec,
    drfs: &[DoseLevel],
    suv_scale: f64,
) -> Result<Vec<SspItem<F>>> {
    if drfs.is_empty() || drfs.contains(&DoseLevel::Full) {
        return Err(Error::config(
            "pre-training draws from a non-empty list of reduced dose levels",
        ));
    }
    let mut out = Vec::new();
    for entry in manifest.subjects_in(bucket) {
        for &drf in drfs {
            let Some(rel) = entry.low_path(drf) else {
                continue; // subject lacks this dose level
            };
            let vol: Volume<F> = load_volume(&base.join(rel))?;
            let norm = vol.normalize_suv(suv_scale)?;
            let patches = extract_patches(&norm.voxels, grid)?;
            for (i, p) in patches.into_iter().enumerate() {
                out.push(SspItem {
                    patch: p.data,
                    drf,
                    source: format!("{}/drf{}/p{i}", entry.subject, drf.factor()),
                });
            }
        }
    }
    if out.is_empty() {
        return Err(Error::data(format!("no pre-training patches found for bucket {bucket:?}")));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SspCurveRow {
    pub step: usize,
    pub l_class: f64,
    pub l_rot: f64,
    pub l_cpc: f64,
    pub l_rest: f64,
    pub total: f64,
}

#[derive(Debug)]
pub struct PretrainReport {
    pub curve: Vec<SspCurveRow>,
}

impl PretrainReport {
    pub fn steps(&self) -> usize {
        self.curve.len()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("step,l_class,l_rot,l_cpc,l_rest,total\n");
        for r in &self.curve {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step, r.l_class, r.l_rot, r.l_cpc, r.l_rest, r.total
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Run the four-head pre-training loop over the patch corpus, updating the
/// model in place. View augmentation seeds derive from (run seed, step,
/// element index), and the epoch shuffle from (run seed, epoch), so the run
/// is reproducible end to end.
pub fn pretrain<F: Scalar>(
    model: &mut SspModel<F>,
    items: &[SspItem<F>],
    cfg: &SspConfig,
) -> Result<PretrainReport> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::config("pre-training dataset is empty"));
    }
    let dim = items[0].patch.dim();
    let shape = [dim.0, dim.1, dim.2];
    if shape[0] != shape[1] {
        return Err(Error::config(format!(
            "pre-training patches must be square in-plane, got {shape:?}"
        )));
    }
    model.spec.admits(&shape)?;
    for it in items {
        if it.patch.dim() != dim {
            return Err(Error::config(format!(
                "patch shapes differ: '{}' is {:?}, expected {shape:?}",
                it.source,
                it.patch.dim()
            )));
        }
    }
    let mut opt = Adam::adamw(cfg.lr, cfg.weight_decay);
    let mut curve = Vec::new();
    let mut step = 0usize;
    'epochs: for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut rng_from(derive_seed(cfg.seed, (2 << 48) | epoch as u64)));
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let n = chunk.len();
            // rows 0..n hold view A of each source, rows n..2n view B
            let mut arrs = Vec::with_capacity(2 * n);
            let mut targets = Vec::with_capacity(2 * n);
            let mut drl = Vec::with_capacity(2 * n);
            let mut rot = Vec::with_capacity(2 * n);
            for v in 0..2u64 {
                for (e, &idx) in chunk.iter().enumerate() {
                    let vs =
                        derive_seed(cfg.seed, (1 << 48) | ((step as u64) << 8) | (2 * e as u64 + v));
                    let (view, target) = make_view(&items[idx], cfg.dropout_fraction, vs)?;
                    drl.push(view.drl_class);
                    rot.push(view.rotation_class);
                    arrs.push(view.data);
                    targets.push(target);
                }
            }
            let pairing: Vec<usize> = (0..2 * n).map(|i| (i + n) % (2 * n)).collect();
            let x = pack_views(&arrs);
            let t = pack_views(&targets);
            let mut g = Graph::new();
            let xv = g.input(x);
            let outs = model.forward(&mut g, xv, true);
            let losses =
                ssp_graph_losses(&mut g, &outs, &drl, &rot, &pairing, &t, cfg.lambda, cfg.sigma);
            let row = SspCurveRow {
                step: step + 1,
                l_class: g.value(losses.class).item().as_f64(),
                l_rot: g.value(losses.rotation).item().as_f64(),
                l_cpc: g.value(losses.cpc).item().as_f64(),
                l_rest: g.value(losses.restoration).item().as_f64(),
                total: g.value(losses.total).item().as_f64(),
            };
            if !row.total.is_finite() {
                return Err(Error::numeric(format!(
                    "pre-training diverged at step {}: total loss {}",
                    row.step, row.total
                )));
            }
            let grads = g.backward(losses.total);
            opt.step(&mut model.store, &grads);
            let updates = g.take_stat_updates();
            model.store.apply_stat_updates(&updates);
            curve.push(row);
            step += 1;
        }
    }
    Ok(PretrainReport { curve })
}
