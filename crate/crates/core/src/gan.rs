//! Adversarial synthesis stage.
//!
//! The first-stage U-Net drafts a standard-dose patch from a low-dose one.
//! In the default residual mode the skipless autoencoder sees the draft's
//! residual against the input and emits an unbounded voxelwise gate, so the
//! final synthesis is `gate ⊙ (p_out − v_l) + v_l`; an additive variant
//! (`ar`) and a first-stage-only variant (`none`) exist for ablations. A
//! conditional least-squares discriminator scores (input, candidate) pairs.
//! Discriminator and generator alternate every batch under a
//! plateau-decayed learning rate, and a trained generator is applied to
//! whole volumes through the patch lattice.
//!
//! The plain functions on `Array3` are the reference loss semantics; the
//! `graph_*` counterparts build the identical quantities on the tape.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::metrics::psnr;
use crate::networks::{
    save_checkpoint, AeNet, Checkpoint, Discriminator, NetworkSpec, PixelNet, SectionRef,
};
use crate::optim::{Adam, LrDecision, ReduceOnPlateau};
use crate::patch::{extract_patches, merge_patches, random_crop_pair, Patch, PatchGridSpec};
use crate::rng::{derive_seed, rng_from};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::volume::{load_volume, DatasetManifest, DoseLevel, SplitBucket, Volume};
use ndarray::Array3;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// How the second stage folds the autoencoder output into the synthesis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualMode {
    /// Gate the draft residual: `refined = gate ⊙ (p_out − v_l) + v_l`.
    Ae,
    /// Additive correction of the draft: `refined = p_out + gate`.
    Ar,
    /// First stage only.
    None,
}

impl std::fmt::Display for ResidualMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ResidualMode::Ae => "ae",
            ResidualMode::Ar => "ar",
            ResidualMode::None => "none",
        })
    }
}

// ---- configuration ----

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Content (first-stage L1) weight.
    pub lambda5: f64,
    /// Residual-loss weight; ignored in mode `none`.
    pub lambda6: f64,
    /// Adversarial weight.
    pub lambda7: f64,
    /// When false the critic is never built or stepped and the adversarial
    /// term drops out of the generator objective (the "Pix"-style ablations).
    pub adversarial: bool,
    pub residual_mode: ResidualMode,
    pub lr0: f64,
    pub lr_decay_factor: f64,
    /// Epochs without a new best validation score before the rate decays.
    pub lr_patience_epochs: usize,
    /// Training stops once a decay would land below this rate.
    pub lr_stop_threshold: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Dose-reduction factors whose volumes feed training (and validation).
    pub drf_mix: Vec<DoseLevel>,
    pub patch_shape: [usize; 3],
    /// Random crops drawn per (subject, DRF) pairing per epoch.
    pub patches_per_subject: usize,
    /// SUV normalization divisor; a power of two keeps the round trip exact.
    pub suv_scale: f64,
    /// Checkpoint whose `ssp` section warm-starts the generator encoder.
    pub pretrained_encoder: Option<PathBuf>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda5: 300.0,
            lambda6: 10.0,
            lambda7: 1.0,
            adversarial: true,
            residual_mode: ResidualMode::Ae,
            lr0: 2e-4,
            lr_decay_factor: 0.1,
            lr_patience_epochs: 5,
            lr_stop_threshold: 2e-6,
            max_epochs: 100,
            batch_size: 4,
            drf_mix: vec![DoseLevel::Drf100],
            patch_shape: [32, 32, 16],
            patches_per_subject: 8,
            suv_scale: 8.0,
            pretrained_encoder: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, l) in [("lambda5", self.lambda5), ("lambda6", self.lambda6), ("lambda7", self.lambda7)] {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::config(format!("{name} must be finite and >= 0, got {l}")));
            }
        }
        if !(self.lr0.is_finite() && self.lr_stop_threshold > 0.0 && self.lr0 > self.lr_stop_threshold) {
            return Err(Error::config(format!(
                "need lr0 > lr_stop_threshold > 0, got {} and {}",
                self.lr0, self.lr_stop_threshold
            )));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return Err(Error::config(format!(
                "lr_decay_factor must lie in (0, 1), got {}",
                self.lr_decay_factor
            )));
        }
        if self.lr_patience_epochs == 0 || self.max_epochs == 0 || self.batch_size == 0 || self.patches_per_subject == 0
        {
            return Err(Error::config(
                "lr_patience_epochs, max_epochs, batch_size and patches_per_subject must be >= 1",
            ));
        }
        if self.drf_mix.is_empty() {
            return Err(Error::config("drf_mix must name at least one dose-reduction factor"));
        }
        if self.drf_mix.contains(&DoseLevel::Full) {
            return Err(Error::config("drf_mix must contain reduced doses only"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for d in &self.drf_mix {
            if !seen.insert(d.factor()) {
                return Err(Error::config(format!("drf_mix repeats DRF {}", d.factor())));
            }
        }
        if self.patch_shape.iter().any(|&a| a == 0) {
            return Err(Error::config(format!("patch_shape {:?} has a zero axis", self.patch_shape)));
        }
        if !(self.suv_scale.is_finite() && self.suv_scale > 0.0) {
            return Err(Error::config(format!("suv_scale must be positive, got {}", self.suv_scale)));
        }
        Ok(())
    }
}

/// Named dose mixes used by the ablation grid, contiguous ranges in the
/// proximity style ("10-100"), and bare factors ("100").
pub fn drf_mix_preset(name: &str) -> Result<Vec<DoseLevel>> {
    const CANONICAL: [u32; 5] = [4, 10, 20, 50, 100];
    let factors: &[u32] = match name {
        "low" => &[4, 10, 20],
        "mid" => &[10, 20, 50],
        "high" => &[10, 20, 50, 100],
        "all" => &[4, 10, 20, 50, 100],
        other => {
            if let Some((a, b)) = other.split_once('-') {
                let lo = DoseLevel::from_factor(a.parse().map_err(|_| bad_mix(other))?)?;
                let hi = DoseLevel::from_factor(b.parse().map_err(|_| bad_mix(other))?)?;
                if lo.factor() >= hi.factor() {
                    return Err(bad_mix(other));
                }
                return CANONICAL
                    .iter()
                    .filter(|&&f| f >= lo.factor() && f <= hi.factor())
                    .map(|&f| DoseLevel::from_factor(f))
                    .collect();
            }
            let f: u32 = other.parse().map_err(|_| bad_mix(other))?;
            return Ok(vec![DoseLevel::from_factor(f)?]);
        }
    };
    factors.iter().map(|&f| DoseLevel::from_factor(f)).collect()
}

fn bad_mix(name: &str) -> Error {
    Error::config(format!(
        "unknown DRF mix '{name}': expected low|mid|high|all, a range like 10-100, \
         or one of 4, 10, 20, 50, 100"
    ))
}

/// The three architectures of one training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpecs {
    pub pixel: NetworkSpec,
    pub ae: NetworkSpec,
    pub disc: NetworkSpec,
}

impl Default for TrainSpecs {
    fn default() -> Self {
        TrainSpecs {
            pixel: NetworkSpec::pixel_net(16),
            ae: NetworkSpec::ae_net(16),
            disc: NetworkSpec::discriminator(16),
        }
    }
}

// ---- reference loss semantics ----

fn check_same_shape3<F: Scalar>(what: &str, a: &Array3<F>, b: &Array3<F>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::config(format!(
            "{what}: patch shapes differ ({:?} vs {:?})",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Mean absolute error of the first-stage draft against the standard-dose
/// patch.
pub fn content_loss<F: Scalar>(p_out: &Array3<F>, v_s: &Array3<F>) -> Result<f64> {
    check_same_shape3("content_loss", p_out, v_s)?;
    let acc: f64 = p_out
        .iter()
        .zip(v_s.iter())
        .map(|(&p, &t)| (t.as_f64() - p.as_f64()).abs())
        .sum();
    Ok(acc / p_out.len() as f64)
}

/// Ground-truth residual `r = v_s − v_l`; adding it back to the low-dose
/// patch reconstructs the standard-dose patch.
pub fn residual_target<F: Scalar>(v_s: &Array3<F>, v_l: &Array3<F>) -> Result<Array3<F>> {
    check_same_shape3("residual_target", v_s, v_l)?;
    Ok(v_s - v_l)
}

/// Per-patch synthesis intermediates. `r_tilde` is the draft residual and
/// `gate` the autoencoder output over it (mode `ae`) or over the draft
/// itself (mode `ar`); both stay `None` when the refiner is off.
#[derive(Clone, Debug)]
pub struct ResidualBundle<F: Scalar> {
    pub mode: ResidualMode,
    pub p_out: Array3<F>,
    pub r_tilde: Option<Array3<F>>,
    pub gate: Option<Array3<F>>,
    pub refined: Array3<F>,
}

fn pack_batch<F: Scalar>(arrs: &[&Array3<F>]) -> Tensor<F> {
    assert!(!arrs.is_empty());
    let d = arrs[0].dim();
    let mut data = Vec::with_capacity(arrs.len() * d.0 * d.1 * d.2);
    for a in arrs {
        debug_assert_eq!(a.dim(), d);
        data.extend(a.iter().copied());
    }
    Tensor::new(vec![arrs.len(), 1, d.0, d.1, d.2], data)
}

fn unpack_single<F: Scalar>(t: &Tensor<F>, shape: (usize, usize, usize)) -> Array3<F> {
    debug_assert_eq!(t.shape(), &[1, 1, shape.0, shape.1, shape.2]);
    Array3::from_shape_vec(shape, t.data().to_vec()).expect("tensor layout is row-major")
}

fn ae_eval<F: Scalar>(ae: &AeNet<F>, x: &Array3<F>) -> Result<Array3<F>> {
    let d = x.dim();
    ae.spec.admits(&[d.0, d.1, d.2])?;
    let mut g = Graph::new();
    let xin = g.input(pack_batch(&[x]));
    let y = ae.forward(&mut g, xin, false);
    Ok(unpack_single(g.value(y), d))
}

/// Run the refiner over a first-stage draft (inference path, batch
/// statistics frozen). All bundle members share the patch shape.
pub fn refine<F: Scalar>(
    p_out: &Array3<F>,
    v_l: &Array3<F>,
    ae: &AeNet<F>,
    mode: ResidualMode,
) -> Result<ResidualBundle<F>> {
    check_same_shape3("refine", p_out, v_l)?;
    match mode {
        ResidualMode::None => Ok(ResidualBundle {
            mode,
            p_out: p_out.clone(),
            r_tilde: None,
            gate: None,
            refined: p_out.clone(),
        }),
        ResidualMode::Ae => {
            let r_tilde = p_out - v_l;
            let gate = ae_eval(ae, &r_tilde)?;
            let mut refined = v_l.clone();
            ndarray::Zip::from(&mut refined).and(&gate).and(&r_tilde).for_each(|o, &g, &r| {
                *o = g * r + *o;
            });
            Ok(ResidualBundle {
                mode,
                p_out: p_out.clone(),
                r_tilde: Some(r_tilde),
                gate: Some(gate),
                refined,
            })
        }
        ResidualMode::Ar => {
            let gate = ae_eval(ae, p_out)?;
            let refined = p_out + &gate;
            Ok(ResidualBundle { mode, p_out: p_out.clone(), r_tilde: None, gate: Some(gate), refined })
        }
    }
}

/// Second-stage supervision. Mode `ae` drives the gated residual toward
/// `r = v_s − v_l`; mode `ar` drives the corrected draft toward `v_s`
/// (the additive target is exactly what the draft still misses).
pub fn residual_loss<F: Scalar>(
    bundle: &ResidualBundle<F>,
    v_s: &Array3<F>,
    v_l: &Array3<F>,
) -> Result<f64> {
    check_same_shape3("residual_loss", v_s, v_l)?;
    check_same_shape3("residual_loss", &bundle.refined, v_s)?;
    match bundle.mode {
        ResidualMode::None => {
            Err(Error::config("residual_loss: no refiner is active in mode 'none'"))
        }
        ResidualMode::Ae => {
            let gate = bundle.gate.as_ref().ok_or_else(|| Error::config("ae bundle lacks a gate"))?;
            let rt = bundle
                .r_tilde
                .as_ref()
                .ok_or_else(|| Error::config("ae bundle lacks a draft residual"))?;
            let mut acc = 0.0f64;
            for (((&s, &l), &g), &r) in v_s.iter().zip(v_l.iter()).zip(gate.iter()).zip(rt.iter()) {
                acc += ((s.as_f64() - l.as_f64()) - (g * r).as_f64()).abs();
            }
            Ok(acc / v_s.len() as f64)
        }
        ResidualMode::Ar => {
            let acc: f64 = v_s
                .iter()
                .zip(bundle.refined.iter())
                .map(|(&s, &r)| (s.as_f64() - r.as_f64()).abs())
                .sum();
            Ok(acc / v_s.len() as f64)
        }
    }
}

/// Least-squares objectives on scalar discriminator scores in (0, 1):
/// the discriminator pushes real pairs toward 1 and synthetic ones toward 0,
/// the generator pushes its synthesis toward 1.
pub fn lsgan_d_loss(score_real: f64, score_fake: f64) -> f64 {
    (score_real - 1.0).powi(2) + score_fake.powi(2)
}

pub fn lsgan_g_loss(score_fake: f64) -> f64 {
    (score_fake - 1.0).powi(2)
}

/// Score the real and synthetic pairings and return `(d_loss, g_loss)`.
pub fn adversarial_losses<F: Scalar>(
    disc: &Discriminator<F>,
    v_l: &Array3<F>,
    v_s: &Array3<F>,
    refined: &Array3<F>,
) -> Result<(f64, f64)> {
    check_same_shape3("adversarial_losses", v_l, v_s)?;
    check_same_shape3("adversarial_losses", v_l, refined)?;
    let d = v_l.dim();
    disc.spec.admits(&[d.0, d.1, d.2])?;
    let score = |candidate: &Array3<F>| -> f64 {
        let mut g = Graph::new();
        let a = g.input(pack_batch(&[v_l]));
        let b = g.input(pack_batch(&[candidate]));
        let (_, s) = disc.forward(&mut g, a, b, false);
        g.value(s).data()[0].as_f64()
    };
    let s_real = score(v_s);
    let s_fake = score(refined);
    if !(s_real.is_finite() && s_fake.is_finite()) {
        return Err(Error::numeric(format!(
            "discriminator produced a non-finite score (real {s_real}, synthetic {s_fake})"
        )));
    }
    Ok((lsgan_d_loss(s_real, s_fake), lsgan_g_loss(s_fake)))
}

/// Weighted sum of the generator objectives; the residual term is simply
/// absent when the refiner is off.
pub fn total_generator_loss(
    content: f64,
    residual: Option<f64>,
    adversarial: f64,
    lambda: [f64; 3],
) -> Result<f64> {
    let total = lambda[0] * content + residual.map_or(0.0, |r| lambda[1] * r) + lambda[2] * adversarial;
    if !total.is_finite() {
        return Err(Error::numeric(format!("generator loss is not finite ({total})")));
    }
    Ok(total)
}

// ---- tape-side counterparts ----

/// Synthesis intermediates on the tape; `gated` keeps `gate ⊙ r_tilde` for
/// the residual loss in mode `ae`.
pub struct GraphBundle {
    pub mode: ResidualMode,
    pub p_out: Var,
    pub r_tilde: Option<Var>,
    pub gate: Option<Var>,
    pub gated: Option<Var>,
    pub refined: Var,
}

/// Full two-stage forward pass.
pub fn graph_refine<F: Scalar>(
    g: &mut Graph<F>,
    pixel: &PixelNet<F>,
    ae: Option<&AeNet<F>>,
    v_l: Var,
    mode: ResidualMode,
    train: bool,
) -> Result<GraphBundle> {
    let p_out = pixel.forward(g, v_l, train);
    let need_ae = || ae.ok_or_else(|| Error::config(format!("mode '{mode}' needs an autoencoder")));
    match mode {
        ResidualMode::None => Ok(GraphBundle {
            mode,
            p_out,
            r_tilde: None,
            gate: None,
            gated: None,
            refined: p_out,
        }),
        ResidualMode::Ae => {
            let rt = g.sub(p_out, v_l);
            let gate = need_ae()?.forward(g, rt, train);
            let gated = g.mul(gate, rt);
            let refined = g.add(gated, v_l);
            Ok(GraphBundle {
                mode,
                p_out,
                r_tilde: Some(rt),
                gate: Some(gate),
                gated: Some(gated),
                refined,
            })
        }
        ResidualMode::Ar => {
            let gate = need_ae()?.forward(g, p_out, train);
            let refined = g.add(p_out, gate);
            Ok(GraphBundle { mode, p_out, r_tilde: None, gate: Some(gate), gated: None, refined })
        }
    }
}

/// Residual supervision on the tape; mirrors [`residual_loss`].
pub fn graph_residual_loss<F: Scalar>(
    g: &mut Graph<F>,
    bundle: &GraphBundle,
    v_s: Var,
    v_l: Var,
) -> Result<Var> {
    match bundle.mode {
        ResidualMode::None => {
            Err(Error::config("residual_loss: no refiner is active in mode 'none'"))
        }
        ResidualMode::Ae => {
            let r = g.sub(v_s, v_l);
            let gated = bundle.gated.expect("ae bundle carries gate ⊙ r_tilde");
            Ok(g.l1_loss(r, gated))
        }
        ResidualMode::Ar => Ok(g.l1_loss(v_s, bundle.refined)),
    }
}

// ---- the alternating trainer ----

/// Losses observed in one discriminator-then-generator step. The adversarial
/// pair is absent when the critic is disabled.
#[derive(Clone, Copy, Debug)]
pub struct StepLosses {
    pub content: f64,
    pub residual: Option<f64>,
    pub d_loss: Option<f64>,
    pub g_loss: Option<f64>,
    pub total_g: f64,
}

const SEED_PIXEL: u64 = 11;
const SEED_AE: u64 = 12;
const SEED_DISC: u64 = 13;
/// Epoch-scoped RNG stream tag; disjoint from the pretraining streams.
const SEED_EPOCH: u64 = 3 << 48;

/// The three networks plus their Adam states. One call to [`GanTrainer::step`]
/// performs the usual alternation: the discriminator updates against the
/// current (frozen) generator, then the generator updates against the
/// frozen discriminator.
pub struct GanTrainer<F: Scalar> {
    pub cfg: TrainConfig,
    pub pixel: PixelNet<F>,
    pub ae: Option<AeNet<F>>,
    pub disc: Option<Discriminator<F>>,
    opt_pixel: Adam<F>,
    opt_ae: Option<Adam<F>>,
    opt_disc: Option<Adam<F>>,
}

impl<F: Scalar> std::fmt::Debug for GanTrainer<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GanTrainer")
            .field("mode", &self.cfg.residual_mode)
            .field("seed", &self.cfg.seed)
            .finish_non_exhaustive()
    }
}

impl<F: Scalar> GanTrainer<F> {
    pub fn new(cfg: &TrainConfig, specs: &TrainSpecs) -> Result<Self> {
        cfg.validate()?;
        let mut pixel = PixelNet::new(specs.pixel.clone(), derive_seed(cfg.seed, SEED_PIXEL))?;
        let ae = match cfg.residual_mode {
            ResidualMode::None => None,
            _ => Some(AeNet::new(specs.ae.clone(), derive_seed(cfg.seed, SEED_AE))?),
        };
        let disc = if cfg.adversarial {
            Some(Discriminator::new(specs.disc.clone(), derive_seed(cfg.seed, SEED_DISC))?)
        } else {
            None
        };
        pixel.spec.admits(&cfg.patch_shape)?;
        if let Some(ae) = &ae {
            ae.spec.admits(&cfg.patch_shape)?;
        }
        if let Some(disc) = &disc {
            disc.spec.admits(&cfg.patch_shape)?;
        }
        if let Some(path) = &cfg.pretrained_encoder {
            warm_start_encoder(&mut pixel, path)?;
        }
        // beta1 = 0.5 tempers the adversarial momentum
        let adam = || Adam::new(cfg.lr0, 0.5, 0.999);
        Ok(GanTrainer {
            cfg: cfg.clone(),
            opt_ae: ae.as_ref().map(|_| adam()),
            ae,
            opt_pixel: adam(),
            opt_disc: disc.as_ref().map(|_| adam()),
            pixel,
            disc,
        })
    }

    /// One rate drives every network, as the schedule decays them together.
    pub fn set_lr(&mut self, lr: f64) {
        self.opt_pixel.lr = lr;
        if let Some(o) = &mut self.opt_disc {
            o.lr = lr;
        }
        if let Some(o) = &mut self.opt_ae {
            o.lr = lr;
        }
    }

    /// Alternating update on one `[N,1,x,y,z]` batch pair.
    pub fn step(&mut self, low: &Tensor<F>, full: &Tensor<F>) -> Result<StepLosses> {
        if low.shape() != full.shape() {
            return Err(Error::config(format!(
                "batch shapes differ: {:?} vs {:?}",
                low.shape(),
                full.shape()
            )));
        }
        if low.shape().len() != 5 || low.shape()[1] != 1 {
            return Err(Error::config(format!("expected [N,1,x,y,z] batches, got {:?}", low.shape())));
        }
        let mode = self.cfg.residual_mode;

        // -- discriminator step: generator frozen, so the synthesis is a
        //    constant and only the critic's statistics update.
        let mut d_loss = None;
        if let (Some(disc), Some(opt)) = (&mut self.disc, &mut self.opt_disc) {
            let mut g = Graph::new();
            g.freeze_store(self.pixel.store.uid());
            if let Some(ae) = &self.ae {
                g.freeze_store(ae.store.uid());
            }
            let vl = g.input(low.clone());
            let vs = g.input(full.clone());
            let bundle = graph_refine(&mut g, &self.pixel, self.ae.as_ref(), vl, mode, true)?;
            let (_, s_real) = disc.forward(&mut g, vl, vs, true);
            let (_, s_fake) = disc.forward(&mut g, vl, bundle.refined, true);
            let rm1 = g.add_scalar(s_real, -F::one());
            let r2 = g.mul(rm1, rm1);
            let f2 = g.mul(s_fake, s_fake);
            let real_term = g.mean_all(r2);
            let fake_term = g.mean_all(f2);
            let d = g.add(real_term, fake_term);
            let val = g.value(d).item().as_f64();
            if !val.is_finite() {
                return Err(Error::numeric(format!("discriminator loss is not finite ({val})")));
            }
            let grads = g.backward(d);
            opt.step(&mut disc.store, &grads);
            let ups = g.take_stat_updates();
            disc.store.apply_stat_updates(&ups);
            d_loss = Some(val);
        }

        // -- generator step against the frozen critic.
        let mut g = Graph::new();
        if let Some(disc) = &self.disc {
            g.freeze_store(disc.store.uid());
        }
        let vl = g.input(low.clone());
        let vs = g.input(full.clone());
        let bundle = graph_refine(&mut g, &self.pixel, self.ae.as_ref(), vl, mode, true)?;
        let content = g.l1_loss(bundle.p_out, vs);
        let residual = match mode {
            ResidualMode::None => None,
            _ => Some(graph_residual_loss(&mut g, &bundle, vs, vl)?),
        };
        let adv = self.disc.as_ref().map(|disc| {
            let (_, s_fake) = disc.forward(&mut g, vl, bundle.refined, true);
            let fm1 = g.add_scalar(s_fake, -F::one());
            let f2 = g.mul(fm1, fm1);
            g.mean_all(f2)
        });
        let mut total = g.mul_scalar(content, F::of(self.cfg.lambda5));
        if let Some(r) = residual {
            let rw = g.mul_scalar(r, F::of(self.cfg.lambda6));
            total = g.add(total, rw);
        }
        if let Some(a) = adv {
            let aw = g.mul_scalar(a, F::of(self.cfg.lambda7));
            total = g.add(total, aw);
        }

        let losses = StepLosses {
            content: g.value(content).item().as_f64(),
            residual: residual.map(|r| g.value(r).item().as_f64()),
            d_loss,
            g_loss: adv.map(|a| g.value(a).item().as_f64()),
            total_g: g.value(total).item().as_f64(),
        };
        if !losses.total_g.is_finite() {
            return Err(Error::numeric(format!("generator loss is not finite ({})", losses.total_g)));
        }
        let grads = g.backward(total);
        self.opt_pixel.step(&mut self.pixel.store, &grads);
        if let (Some(ae), Some(opt)) = (&mut self.ae, &mut self.opt_ae) {
            opt.step(&mut ae.store, &grads);
        }
        let ups = g.take_stat_updates();
        self.pixel.store.apply_stat_updates(&ups);
        if let Some(ae) = &mut self.ae {
            ae.store.apply_stat_updates(&ups);
        }
        Ok(losses)
    }

    /// Everything needed to resume or deploy: the three networks with their
    /// specs, each optimizer's moments and step count, and the exact
    /// configuration.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "stage": "gan",
            "config": self.cfg,
            "opt_t": {
                "pixel": self.opt_pixel.t(),
                "ae": self.opt_ae.as_ref().map(|o| o.t()),
                "disc": self.opt_disc.as_ref().map(|o| o.t()),
            },
        });
        let m_pixel = self.opt_pixel.export_moments(&self.pixel.store);
        let m_disc = match (&self.opt_disc, &self.disc) {
            (Some(opt), Some(disc)) => Some(opt.export_moments(&disc.store)),
            _ => None,
        };
        let m_ae = match (&self.opt_ae, &self.ae) {
            (Some(opt), Some(ae)) => Some(opt.export_moments(&ae.store)),
            _ => None,
        };
        let mut sections = vec![SectionRef {
            name: "pixel",
            spec: Some(&self.pixel.spec),
            store: &self.pixel.store,
        }];
        if let Some(ae) = &self.ae {
            sections.push(SectionRef { name: "ae", spec: Some(&ae.spec), store: &ae.store });
        }
        if let Some(disc) = &self.disc {
            sections.push(SectionRef { name: "disc", spec: Some(&disc.spec), store: &disc.store });
        }
        sections.push(SectionRef { name: "opt.pixel", spec: None, store: &m_pixel });
        if let Some(m) = &m_ae {
            sections.push(SectionRef { name: "opt.ae", spec: None, store: m });
        }
        if let Some(m) = &m_disc {
            sections.push(SectionRef { name: "opt.disc", spec: None, store: m });
        }
        save_checkpoint(path, meta, &sections)
    }

    /// Drop the critic and the optimizer states, keeping the deployable part.
    pub fn into_synthesizer(self) -> Synthesizer<F> {
        Synthesizer {
            mode: self.cfg.residual_mode,
            suv_scale: self.cfg.suv_scale,
            pixel: self.pixel,
            ae: self.ae,
        }
    }
}

/// Copy `enc.*` from a pretraining checkpoint into the generator encoder.
fn warm_start_encoder<F: Scalar>(pixel: &mut PixelNet<F>, path: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(path)?;
    let sec = ckpt.section("ssp")?;
    if let Some(spec) = &sec.spec {
        if spec.base_channels != pixel.spec.base_channels
            || spec.depth_strides != pixel.spec.depth_strides
            || spec.in_channels != pixel.spec.in_channels
        {
            return Err(Error::checkpoint(format!(
                "pretrained encoder ({} channels, strides {:?}) does not fit the generator \
                 ({} channels, strides {:?})",
                spec.base_channels, spec.depth_strides, pixel.spec.base_channels, pixel.spec.depth_strides
            )));
        }
    }
    sec.load_prefix_into(&mut pixel.store, "enc.")?;
    Ok(())
}

// ---- whole-volume inference ----

/// Inference view of a trained generator: the first stage plus, when the
/// mode calls for it, its residual refiner.
pub struct Synthesizer<F: Scalar> {
    pub mode: ResidualMode,
    pub suv_scale: f64,
    pub pixel: PixelNet<F>,
    pub ae: Option<AeNet<F>>,
}

/// Patch-lattice synthesis in the normalized domain: extract, run the
/// two-stage forward in eval mode, merge (overlaps average).
pub fn synth_normalized<F: Scalar>(
    pixel: &PixelNet<F>,
    ae: Option<&AeNet<F>>,
    mode: ResidualMode,
    voxels: &Array3<F>,
    grid: &PatchGridSpec,
) -> Result<Array3<F>> {
    pixel.spec.admits(&grid.patch_shape)?;
    if let Some(ae) = ae {
        if mode != ResidualMode::None {
            ae.spec.admits(&grid.patch_shape)?;
        }
    }
    let dim = voxels.dim();
    let patches = extract_patches(voxels, grid)?;
    let mut outs = Vec::with_capacity(patches.len());
    for p in &patches {
        let mut g = Graph::new();
        let x = g.input(pack_batch(&[&p.data]));
        let bundle = graph_refine(&mut g, pixel, ae, x, mode, false)?;
        outs.push(Patch { origin: p.origin, data: unpack_single(g.value(bundle.refined), p.data.dim()) });
    }
    merge_patches([dim.0, dim.1, dim.2], &outs)
}

impl<F: Scalar> Synthesizer<F> {
    /// Synthesize a standard-dose estimate for a whole volume. The output
    /// keeps the input's shape, spacing, id, and dose tag; negative voxels
    /// are clamped to zero on the way out of the normalized domain.
    pub fn infer_volume(&self, v_l: &Volume<F>, grid: &PatchGridSpec) -> Result<Volume<F>> {
        let norm = v_l.normalize_suv(self.suv_scale)?;
        let merged = synth_normalized(&self.pixel, self.ae.as_ref(), self.mode, &norm.voxels, grid)?;
        let s = F::of(self.suv_scale);
        let zero = F::zero();
        let denorm = merged.mapv(|v| {
            let y = v * s;
            if y < zero {
                zero
            } else {
                y
            }
        });
        Volume::new(denorm, v_l.spacing, v_l.dose, &v_l.id)
    }

    /// Rebuild the deployable networks from a training checkpoint.
    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        let cfg_value = ckpt
            .meta
            .get("config")
            .cloned()
            .ok_or_else(|| Error::checkpoint("checkpoint meta lacks a 'config' echo"))?;
        let cfg: TrainConfig = serde_json::from_value(cfg_value)
            .map_err(|e| Error::checkpoint(format!("checkpoint config echo: {e}")))?;
        let psec = ckpt.section("pixel")?;
        let pspec = psec
            .spec
            .clone()
            .ok_or_else(|| Error::checkpoint("section 'pixel' lacks a network spec"))?;
        let mut pixel = PixelNet::new(pspec, 0)?;
        psec.load_into(&mut pixel.store)?;
        let ae = match cfg.residual_mode {
            ResidualMode::None => None,
            _ => {
                let asec = ckpt.section("ae")?;
                let aspec = asec
                    .spec
                    .clone()
                    .ok_or_else(|| Error::checkpoint("section 'ae' lacks a network spec"))?;
                let mut ae = AeNet::new(aspec, 0)?;
                asec.load_into(&mut ae.store)?;
                Some(ae)
            }
        };
        Ok(Synthesizer { mode: cfg.residual_mode, suv_scale: cfg.suv_scale, pixel, ae })
    }
}

// ---- the epoch loop ----

/// One subject's normalized low/standard pairing at one DRF.
pub struct PairedVolumes<F: Scalar> {
    pub subject: String,
    pub drf: DoseLevel,
    pub low: Array3<F>,
    pub full: Array3<F>,
}

/// Load every (subject, DRF) pairing of a split bucket, SUV-normalized.
/// Subjects lacking a requested DRF are skipped; the caller decides whether
/// what remains is enough.
pub fn collect_pairs<F: Scalar>(
    manifest: &DatasetManifest,
    base: &Path,
    bucket: SplitBucket,
    drfs: &[DoseLevel],
    suv_scale: f64,
) -> Result<Vec<PairedVolumes<F>>> {
    let mut out = Vec::new();
    for entry in manifest.subjects_in(bucket) {
        let full_vol: Volume<F> = load_volume(&base.join(&entry.full))?;
        let full = full_vol.normalize_suv(suv_scale)?;
        for &drf in drfs {
            let Some(rel) = entry.low_path(drf) else { continue };
            let low_vol: Volume<F> = load_volume(&base.join(rel))?;
            if low_vol.shape() != full_vol.shape() {
                return Err(Error::data(format!(
                    "subject '{}': low/full volume shapes differ ({:?} vs {:?})",
                    entry.subject,
                    low_vol.shape(),
                    full_vol.shape()
                )));
            }
            let low = low_vol.normalize_suv(suv_scale)?;
            out.push(PairedVolumes {
                subject: entry.subject.clone(),
                drf,
                low: low.voxels,
                full: full.voxels.clone(),
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub l_content: f64,
    /// Present exactly when the refiner is active.
    pub l_residual: Option<f64>,
    /// Present exactly when the critic is active.
    pub d_loss: Option<f64>,
    pub g_loss: Option<f64>,
    /// Mean validation PSNR (dB); NaN when the manifest has no val subjects.
    pub val_psnr: f64,
}

#[derive(Debug)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    /// True when the schedule hit the stop threshold before `max_epochs`.
    pub stopped_early: bool,
}

impl TrainReport {
    /// One row per epoch; the residual and adversarial columns only exist
    /// when the corresponding network was active.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let with_residual = self.epochs.iter().any(|e| e.l_residual.is_some());
        let with_adv = self.epochs.iter().any(|e| e.d_loss.is_some());
        let mut out = String::from("epoch,lr,l_content");
        if with_residual {
            out.push_str(",l_residual");
        }
        if with_adv {
            out.push_str(",d_loss,g_loss");
        }
        out.push_str(",val_psnr\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{}", e.epoch, e.lr, e.l_content));
            if with_residual {
                out.push_str(&format!(",{}", e.l_residual.unwrap_or(f64::NAN)));
            }
            if with_adv {
                out.push_str(&format!(
                    ",{},{}",
                    e.d_loss.unwrap_or(f64::NAN),
                    e.g_loss.unwrap_or(f64::NAN)
                ));
            }
            out.push_str(&format!(",{}\n", e.val_psnr));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Run the adversarial stage over a manifest: random crop pools per epoch,
/// alternating updates per batch, a validation PSNR pass per epoch, and the
/// plateau schedule deciding decay and early stop.
pub fn train<F: Scalar>(
    manifest: &DatasetManifest,
    base: &Path,
    cfg: &TrainConfig,
    specs: &TrainSpecs,
) -> Result<(GanTrainer<F>, TrainReport)> {
    let mut trainer = GanTrainer::new(cfg, specs)?;
    let pairs = collect_pairs::<F>(manifest, base, SplitBucket::Train, &cfg.drf_mix, cfg.suv_scale)?;
    for &drf in &cfg.drf_mix {
        if !pairs.iter().any(|p| p.drf == drf) {
            return Err(Error::data(format!(
                "no training subject provides DRF {}",
                drf.factor()
            )));
        }
    }
    let val = collect_pairs::<F>(manifest, base, SplitBucket::Val, &cfg.drf_mix, cfg.suv_scale)?;
    let val_grid = PatchGridSpec { patch_shape: cfg.patch_shape, stride: cfg.patch_shape };

    let mut sched =
        ReduceOnPlateau::new(cfg.lr_decay_factor, cfg.lr_patience_epochs, cfg.lr_stop_threshold);
    let mut lr = cfg.lr0;
    trainer.set_lr(lr);
    let mut epochs = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let mut rng = rng_from(derive_seed(cfg.seed, SEED_EPOCH | epoch as u64));
        let mut crops = Vec::new();
        for pv in &pairs {
            for _ in 0..cfg.patches_per_subject {
                crops.push(random_crop_pair(&pv.low, &pv.full, cfg.patch_shape, &mut rng)?);
            }
        }
        crops.shuffle(&mut rng);

        let (mut sc, mut sr, mut sd, mut sg) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let mut steps = 0usize;
        for chunk in crops.chunks(cfg.batch_size) {
            let lows: Vec<&Array3<F>> = chunk.iter().map(|c| &c.0).collect();
            let fulls: Vec<&Array3<F>> = chunk.iter().map(|c| &c.1).collect();
            let losses = trainer.step(&pack_batch(&lows), &pack_batch(&fulls))?;
            sc += losses.content;
            sr += losses.residual.unwrap_or(0.0);
            sd += losses.d_loss.unwrap_or(0.0);
            sg += losses.g_loss.unwrap_or(0.0);
            steps += 1;
        }
        let n = steps.max(1) as f64;

        let val_psnr = if val.is_empty() {
            f64::NAN
        } else {
            let mut acc = 0.0;
            for pv in &val {
                let synth = synth_normalized(
                    &trainer.pixel,
                    trainer.ae.as_ref(),
                    cfg.residual_mode,
                    &pv.low,
                    &val_grid,
                )?;
                acc += psnr(&pv.full, &synth)?;
            }
            acc / val.len() as f64
        };

        epochs.push(EpochLog {
            epoch,
            lr,
            l_content: sc / n,
            l_residual: match cfg.residual_mode {
                ResidualMode::None => None,
                _ => Some(sr / n),
            },
            d_loss: cfg.adversarial.then_some(sd / n),
            g_loss: cfg.adversarial.then_some(sg / n),
            val_psnr,
        });

        if val_psnr.is_finite() {
            // the schedule minimizes, so feed it the negated score
            match sched.observe(-val_psnr, lr) {
                LrDecision::Continue => {}
                LrDecision::Reduce(next) => {
                    lr = next;
                    trainer.set_lr(lr);
                }
                LrDecision::Stop => {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok((trainer, TrainReport { epochs, stopped_early }))
}
