//! The three networks plus the pretraining heads, built from declarative
//! specs with exact shape contracts, and the single-file checkpoint format.
//!
//! Pixel-Net is a five-level 3D U-Net: encoder blocks are
//! LeakyReLU→Conv(stride)→BN except the first (a lone convolution) and the
//! last (no BN); decoder blocks are ReLU→TransposedConv→BN with the last
//! block unnormalized and 1-channel. The refinement auto-encoder (AE-Net) is
//! a skipless V: four Conv→BN→LeakyReLU blocks each followed by a max-pool,
//! mirrored by transposed-conv upsampling, closed by a linear 1-channel
//! convolution so its gate output is unbounded. The discriminator scores a
//! 2-channel (input, candidate) pair through five strided Conv→LeakyReLU→BN
//! blocks, the last replaced by Conv→Sigmoid so the map stays in (0,1).

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{BatchNorm3d, Conv3d, ConvTranspose3d, Linear, ParamStore};
use crate::rng::rng_from;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CPC_CODE_DIM: usize = 512;
pub const DRL_CLASSES: usize = 3;
pub const ROTATION_CLASSES: usize = 4;
/// Hidden width of the dose-level head's linear stack.
pub const DRL_HIDDEN: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    PixelNet,
    AeNet,
    Discriminator,
    SspHeads,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub kind: NetworkKind,
    #[serde(default = "default_base_channels")]
    pub base_channels: usize,
    /// Per-level stride 3-vectors; empty means the kind's canonical schedule.
    #[serde(default)]
    pub depth_strides: Vec<[usize; 3]>,
    #[serde(default)]
    pub in_channels: usize,
    #[serde(default = "default_negative_slope")]
    pub negative_slope: f64,
}

fn default_base_channels() -> usize {
    16
}

fn default_negative_slope() -> f64 {
    0.2
}

/// Four in-plane halvings plus one depth-sparing level, so the default
/// 32x32x16 patch bottoms out at 1x1x1.
fn five_level_strides() -> Vec<[usize; 3]> {
    vec![[2, 2, 2], [2, 2, 2], [2, 2, 2], [2, 2, 2], [2, 2, 1]]
}

fn four_level_strides() -> Vec<[usize; 3]> {
    vec![[2, 2, 2]; 4]
}

impl NetworkSpec {
    pub fn pixel_net(base_channels: usize) -> Self {
        NetworkSpec {
            kind: NetworkKind::PixelNet,
            base_channels,
            depth_strides: five_level_strides(),
            in_channels: 1,
            negative_slope: 0.2,
        }
    }

    pub fn ae_net(base_channels: usize) -> Self {
        NetworkSpec {
            kind: NetworkKind::AeNet,
            base_channels,
            depth_strides: four_level_strides(),
            in_channels: 1,
            negative_slope: 0.2,
        }
    }

    pub fn discriminator(base_channels: usize) -> Self {
        NetworkSpec {
            kind: NetworkKind::Discriminator,
            base_channels,
            depth_strides: five_level_strides(),
            in_channels: 2,
            negative_slope: 0.2,
        }
    }

    fn levels(&self) -> usize {
        match self.kind {
            NetworkKind::AeNet => 4,
            _ => 5,
        }
    }

    /// Fill omitted fields with the kind's canonical values and validate.
    pub fn normalized(mut self) -> Result<Self> {
        if self.depth_strides.is_empty() {
            self.depth_strides = match self.kind {
                NetworkKind::AeNet => four_level_strides(),
                _ => five_level_strides(),
            };
        }
        if self.in_channels == 0 {
            self.in_channels = match self.kind {
                NetworkKind::Discriminator => 2,
                _ => 1,
            };
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::config("base_channels must be >= 1"));
        }
        if self.in_channels == 0 {
            return Err(Error::config("in_channels must be >= 1"));
        }
        if !(self.negative_slope > 0.0 && self.negative_slope < 1.0) {
            return Err(Error::config(format!(
                "negative_slope must lie in (0, 1), got {}",
                self.negative_slope
            )));
        }
        let want = self.levels();
        if self.depth_strides.len() != want {
            return Err(Error::config(format!(
                "{:?} needs exactly {want} stride levels, got {}",
                self.kind,
                self.depth_strides.len()
            )));
        }
        if self.depth_strides.iter().flatten().any(|&s| s == 0) {
            return Err(Error::config("strides must be >= 1"));
        }
        Ok(())
    }

    /// Cumulative per-axis downsampling factor.
    pub fn stride_product(&self) -> [usize; 3] {
        let mut p = [1usize; 3];
        for s in &self.depth_strides {
            for a in 0..3 {
                p[a] *= s[a];
            }
        }
        p
    }

    /// A patch shape is admitted when each axis divides by the full stride
    /// product: every level then halves exactly and the decoder inverts the
    /// encoder shape-for-shape.
    pub fn admits(&self, patch_shape: &[usize; 3]) -> Result<()> {
        let p = self.stride_product();
        for a in 0..3 {
            if patch_shape[a] == 0 || patch_shape[a] % p[a] != 0 {
                return Err(Error::config(format!(
                    "patch axis {a} extent {} is not a positive multiple of the \
                     stride product {} for {:?}",
                    patch_shape[a], p[a], self.kind
                )));
            }
        }
        Ok(())
    }

    /// Encoder channel widths per level.
    fn encoder_channels(&self) -> Vec<usize> {
        let c = self.base_channels;
        match self.kind {
            NetworkKind::AeNet => vec![c, 2 * c, 4 * c, 8 * c],
            _ => vec![c, 2 * c, 4 * c, 8 * c, 16 * c],
        }
    }
}

fn out_pad_for(stride: [usize; 3]) -> [usize; 3] {
    [stride[0] - 1, stride[1] - 1, stride[2] - 1]
}

const K3: [usize; 3] = [3, 3, 3];
const P1: [usize; 3] = [1, 1, 1];

// ---- Pixel-Net ----

pub struct PixelEncoder {
    conv1: Conv3d,
    rest: Vec<(Conv3d, Option<BatchNorm3d>)>,
    slope: f64,
}

impl PixelEncoder {
    pub fn new<F: Scalar>(
        spec: &NetworkSpec,
        store: &mut ParamStore<F>,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Self {
        let ch = spec.encoder_channels();
        let conv1 =
            Conv3d::new(store, "enc.conv1", spec.in_channels, ch[0], K3, spec.depth_strides[0], P1, true, rng);
        let mut rest = Vec::new();
        for lvl in 1..5 {
            let conv = Conv3d::new(
                store,
                &format!("enc.conv{}", lvl + 1),
                ch[lvl - 1],
                ch[lvl],
                K3,
                spec.depth_strides[lvl],
                P1,
                true,
                rng,
            );
            // the deepest encoder block drops its BatchNorm
            let bn = (lvl < 4)
                .then(|| BatchNorm3d::new(store, &format!("enc.bn{}", lvl + 1), ch[lvl], rng));
            rest.push((conv, bn));
        }
        PixelEncoder { conv1, rest, slope: spec.negative_slope }
    }

    /// Returns all five level outputs, shallowest first.
    pub fn forward<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: Var,
        train: bool,
    ) -> Vec<Var> {
        let slope = F::of(self.slope);
        let mut feats = Vec::with_capacity(5);
        let mut cur = self.conv1.forward(g, store, x);
        feats.push(cur);
        for (conv, bn) in &self.rest {
            let a = g.leaky_relu(cur, slope);
            let mut y = conv.forward(g, store, a);
            if let Some(bn) = bn {
                y = bn.forward(g, store, y, train);
            }
            feats.push(y);
            cur = y;
        }
        feats
    }
}

pub struct PixelDecoder {
    blocks: Vec<(ConvTranspose3d, Option<BatchNorm3d>)>,
}

impl PixelDecoder {
    pub fn new<F: Scalar>(
        spec: &NetworkSpec,
        prefix: &str,
        store: &mut ParamStore<F>,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Self {
        let ch = spec.encoder_channels();
        let c = spec.base_channels;
        // decoder level i undoes encoder level i; runs 5 -> 1
        let outs = [8 * c, 4 * c, 2 * c, c, 1];
        let mut blocks = Vec::new();
        for (i, lvl) in (1..=5).rev().enumerate() {
            // d5 sees the bottleneck alone; the rest see concat(previous, skip)
            let c_in = if lvl == 5 { ch[4] } else { 2 * ch[lvl - 1] };
            let stride = spec.depth_strides[lvl - 1];
            let tconv = ConvTranspose3d::new(
                store,
                &format!("{prefix}.tconv{lvl}"),
                c_in,
                outs[i],
                K3,
                stride,
                P1,
                out_pad_for(stride),
                true,
                rng,
            );
            let bn = (lvl > 1)
                .then(|| BatchNorm3d::new(store, &format!("{prefix}.bn{lvl}"), outs[i], rng));
            blocks.push((tconv, bn));
        }
        PixelDecoder { blocks }
    }

    /// `feats` are the encoder outputs, shallowest first.
    pub fn forward<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        feats: &[Var],
        train: bool,
    ) -> Var {
        assert_eq!(feats.len(), 5, "decoder expects five encoder levels");
        let mut cur = feats[4];
        for (i, (tconv, bn)) in self.blocks.iter().enumerate() {
            let lvl = 5 - i;
            let joined = if lvl == 5 { cur } else { g.concat_channels(&[cur, feats[lvl - 1]]) };
            let a = g.relu(joined);
            let mut y = tconv.forward(g, store, a);
            if let Some(bn) = bn {
                y = bn.forward(g, store, y, train);
            }
            cur = y;
        }
        cur
    }
}

pub struct PixelNet<F: Scalar> {
    pub spec: NetworkSpec,
    pub store: ParamStore<F>,
    encoder: PixelEncoder,
    decoder: PixelDecoder,
}

impl<F: Scalar> PixelNet<F> {
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let spec = spec.normalized()?;
        if spec.kind != NetworkKind::PixelNet {
            return Err(Error::config(format!("expected a pixel_net spec, got {:?}", spec.kind)));
        }
        let mut store = ParamStore::new();
        let mut rng = rng_from(seed);
        let encoder = PixelEncoder::new(&spec, &mut store, &mut rng);
        let decoder = PixelDecoder::new(&spec, "dec", &mut store, &mut rng);
        Ok(PixelNet { spec, store, encoder, decoder })
    }

    pub fn forward(&self, g: &mut Graph<F>, x: Var, train: bool) -> Var {
        let feats = self.encoder.forward(g, &self.store, x, train);
        self.decoder.forward(g, &self.store, &feats, train)
    }
}

// ---- AE-Net ----

struct AeEncBlock {
    conv: Conv3d,
    bn: BatchNorm3d,
    pool: [usize; 3],
}

struct AeDecBlock {
    tconv: ConvTranspose3d,
    conv: Conv3d,
    bn: BatchNorm3d,
}

pub struct AeNet<F: Scalar> {
    pub spec: NetworkSpec,
    pub store: ParamStore<F>,
    enc: Vec<AeEncBlock>,
    dec: Vec<AeDecBlock>,
    out: Conv3d,
}

impl<F: Scalar> AeNet<F> {
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let spec = spec.normalized()?;
        if spec.kind != NetworkKind::AeNet {
            return Err(Error::config(format!("expected an ae_net spec, got {:?}", spec.kind)));
        }
        let mut store = ParamStore::new();
        let mut rng = rng_from(seed);
        let ch = spec.encoder_channels();
        let s1 = [1, 1, 1];
        let mut enc = Vec::new();
        let mut prev = spec.in_channels;
        for (lvl, &c) in ch.iter().enumerate() {
            let conv = Conv3d::new(store_mut(&mut store), &format!("enc{}.conv", lvl + 1), prev, c, K3, s1, P1, true, &mut rng);
            let bn = BatchNorm3d::new(&mut store, &format!("enc{}.bn", lvl + 1), c, &mut rng);
            enc.push(AeEncBlock { conv, bn, pool: spec.depth_strides[lvl] });
            prev = c;
        }
        // decoder mirrors the encoder; channel floor is the base width
        let mut dec = Vec::new();
        for lvl in 0..4 {
            let c_in = prev;
            let c_out = if lvl < 3 { ch[2 - lvl] } else { ch[0] };
            let stride = spec.depth_strides[3 - lvl];
            let tconv = ConvTranspose3d::new(
                &mut store,
                &format!("dec{}.tconv", lvl + 1),
                c_in,
                c_out,
                K3,
                stride,
                P1,
                out_pad_for(stride),
                true,
                &mut rng,
            );
            let conv = Conv3d::new(&mut store, &format!("dec{}.conv", lvl + 1), c_out, c_out, K3, s1, P1, true, &mut rng);
            let bn = BatchNorm3d::new(&mut store, &format!("dec{}.bn", lvl + 1), c_out, &mut rng);
            dec.push(AeDecBlock { tconv, conv, bn });
            prev = c_out;
        }
        // linear head keeps the gate unbounded
        let out = Conv3d::new(&mut store, "out.conv", prev, 1, K3, s1, P1, true, &mut rng);
        Ok(AeNet { spec, store, enc, dec, out })
    }

    pub fn forward(&self, g: &mut Graph<F>, x: Var, train: bool) -> Var {
        let slope = F::of(self.spec.negative_slope);
        let mut cur = x;
        for block in &self.enc {
            let y = block.conv.forward(g, &self.store, cur);
            let y = block.bn.forward(g, &self.store, y, train);
            let y = g.leaky_relu(y, slope);
            cur = g.max_pool3d(y, block.pool);
        }
        for block in &self.dec {
            let y = block.tconv.forward(g, &self.store, cur);
            let y = block.conv.forward(g, &self.store, y);
            let y = block.bn.forward(g, &self.store, y, train);
            cur = g.relu(y);
        }
        self.out.forward(g, &self.store, cur)
    }
}

// borrow helper so the first builder line reads like the rest
fn store_mut<F: Scalar>(s: &mut ParamStore<F>) -> &mut ParamStore<F> {
    s
}

// ---- Discriminator ----

pub struct Discriminator<F: Scalar> {
    pub spec: NetworkSpec,
    pub store: ParamStore<F>,
    blocks: Vec<(Conv3d, Option<BatchNorm3d>)>,
}

impl<F: Scalar> Discriminator<F> {
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let spec = spec.normalized()?;
        if spec.kind != NetworkKind::Discriminator {
            return Err(Error::config(format!(
                "expected a discriminator spec, got {:?}",
                spec.kind
            )));
        }
        let mut store = ParamStore::new();
        let mut rng = rng_from(seed);
        let c = spec.base_channels;
        let widths = [c, 2 * c, 4 * c, 8 * c, 1];
        let mut blocks = Vec::new();
        let mut prev = spec.in_channels;
        for (lvl, &w) in widths.iter().enumerate() {
            let conv = Conv3d::new(
                &mut store,
                &format!("block{}.conv", lvl + 1),
                prev,
                w,
                K3,
                spec.depth_strides[lvl],
                P1,
                true,
                &mut rng,
            );
            // BN after a sigmoid would break the (0,1) score contract
            let bn = (lvl < 4)
                .then(|| BatchNorm3d::new(&mut store, &format!("block{}.bn", lvl + 1), w, &mut rng));
            blocks.push((conv, bn));
            prev = w;
        }
        Ok(Discriminator { spec, store, blocks })
    }

    /// Score a (conditioning input, candidate) pair. Returns the sigmoid map
    /// and the per-sample scalar score `[N]` (its mean).
    pub fn forward(&self, g: &mut Graph<F>, v_l: Var, candidate: Var, train: bool) -> (Var, Var) {
        let slope = F::of(self.spec.negative_slope);
        let mut cur = g.concat_channels(&[v_l, candidate]);
        for (lvl, (conv, bn)) in self.blocks.iter().enumerate() {
            cur = conv.forward(g, &self.store, cur);
            if lvl < 4 {
                cur = g.leaky_relu(cur, slope);
                if let Some(bn) = bn {
                    cur = bn.forward(g, &self.store, cur, train);
                }
            } else {
                cur = g.sigmoid(cur);
            }
        }
        let score = g.per_sample_mean(cur);
        (cur, score)
    }
}

// ---- SSP model: shared encoder + four heads ----

pub struct SspOutputs {
    pub drl_logits: Var,
    pub rotation_logits: Var,
    pub cpc_codes: Var,
    pub restored: Var,
}

pub struct SspModel<F: Scalar> {
    pub spec: NetworkSpec,
    pub store: ParamStore<F>,
    encoder: PixelEncoder,
    drl_fc1: Linear,
    drl_fc2: Linear,
    rot_fc: Linear,
    cpc_fc: Linear,
    restoration: PixelDecoder,
}

impl<F: Scalar> SspModel<F> {
    pub fn new(encoder_spec: NetworkSpec, seed: u64) -> Result<Self> {
        let spec = encoder_spec.normalized()?;
        if spec.kind != NetworkKind::PixelNet {
            return Err(Error::config(format!(
                "pretraining heads attach to a pixel_net encoder, got {:?}",
                spec.kind
            )));
        }
        let mut store = ParamStore::new();
        let mut rng = rng_from(seed);
        let encoder = PixelEncoder::new(&spec, &mut store, &mut rng);
        let ch = spec.encoder_channels();
        let multi: usize = ch.iter().sum();
        let bottom = ch[4];
        let drl_fc1 = Linear::new(&mut store, "drl.fc1", multi, DRL_HIDDEN, &mut rng);
        let drl_fc2 = Linear::new(&mut store, "drl.fc2", DRL_HIDDEN, DRL_CLASSES, &mut rng);
        let rot_fc = Linear::new(&mut store, "rot.fc", bottom, ROTATION_CLASSES, &mut rng);
        let cpc_fc = Linear::new(&mut store, "cpc.fc", bottom, CPC_CODE_DIM, &mut rng);
        let restoration = PixelDecoder::new(&spec, "rest", &mut store, &mut rng);
        Ok(SspModel { spec, store, encoder, drl_fc1, drl_fc2, rot_fc, cpc_fc, restoration })
    }

    pub fn forward(&self, g: &mut Graph<F>, x: Var, train: bool) -> SspOutputs {
        let feats = self.encoder.forward(g, &self.store, x, train);
        let pooled: Vec<Var> = feats.iter().map(|&f| g.global_avg_pool(f)).collect();
        let multi = g.concat_channels(&pooled);
        let h = self.drl_fc1.forward(g, &self.store, multi);
        let h = g.relu(h);
        let drl_logits = self.drl_fc2.forward(g, &self.store, h);
        let bottom = pooled[4];
        let rotation_logits = self.rot_fc.forward(g, &self.store, bottom);
        let cpc_codes = self.cpc_fc.forward(g, &self.store, bottom);
        let restored = self.restoration.forward(g, &self.store, &feats, train);
        SspOutputs { drl_logits, rotation_logits, cpc_codes, restored }
    }
}

// ---- checkpoints ----

const CKPT_MAGIC: &[u8; 8] = b"AEGANCK1";
const CKPT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CkptHeader {
    version: u32,
    meta: serde_json::Value,
    sections: Vec<CkptSectionHeader>,
}

#[derive(Serialize, Deserialize)]
struct CkptSectionHeader {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spec: Option<NetworkSpec>,
    params: Vec<CkptParamHeader>,
}

#[derive(Serialize, Deserialize)]
struct CkptParamHeader {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

pub struct SectionRef<'a, F: Scalar> {
    pub name: &'a str,
    pub spec: Option<&'a NetworkSpec>,
    pub store: &'a ParamStore<F>,
}

/// Write weights (and optional spec echoes) as one binary blob: magic,
/// version, JSON header, then every tensor as little-endian f32 in header
/// order.
pub fn save_checkpoint<F: Scalar>(
    path: &Path,
    meta: serde_json::Value,
    sections: &[SectionRef<'_, F>],
) -> Result<()> {
    let header = CkptHeader {
        version: CKPT_VERSION,
        meta,
        sections: sections
            .iter()
            .map(|s| CkptSectionHeader {
                name: s.name.to_string(),
                spec: s.spec.cloned(),
                params: s
                    .store
                    .entries()
                    .map(|(_, e)| CkptParamHeader {
                        name: e.name.clone(),
                        shape: e.value.shape().to_vec(),
                        trainable: e.trainable,
                    })
                    .collect(),
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::checkpoint(format!("header encode: {e}")))?;
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    w.write_u32::<LittleEndian>(CKPT_VERSION)?;
    w.write_u64::<LittleEndian>(header_bytes.len() as u64)?;
    w.write_all(&header_bytes)?;
    for s in sections {
        for (_, e) in s.store.entries() {
            for &v in e.value.data() {
                w.write_f32::<LittleEndian>(v.as_f64() as f32)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub struct LoadedParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub data: Vec<f32>,
}

pub struct LoadedSection {
    pub name: String,
    pub spec: Option<NetworkSpec>,
    pub params: Vec<LoadedParam>,
}

pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub sections: Vec<LoadedSection>,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::checkpoint(format!("{}: too short for a checkpoint", path.display())))?;
        if &magic != CKPT_MAGIC {
            return Err(Error::checkpoint(format!(
                "{}: bad magic, not a checkpoint file",
                path.display()
            )));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != CKPT_VERSION {
            return Err(Error::checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let header_len = r.read_u64::<LittleEndian>()? as usize;
        let mut header_bytes = vec![0u8; header_len];
        r.read_exact(&mut header_bytes)
            .map_err(|_| Error::checkpoint("truncated checkpoint header"))?;
        let header: CkptHeader = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::checkpoint(format!("header decode: {e}")))?;
        let mut sections = Vec::new();
        for sh in header.sections {
            let mut params = Vec::new();
            for ph in sh.params {
                let n: usize = ph.shape.iter().product();
                let mut data = vec![0f32; n];
                r.read_f32_into::<LittleEndian>(&mut data).map_err(|_| {
                    Error::checkpoint(format!("truncated payload at parameter {:?}", ph.name))
                })?;
                params.push(LoadedParam { name: ph.name, shape: ph.shape, trainable: ph.trainable, data });
            }
            sections.push(LoadedSection { name: sh.name, spec: sh.spec, params });
        }
        Ok(Checkpoint { meta: header.meta, sections })
    }

    pub fn section(&self, name: &str) -> Result<&LoadedSection> {
        self.sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::checkpoint(format!("checkpoint has no section {name:?}")))
    }
}

impl LoadedSection {
    fn find(&self, name: &str) -> Option<&LoadedParam> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Overwrite every entry of `store` from same-named parameters.
    pub fn load_into<F: Scalar>(&self, store: &mut ParamStore<F>) -> Result<()> {
        self.load_prefix_into(store, "").map(|_| ())
    }

    /// Overwrite the entries of `store` whose names start with `prefix`
    /// (e.g. `"enc."` to warm-start an encoder). Every matching entry must
    /// exist in the section with an identical shape.
    pub fn load_prefix_into<F: Scalar>(
        &self,
        store: &mut ParamStore<F>,
        prefix: &str,
    ) -> Result<usize> {
        let wanted: Vec<_> = store
            .entries()
            .filter(|(_, e)| e.name.starts_with(prefix))
            .map(|(id, e)| (id, e.name.clone(), e.value.shape().to_vec()))
            .collect();
        if wanted.is_empty() {
            return Err(Error::checkpoint(format!("no parameters match prefix {prefix:?}")));
        }
        let mut staged = Vec::with_capacity(wanted.len());
        for (id, name, shape) in wanted {
            let p = self.find(&name).ok_or_else(|| {
                Error::checkpoint(format!("section {:?} lacks parameter {name:?}", self.name))
            })?;
            if p.shape != shape {
                return Err(Error::checkpoint(format!(
                    "parameter {name:?} shape mismatch: checkpoint {:?}, store {shape:?}",
                    p.shape
                )));
            }
            let t = Tensor::new(shape, p.data.iter().map(|&v| F::of(v as f64)).collect());
            staged.push((id, t));
        }
        let n = staged.len();
        for (id, t) in staged {
            store.set_value(id, t);
        }
        Ok(n)
    }
}
