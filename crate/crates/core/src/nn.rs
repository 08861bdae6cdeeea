//! Parameter storage and the layer vocabulary the networks are built from.
//!
//! A [`ParamStore`] owns every tensor of one network. Layers keep only
//! [`ParamId`] handles plus hyperparameters, so a forward pass borrows the
//! store immutably while the optimizer later mutates it in place. Each store
//! carries a process-unique id; the graph uses `(store uid, param id)` as its
//! cache key so a parameter used twice in one graph accumulates both
//! gradient contributions.

use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;
use std::sync::atomic::{AtomicU64, Ordering};

static STORE_COUNTER: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

pub struct ParamEntry<F: Scalar> {
    pub name: String,
    pub value: Tensor<F>,
    /// Running statistics live in the store but never receive gradients.
    pub trainable: bool,
}

pub struct ParamStore<F: Scalar> {
    uid: u64,
    entries: Vec<ParamEntry<F>>,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { uid: STORE_COUNTER.fetch_add(1, Ordering::Relaxed), entries: Vec::new() }
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name:?}"
        );
        self.entries.push(ParamEntry { name, value, trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<F> {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor<F>) {
        assert_eq!(
            self.entries[id.0].value.shape(),
            value.shape(),
            "shape change for parameter {:?}",
            self.entries[id.0].name
        );
        self.entries[id.0].value = value;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<F>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Total scalar count over trainable parameters.
    pub fn trainable_scalars(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.numel()).sum()
    }

    /// Apply deferred running-statistic writes collected by a graph. Entries
    /// addressed at other stores are skipped, so one list can be replayed
    /// against every store that took part in the step.
    pub fn apply_stat_updates(&mut self, updates: &[(u64, ParamId, Tensor<F>)]) {
        for (uid, id, value) in updates {
            if *uid == self.uid {
                self.set_value(*id, value.clone());
            }
        }
    }
}

/// Gaussian-initialized tensor, the scheme every layer here uses.
pub fn init_normal<F: Scalar>(
    shape: &[usize],
    mean: f64,
    std: f64,
    rng: &mut ChaCha8Rng,
) -> Tensor<F> {
    Tensor::randn(shape, mean, std, rng)
}

pub const INIT_STD: f64 = 0.02;

pub struct Conv3d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl Conv3d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        pad: [usize; 3],
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w_shape = [c_out, c_in, kernel[0], kernel[1], kernel[2]];
        let w = store.add(format!("{name}.w"), init_normal(&w_shape, 0.0, INIT_STD, rng), true);
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[c_out]), true));
        Conv3d { w, b, stride, pad }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, store: &ParamStore<F>, x: Var) -> Var {
        let w = g.param(store, self.w);
        let y = g.conv3d(x, w, self.stride, self.pad);
        match self.b {
            Some(b) => {
                let bv = g.param(store, b);
                g.add_channel(y, bv)
            }
            None => y,
        }
    }
}

pub struct ConvTranspose3d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub out_pad: [usize; 3],
}

impl ConvTranspose3d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        pad: [usize; 3],
        out_pad: [usize; 3],
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w_shape = [c_in, c_out, kernel[0], kernel[1], kernel[2]];
        let w = store.add(format!("{name}.w"), init_normal(&w_shape, 0.0, INIT_STD, rng), true);
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[c_out]), true));
        ConvTranspose3d { w, b, stride, pad, out_pad }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, store: &ParamStore<F>, x: Var) -> Var {
        let w = g.param(store, self.w);
        let y = g.conv_transpose3d(x, w, self.stride, self.pad, self.out_pad);
        match self.b {
            Some(b) => {
                let bv = g.param(store, b);
                g.add_channel(y, bv)
            }
            None => y,
        }
    }
}

pub struct BatchNorm3d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm3d {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        channels: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let gamma =
            store.add(format!("{name}.gamma"), init_normal(&[channels], 1.0, INIT_STD, rng), true);
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[channels]), true);
        let running_mean =
            store.add(format!("{name}.running_mean"), Tensor::zeros(&[channels]), false);
        let running_var =
            store.add(format!("{name}.running_var"), Tensor::full(&[channels], F::one()), false);
        BatchNorm3d { gamma, beta, running_mean, running_var, momentum: 0.1, eps: 1e-5 }
    }

    /// Training mode normalizes with biased batch statistics and defers the
    /// exponential running-average update onto the graph; eval mode uses the
    /// stored running statistics as constants.
    pub fn forward<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: Var,
        train: bool,
    ) -> Var {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let xn = if train {
            let mean = g.channel_mean(x);
            let xc = g.sub_channel(x, mean);
            let sq = g.mul(xc, xc);
            let var = g.channel_mean(sq);
            let m = F::of(self.momentum);
            let keep = F::one() - m;
            let new_rm = store
                .value(self.running_mean)
                .zip_map(g.value(mean), |r, b| r * keep + b * m);
            let new_rv =
                store.value(self.running_var).zip_map(g.value(var), |r, b| r * keep + b * m);
            g.defer_stat_update(store.uid(), self.running_mean, new_rm);
            g.defer_stat_update(store.uid(), self.running_var, new_rv);
            let veps = g.add_scalar(var, F::of(self.eps));
            let std = g.sqrt(veps);
            g.div_channel(xc, std)
        } else {
            let eps = F::of(self.eps);
            let rm = g.constant(store.value(self.running_mean).clone());
            let sd = g.constant(store.value(self.running_var).map(|v| (v + eps).sqrt()));
            let xc = g.sub_channel(x, rm);
            g.div_channel(xc, sd)
        };
        let scaled = g.mul_channel(xn, gamma);
        g.add_channel(scaled, beta)
    }
}

pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = store.add(format!("{name}.w"), init_normal(&[d_in, d_out], 0.0, INIT_STD, rng), true);
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[d_out]), true);
        Linear { w, b }
    }

    /// `[N, d_in] -> [N, d_out]`.
    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, store: &ParamStore<F>, x: Var) -> Var {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.matmul(x, w);
        g.add_channel(y, b)
    }
}
