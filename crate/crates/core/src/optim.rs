//! First-order optimizers and the learning-rate schedule shared by both
//! training stages.

use crate::error::{Error, Result};
use crate::graph::Grads;
use crate::nn::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Adam with optional decoupled weight decay (AdamW). Moment buffers are
/// indexed by parameter id, so one optimizer serves exactly one store.
pub struct Adam<F: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// `true` applies decay directly to the weights (AdamW); `false` folds
    /// it into the gradient (classic L2).
    pub decoupled: bool,
    t: u64,
    m: Vec<Option<Tensor<F>>>,
    v: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Adam<F> {
    /// Plain Adam; the adversarial stage runs `beta1 = 0.5`.
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay: 0.0,
            decoupled: false,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        Adam { weight_decay, decoupled: true, ..Adam::new(lr, 0.9, 0.999) }
    }

    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &Grads<F>) {
        self.t += 1;
        if self.m.len() < store.len() {
            self.m.resize_with(store.len(), || None);
            self.v.resize_with(store.len(), || None);
        }
        let lr = F::of(self.lr);
        let b1 = F::of(self.beta1);
        let b2 = F::of(self.beta2);
        let eps = F::of(self.eps);
        let wd = F::of(self.weight_decay);
        let bc1 = F::one() - F::of(self.beta1.powi(self.t as i32));
        let bc2 = F::one() - F::of(self.beta2.powi(self.t as i32));
        let mut staged = Vec::new();
        for (id, entry) in store.entries() {
            if !entry.trainable {
                continue;
            }
            let Some(g) = grads.for_param(store, id) else { continue };
            let mut g = g.clone();
            if self.weight_decay != 0.0 && !self.decoupled {
                g = g.zip_map(&entry.value, |gv, w| gv + wd * w);
            }
            let m = match &self.m[id.0] {
                Some(prev) => prev.zip_map(&g, |mp, gv| mp * b1 + gv * (F::one() - b1)),
                None => g.map(|gv| gv * (F::one() - b1)),
            };
            let v = match &self.v[id.0] {
                Some(prev) => prev.zip_map(&g, |vp, gv| vp * b2 + gv * gv * (F::one() - b2)),
                None => g.map(|gv| gv * gv * (F::one() - b2)),
            };
            let mut new_val = entry.value.clone();
            {
                let out = new_val.data_mut();
                let md = m.data();
                let vd = v.data();
                for i in 0..out.len() {
                    let mhat = md[i] / bc1;
                    let vhat = vd[i] / bc2;
                    let mut w = out[i];
                    if self.weight_decay != 0.0 && self.decoupled {
                        w -= lr * wd * w;
                    }
                    out[i] = w - lr * mhat / (vhat.sqrt() + eps);
                }
            }
            staged.push((id, m, v, new_val));
        }
        for (id, m, v, new_val) in staged {
            self.m[id.0] = Some(m);
            self.v[id.0] = Some(v);
            store.set_value(id, new_val);
        }
    }

    /// Step counter, for embedding optimizer state in a checkpoint.
    pub fn t(&self) -> u64 {
        self.t
    }

    /// Moment buffers as a synthetic store (`m.<name>` / `v.<name>` per
    /// parameter of `store`), ready to be written as a checkpoint section.
    /// Parameters that have never been stepped are omitted.
    pub fn export_moments(&self, store: &ParamStore<F>) -> ParamStore<F> {
        let mut out = ParamStore::new();
        for (id, e) in store.entries() {
            if let Some(Some(m)) = self.m.get(id.0) {
                out.add(format!("m.{}", e.name), m.clone(), false);
            }
            if let Some(Some(v)) = self.v.get(id.0) {
                out.add(format!("v.{}", e.name), v.clone(), false);
            }
        }
        out
    }

    /// Restore moment buffers captured by [`Adam::export_moments`], matching
    /// them to `store` by parameter name, and resume at step count `t`.
    /// Moments absent from the snapshot stay unset (fresh-parameter start).
    pub fn import_moments(
        &mut self,
        store: &ParamStore<F>,
        snapshot: &ParamStore<F>,
        t: u64,
    ) -> Result<()> {
        let mut m: Vec<Option<Tensor<F>>> = vec![None; store.len()];
        let mut v: Vec<Option<Tensor<F>>> = vec![None; store.len()];
        for (id, e) in store.entries() {
            for (slot, prefix) in [(&mut m, "m."), (&mut v, "v.")] {
                let key = format!("{prefix}{}", e.name);
                let Some(sid) = snapshot.find(&key) else { continue };
                let buf = snapshot.value(sid);
                if buf.shape() != e.value.shape() {
                    return Err(Error::checkpoint(format!(
                        "optimizer moment {key:?} shape {:?} does not match parameter shape {:?}",
                        buf.shape(),
                        e.value.shape()
                    )));
                }
                slot[id.0] = Some(buf.clone());
            }
        }
        self.m = m;
        self.v = v;
        self.t = t;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrDecision {
    Continue,
    /// Carry on with this reduced rate.
    Reduce(f64),
    /// The next reduction would fall below the floor: stop training.
    Stop,
}

/// Reduce-on-plateau: after `patience` consecutive epochs without a new best
/// validation loss, scale the rate by `factor`; once a reduction would drop
/// below `min_lr`, stop.
pub struct ReduceOnPlateau {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl ReduceOnPlateau {
    pub fn new(factor: f64, patience: usize, min_lr: f64) -> Self {
        ReduceOnPlateau { factor, patience, min_lr, best: f64::INFINITY, bad_epochs: 0 }
    }

    pub fn observe(&mut self, val_loss: f64, current_lr: f64) -> LrDecision {
        if val_loss < self.best {
            self.best = val_loss;
            self.bad_epochs = 0;
            return LrDecision::Continue;
        }
        self.bad_epochs += 1;
        if self.bad_epochs < self.patience {
            return LrDecision::Continue;
        }
        self.bad_epochs = 0;
        let next = current_lr * self.factor;
        if next < self.min_lr {
            LrDecision::Stop
        } else {
            LrDecision::Reduce(next)
        }
    }
}
