//! Reverse-mode autodiff on a flat tape. Each training step builds a fresh
//! graph: parameters enter as cached leaves, every op records a backward
//! closure capturing what it needs (cheap `Arc` clones), and `backward` walks
//! the tape once. Nodes that cannot influence any differentiable leaf carry
//! no closure, so inference-mode forwards cost nothing extra.
//!
//! Parallel kernels partition their output exclusively between tasks, which
//! keeps every result bit-identical no matter how many threads run.

mod conv;

use crate::nn::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::collections::{HashMap, HashSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

type Backward<F> = Box<dyn Fn(&Tensor<F>) -> Vec<Option<Tensor<F>>>>;

struct Node<F: Scalar> {
    value: Tensor<F>,
    parents: Vec<usize>,
    backward: Option<Backward<F>>,
    requires_grad: bool,
}

pub struct Graph<F: Scalar> {
    nodes: Vec<Node<F>>,
    param_cache: HashMap<(u64, usize), Var>,
    frozen: HashSet<u64>,
    stat_updates: Vec<(u64, ParamId, Tensor<F>)>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            param_cache: HashMap::new(),
            frozen: HashSet::new(),
            stat_updates: Vec::new(),
        }
    }

    /// Parameters of a frozen store enter the graph as constants; their
    /// gradients are neither computed nor stored. Call before the first use
    /// of the store in this graph.
    pub fn freeze_store(&mut self, uid: u64) {
        self.frozen.insert(uid);
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape_of(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<F>, parents: Vec<usize>, backward: Option<Backward<F>>) -> Var {
        let requires_grad = backward.is_some();
        self.nodes.push(Node { value, parents, backward, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Leaf with no gradient.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, vec![], None)
    }

    /// Differentiable leaf (network inputs under a gradient check, targets
    /// never need this).
    pub fn input(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node { value, parents: vec![], backward: None, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Bring a parameter into the graph, once; repeated uses share the node
    /// so gradient contributions accumulate.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        let key = (store.uid(), id.0);
        if let Some(&v) = self.param_cache.get(&key) {
            return v;
        }
        let entry = store.entry(id);
        let requires = entry.trainable && !self.frozen.contains(&store.uid());
        let v = if requires {
            self.input(entry.value.clone())
        } else {
            self.constant(entry.value.clone())
        };
        self.param_cache.insert(key, v);
        v
    }

    /// Record a running-statistic write to apply after the step (forward
    /// passes only borrow stores immutably).
    pub fn defer_stat_update(&mut self, store_uid: u64, id: ParamId, value: Tensor<F>) {
        self.stat_updates.push((store_uid, id, value));
    }

    pub fn take_stat_updates(&mut self) -> Vec<(u64, ParamId, Tensor<F>)> {
        std::mem::take(&mut self.stat_updates)
    }

    /// Backpropagate from a scalar loss. Returns per-variable gradients;
    /// parameter gradients are fetched through the cache mapping.
    pub fn backward(&mut self, loss: Var) -> Grads<F> {
        assert_eq!(self.nodes[loss.0].value.numel(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), F::one()));
            for id in (0..=loss.0).rev() {
                if grads[id].is_none() || self.nodes[id].backward.is_none() {
                    continue;
                }
                let g = grads[id].clone().unwrap();
                let node = &self.nodes[id];
                let parent_grads = (node.backward.as_ref().unwrap())(&g);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (p, pg) in node.parents.clone().into_iter().zip(parent_grads) {
                    if let Some(pg) = pg {
                        if !self.nodes[p].requires_grad {
                            continue;
                        }
                        debug_assert_eq!(pg.shape(), self.nodes[p].value.shape());
                        match &mut grads[p] {
                            Some(acc) => acc.add_in_place(&pg),
                            slot => *slot = Some(pg),
                        }
                    }
                }
            }
        }
        Grads { grads, params: self.param_cache.clone() }
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        let y = va.zip_map(vb, |x, y| x + y);
        let need = [self.requires(a), self.requires(b)];
        let back: Option<Backward<F>> = if need[0] || need[1] {
            Some(Box::new(move |g| {
                vec![
                    need[0].then(|| g.clone()),
                    need[1].then(|| g.clone()),
                ]
            }))
        } else {
            None
        };
        self.push(y, vec![a.0, b.0], back)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "sub shape mismatch");
        let y = va.zip_map(vb, |x, y| x - y);
        let need = [self.requires(a), self.requires(b)];
        let back: Option<Backward<F>> = if need[0] || need[1] {
            Some(Box::new(move |g| {
                vec![
                    need[0].then(|| g.clone()),
                    need[1].then(|| g.map(|v| -v)),
                ]
            }))
        } else {
            None
        };
        self.push(y, vec![a.0, b.0], back)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a).clone(), self.value(b).clone());
        assert_eq!(va.shape(), vb.shape(), "mul shape mismatch");
        let y = va.zip_map(&vb, |x, y| x * y);
        let need = [self.requires(a), self.requires(b)];
        let back: Option<Backward<F>> = if need[0] || need[1] {
            Some(Box::new(move |g| {
                vec![
                    need[0].then(|| g.zip_map(&vb, |gv, y| gv * y)),
                    need[1].then(|| g.zip_map(&va, |gv, x| gv * x)),
                ]
            }))
        } else {
            None
        };
        self.push(y, vec![a.0, b.0], back)
    }

    pub fn add_scalar(&mut self, a: Var, c: F) -> Var {
        let y = self.value(a).map(|x| x + c);
        let need = self.requires(a);
        let back: Option<Backward<F>> =
            need.then(|| Box::new(move |g: &Tensor<F>| vec![Some(g.clone())]) as Backward<F>);
        self.push(y, vec![a.0], back)
    }

    pub fn mul_scalar(&mut self, a: Var, c: F) -> Var {
        let y = self.value(a).map(|x| x * c);
        let need = self.requires(a);
        let back: Option<Backward<F>> =
            need.then(|| Box::new(move |g: &Tensor<F>| vec![Some(g.map(|v| v * c))]) as Backward<F>);
        self.push(y, vec![a.0], back)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let va = self.value(a).clone();
        let y = va.map(|x| x.abs());
        let need = self.requires(a);
        let back: Option<Backward<F>> = need.then(|| {
            Box::new(move |g: &Tensor<F>| {
                vec![Some(g.zip_map(&va, |gv, x| {
                    if x > F::zero() {
                        gv
                    } else if x < F::zero() {
                        -gv
                    } else {
                        F::zero()
                    }
                }))]
            }) as Backward<F>
        });
        self.push(y, vec![a.0], back)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let y = self.value(a).map(|x| x.sqrt());
        let yc = y.clone();
        let need = self.requires(a);
        let back: Option<Backward<F>> = need.then(|| {
            Box::new(move |g: &Tensor<F>| {
                vec![Some(g.zip_map(&yc, |gv, s| gv * F::half() / s))]
            }) as Backward<F>
        });
        self.push(y, vec![a.0], back)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let y = self.value(a).map(|x| F::one() / x);
        let yc = y.clone();
        let need = self.requires(a);
        let back: Option<Backward<F>> = need.then(|| {
            Box::new(move |g: &Tensor<F>| {
                vec![Some(g.zip_map(&yc, |gv, inv| -gv * inv * inv))]
            }) as Backward<F>
        });
        self.push(y, vec![a.0], back)
    }

    // ---- activations ----

    pub fn relu(&mut self, a: Var) -> Var {
        let va = self.value(a).clone();
        let y = va.map(|x| x.max(F::zero()));
        let need = self.requires(a);
        let back: Option<Backward<F>> = need.then(|| {
            Box::new(move |g: &Tensor<F>| {
                vec![Some(g.zip_map(&va, |gv, x| if x > F::zero() { gv } else { F::zero() }))]
            }) as Backward<F>
        });
        self.push(y, vec![a.0], back)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: F) -> Var {
        let va = self.value(a).clone();
        let y = va.map(|x| if x > F::zero() { x } else { x * slope });
        let need = self.requires(a);
        let back: Option<Backward<F>> = need.then(|| {
            Box::new(move |g: &Tensor<F>| {
                vec![Some(g.zip_map(&va, |gv, x| if x > F::zero() { gv } else { gv * slope }))]
            }) as Backward<F>
        });
        self.push(y, vec![a.0], back)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = self.value(a).map(|x| F::one() / (F::one() + (-x).exp()));
        let yc = y.clone();
        let need = self.requires(a);
        let back: Option<Backward<F>> = need.then(|| {
            Box::new(move |g: &Tensor<F>| {
                vec![Some(g.zip_map(&yc, |gv, s| gv * s * (F::one() - s)))]
            }) as Backward<F>
        });
        self.push(y, vec![a.0], back)
    }

    // ---- reductions / broadcasts ----

    pub fn mean_all(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let n = va.numel();
        let inv = F::of(1.0 / n as f64);
        let y = Tensor::scalar(va.sum() * inv);
        let shape = va.shape().to_vec();
        let need = self.requires(a);
        let back: Option<Backward<F>> = need.then(|| {
            Box::new(move |g: &Tensor<F>| {
                vec![Some(Tensor::full(&shape, g.item() * inv))]
            }) as Backward<F>
        });
        self.push(y, vec![a.0], back)
    }

    /// Mean over every non-batch axis: `[N, ...] -> [N]`.
    pub fn per_sample_mean(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let shape = va.shape().to_vec();
        assert!(shape.len() >= 2, "per_sample_mean needs a batch axis");
        let n = shape[0];
        let rest: usize = shape[1..].iter().product();
        let inv = F::of(1.0 / rest as f64);
        let mut out = vec![F::zero(); n];
        for (i, chunk) in va.data().chunks_exact(rest).enumerate() {
            out[i] = chunk.iter().copied().sum::<F>() * inv;
        }
        let y = Tensor::new(vec![n], out);
        let need = self.requires(a);
        let back: Option<Backward<F>> = need.then(|| {
            Box::new(move |g: &Tensor<F>| {
                let mut dx = vec![F::zero(); n * rest];
                for (i, chunk) in dx.chunks_exact_mut(rest).enumerate() {
                    let gv = g.data()[i] * inv;
                    chunk.fill(gv);
                }
                vec![Some(Tensor::new(shape.clone(), dx))]
            }) as Backward<F>
        });
        self.push(y, vec![a.0], back)
    }

    /// Global average pool: `[N, C, ...] -> [N, C]`.
    pub fn global_avg_pool(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let shape = va.shape().to_vec();
        assert!(shape.len() >= 3, "global_avg_pool needs spatial axes");
        let (n, c) = (shape[0], shape[1]);
        let sp: usize = shape[2..].iter().product();
        let inv = F::of(1.0 / sp as f64);
        let mut out = vec![F::zero(); n * c];
        for (i, chunk) in va.data().chunks_exact(sp).enumerate() {
            out[i] = chunk.iter().copied().sum::<F>() * inv;
        }
        let y = Tensor::new(vec![n, c], out);
        let need = self.requires(a);
        let back: Option<Backward<F>> = need.then(|| {
            Box::new(move |g: &Tensor<F>| {
                let mut dx = vec![F::zero(); n * c * sp];
                for (i, chunk) in dx.chunks_exact_mut(sp).enumerate() {
                    chunk.fill(g.data()[i] * inv);
                }
                vec![Some(Tensor::new(shape.clone(), dx))]
            }) as Backward<F>
        });
        self.push(y, vec![a.0], back)
    }

    // ---- channel broadcasts: `[N, C, ...] op [C]` ----

    fn channel_geometry(&self, a: Var, c_var: Var) -> (usize, usize, usize) {
        let shape = self.shape_of(a);
        assert!(shape.len() >= 2, "channel ops need [N, C, ...]");
        let (n, c) = (shape[0], shape[1]);
        let sp: usize = shape[2..].iter().product();
        assert_eq!(self.shape_of(c_var), &[c], "channel vector must be [C]");
        (n, c, sp)
    }

    pub fn add_channel(&mut self, a: Var, bias: Var) -> Var {
        let (n, c, sp) = self.channel_geometry(a, bias);
        let vb = self.value(bias).clone();
        let va = self.value(a);
        let mut out = va.data().to_vec();
        for i in 0..n * c {
            let b = vb.data()[i % c];
            for v in &mut out[i * sp..(i + 1) * sp] {
                *v += b;
            }
        }
        let y = Tensor::new(va.shape().to_vec(), out);
        let need = [self.requires(a), self.requires(bias)];
        let back: Option<Backward<F>> = (need[0] || need[1]).then(|| {
            Box::new(move |g: &Tensor<F>| {
                let gb = need[1].then(|| Tensor::new(vec![c], channel_sums(g.data(), n, c, sp)));
                vec![need[0].then(|| g.clone()), gb]
            }) as Backward<F>
        });
        self.push(y, vec![a.0, bias.0], back)
    }

    pub fn sub_channel(&mut self, a: Var, m: Var) -> Var {
        let (n, c, sp) = self.channel_geometry(a, m);
        let vm = self.value(m).clone();
        let va = self.value(a);
        let mut out = va.data().to_vec();
        for i in 0..n * c {
            let b = vm.data()[i % c];
            for v in &mut out[i * sp..(i + 1) * sp] {
                *v -= b;
            }
        }
        let y = Tensor::new(va.shape().to_vec(), out);
        let need = [self.requires(a), self.requires(m)];
        let back: Option<Backward<F>> = (need[0] || need[1]).then(|| {
            Box::new(move |g: &Tensor<F>| {
                let gm = need[1].then(|| {
                    let mut s = channel_sums(g.data(), n, c, sp);
                    for v in &mut s {
                        *v = -*v;
                    }
                    Tensor::new(vec![c], s)
                });
                vec![need[0].then(|| g.clone()), gm]
            }) as Backward<F>
        });
        self.push(y, vec![a.0, m.0], back)
    }

    pub fn mul_channel(&mut self, a: Var, s: Var) -> Var {
        let (n, c, sp) = self.channel_geometry(a, s);
        let vs = self.value(s).clone();
        let va = self.value(a).clone();
        let mut out = va.data().to_vec();
        for i in 0..n * c {
            let k = vs.data()[i % c];
            for v in &mut out[i * sp..(i + 1) * sp] {
                *v *= k;
            }
        }
        let y = Tensor::new(va.shape().to_vec(), out);
        let need = [self.requires(a), self.requires(s)];
        let back: Option<Backward<F>> = (need[0] || need[1]).then(|| {
            Box::new(move |g: &Tensor<F>| {
                let ga = need[0].then(|| {
                    let mut dx = g.data().to_vec();
                    for i in 0..n * c {
                        let k = vs.data()[i % c];
                        for v in &mut dx[i * sp..(i + 1) * sp] {
                            *v *= k;
                        }
                    }
                    Tensor::new(g.shape().to_vec(), dx)
                });
                let gs = need[1].then(|| {
                    let prod: Vec<F> =
                        g.data().iter().zip(va.data().iter()).map(|(&gv, &x)| gv * x).collect();
                    Tensor::new(vec![c], channel_sums(&prod, n, c, sp))
                });
                vec![ga, gs]
            }) as Backward<F>
        });
        self.push(y, vec![a.0, s.0], back)
    }

    pub fn div_channel(&mut self, a: Var, s: Var) -> Var {
        let inv = self.recip(s);
        self.mul_channel(a, inv)
    }

    /// Per-channel mean over batch and spatial axes: `[N, C, ...] -> [C]`.
    pub fn channel_mean(&mut self, a: Var) -> Var {
        let shape = self.shape_of(a).to_vec();
        assert!(shape.len() >= 2);
        let (n, c) = (shape[0], shape[1]);
        let sp: usize = shape[2..].iter().product();
        let inv = F::of(1.0 / (n * sp) as f64);
        let sums = channel_sums(self.value(a).data(), n, c, sp);
        let y = Tensor::new(vec![c], sums.into_iter().map(|v| v * inv).collect());
        let need = self.requires(a);
        let back: Option<Backward<F>> = need.then(|| {
            Box::new(move |g: &Tensor<F>| {
                let mut dx = vec![F::zero(); n * c * sp];
                for i in 0..n * c {
                    let gv = g.data()[i % c] * inv;
                    dx[i * sp..(i + 1) * sp].fill(gv);
                }
                vec![Some(Tensor::new(shape.clone(), dx))]
            }) as Backward<F>
        });
        self.push(y, vec![a.0], back)
    }

    // ---- row broadcasts: `[N, D] op [N]` ----

    pub fn row_sum(&mut self, a: Var) -> Var {
        let shape = self.shape_of(a).to_vec();
        assert_eq!(shape.len(), 2, "row_sum needs [N, D]");
        let (n, d) = (shape[0], shape[1]);
        let va = self.value(a);
        let out: Vec<F> =
            va.data().chunks_exact(d).map(|row| row.iter().copied().sum()).collect();
        let y = Tensor::new(vec![n], out);
        let need = self.requires(a);
        let back: Option<Backward<F>> = need.then(|| {
            Box::new(move |g: &Tensor<F>| {
                let mut dx = vec![F::zero(); n * d];
                for (i, chunk) in dx.chunks_exact_mut(d).enumerate() {
                    chunk.fill(g.data()[i]);
                }
                vec![Some(Tensor::new(vec![n, d], dx))]
            }) as Backward<F>
        });
        self.push(y, vec![a.0], back)
    }

    pub fn scale_rows(&mut self, a: Var, s: Var) -> Var {
        let shape = self.shape_of(a).to_vec();
        assert_eq!(shape.len(), 2, "scale_rows needs [N, D]");
        let (n, d) = (shape[0], shape[1]);
        assert_eq!(self.shape_of(s), &[n], "row scale must be [N]");
        let vs = self.value(s).clone();
        let va = self.value(a).clone();
        let mut out = va.data().to_vec();
        for (i, chunk) in out.chunks_exact_mut(d).enumerate() {
            let k = vs.data()[i];
            for v in chunk {
                *v *= k;
            }
        }
        let y = Tensor::new(shape, out);
        let need = [self.requires(a), self.requires(s)];
        let back: Option<Backward<F>> = (need[0] || need[1]).then(|| {
            Box::new(move |g: &Tensor<F>| {
                let ga = need[0].then(|| {
                    let mut dx = g.data().to_vec();
                    for (i, chunk) in dx.chunks_exact_mut(d).enumerate() {
                        let k = vs.data()[i];
                        for v in chunk {
                            *v *= k;
                        }
                    }
                    Tensor::new(vec![n, d], dx)
                });
                let gs = need[1].then(|| {
                    let out: Vec<F> = g
                        .data()
                        .chunks_exact(d)
                        .zip(va.data().chunks_exact(d))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(&gv, &x)| gv * x).sum())
                        .collect();
                    Tensor::new(vec![n], out)
                });
                vec![ga, gs]
            }) as Backward<F>
        });
        self.push(y, vec![a.0, s.0], back)
    }

    /// L2-normalize each row of `[N, D]`. Zero rows are a numeric error at
    /// the call sites that matter, so the norm gets no epsilon here.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let sq = self.mul(a, a);
        let norms2 = self.row_sum(sq);
        let norms = self.sqrt(norms2);
        let inv = self.recip(norms);
        self.scale_rows(a, inv)
    }

    // ---- matrix ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let sa = self.shape_of(a).to_vec();
        let sb = self.shape_of(b).to_vec();
        assert_eq!(sa.len(), 2);
        assert_eq!(sb.len(), 2);
        assert_eq!(sa[1], sb[0], "matmul {sa:?} x {sb:?}");
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let va = self.value(a).clone();
        let vb = self.value(b).clone();
        let y = Tensor::new(vec![m, n], gemm(va.data(), vb.data(), m, k, n));
        let need = [self.requires(a), self.requires(b)];
        let back: Option<Backward<F>> = (need[0] || need[1]).then(|| {
            Box::new(move |g: &Tensor<F>| {
                // dA = G . B^T, dB = A^T . G
                let ga = need[0].then(|| {
                    let bt = transpose(vb.data(), k, n);
                    Tensor::new(vec![m, k], gemm(g.data(), &bt, m, n, k))
                });
                let gb = need[1].then(|| {
                    let at = transpose(va.data(), m, k);
                    Tensor::new(vec![k, n], gemm(&at, g.data(), k, m, n))
                });
                vec![ga, gb]
            }) as Backward<F>
        });
        self.push(y, vec![a.0, b.0], back)
    }

    pub fn transpose2d(&mut self, a: Var) -> Var {
        let sa = self.shape_of(a).to_vec();
        assert_eq!(sa.len(), 2);
        let (m, n) = (sa[0], sa[1]);
        let y = Tensor::new(vec![n, m], transpose(self.value(a).data(), m, n));
        let need = self.requires(a);
        let back: Option<Backward<F>> = need.then(|| {
            Box::new(move |g: &Tensor<F>| {
                vec![Some(Tensor::new(vec![m, n], transpose(g.data(), n, m)))]
            }) as Backward<F>
        });
        self.push(y, vec![a.0], back)
    }

    // ---- classification ----

    /// Numerically stable row-wise log-softmax on `[N, K]`.
    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let shape = self.shape_of(a).to_vec();
        assert_eq!(shape.len(), 2);
        let (n, k) = (shape[0], shape[1]);
        let va = self.value(a);
        let mut out = vec![F::zero(); n * k];
        for (row_in, row_out) in va.data().chunks_exact(k).zip(out.chunks_exact_mut(k)) {
            let mx = row_in.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
            let lse = mx
                + row_in
                    .iter()
                    .map(|&v| (v - mx).exp())
                    .sum::<F>()
                    .ln();
            for (o, &v) in row_out.iter_mut().zip(row_in) {
                *o = v - lse;
            }
        }
        let y = Tensor::new(shape.clone(), out);
        let yc = y.clone();
        let need = self.requires(a);
        let back: Option<Backward<F>> = need.then(|| {
            Box::new(move |g: &Tensor<F>| {
                let mut dx = vec![F::zero(); n * k];
                for i in 0..n {
                    let gr = &g.data()[i * k..(i + 1) * k];
                    let yr = &yc.data()[i * k..(i + 1) * k];
                    let gsum: F = gr.iter().copied().sum();
                    for j in 0..k {
                        dx[i * k + j] = gr[j] - yr[j].exp() * gsum;
                    }
                }
                vec![Some(Tensor::new(vec![n, k], dx))]
            }) as Backward<F>
        });
        self.push(y, vec![a.0], back)
    }

    /// Pick one column per row: `y[n] = a[n, idx[n]]`.
    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let shape = self.shape_of(a).to_vec();
        assert_eq!(shape.len(), 2);
        let (n, k) = (shape[0], shape[1]);
        assert_eq!(idx.len(), n, "one index per row");
        assert!(idx.iter().all(|&j| j < k), "row index out of range");
        let va = self.value(a);
        let out: Vec<F> = idx.iter().enumerate().map(|(i, &j)| va.data()[i * k + j]).collect();
        let y = Tensor::new(vec![n], out);
        let idx = idx.to_vec();
        let need = self.requires(a);
        let back: Option<Backward<F>> = need.then(|| {
            Box::new(move |g: &Tensor<F>| {
                let mut dx = vec![F::zero(); n * k];
                for (i, &j) in idx.iter().enumerate() {
                    dx[i * k + j] = g.data()[i];
                }
                vec![Some(Tensor::new(vec![n, k], dx))]
            }) as Backward<F>
        });
        self.push(y, vec![a.0], back)
    }

    // ---- structure ----

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let old = self.shape_of(a).to_vec();
        let y = self.value(a).reshape(shape);
        let need = self.requires(a);
        let back: Option<Backward<F>> = need.then(|| {
            Box::new(move |g: &Tensor<F>| vec![Some(g.reshape(&old))]) as Backward<F>
        });
        self.push(y, vec![a.0], back)
    }

    /// Concatenate along the channel axis; every input is `[N, C_i, ...]`
    /// with identical batch and spatial extents.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Var {
        assert!(!inputs.is_empty());
        let first = self.shape_of(inputs[0]).to_vec();
        assert!(first.len() >= 2);
        let n = first[0];
        let sp: usize = first[2..].iter().product();
        let mut channels = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape_of(v);
            assert_eq!(s[0], n, "concat batch mismatch");
            assert_eq!(&s[2..], &first[2..], "concat spatial mismatch");
            channels.push(s[1]);
        }
        let c_total: usize = channels.iter().sum();
        let mut out_shape = first.clone();
        out_shape[1] = c_total;
        let mut out = vec![F::zero(); n * c_total * sp];
        for b in 0..n {
            let mut c_off = 0usize;
            for (&v, &ci) in inputs.iter().zip(&channels) {
                let data = self.value(v).data();
                let src = &data[b * ci * sp..(b + 1) * ci * sp];
                let dst_start = (b * c_total + c_off) * sp;
                out[dst_start..dst_start + ci * sp].copy_from_slice(src);
                c_off += ci;
            }
        }
        let y = Tensor::new(out_shape, out);
        let needs: Vec<bool> = inputs.iter().map(|&v| self.requires(v)).collect();
        let any = needs.iter().any(|&b| b);
        let ch = channels.clone();
        let back: Option<Backward<F>> = any.then(|| {
            Box::new(move |g: &Tensor<F>| {
                let mut outs: Vec<Option<Tensor<F>>> = Vec::with_capacity(ch.len());
                let mut c_off = 0usize;
                for (i, &ci) in ch.iter().enumerate() {
                    if needs[i] {
                        let mut dx = vec![F::zero(); n * ci * sp];
                        for b in 0..n {
                            let src_start = (b * c_total + c_off) * sp;
                            dx[b * ci * sp..(b + 1) * ci * sp]
                                .copy_from_slice(&g.data()[src_start..src_start + ci * sp]);
                        }
                        let mut shape = g.shape().to_vec();
                        shape[1] = ci;
                        outs.push(Some(Tensor::new(shape, dx)));
                    } else {
                        outs.push(None);
                    }
                    c_off += ci;
                }
                outs
            }) as Backward<F>
        });
        self.push(y, inputs.iter().map(|v| v.0).collect(), back)
    }

    // ---- 3D kernels (implementations in `conv`) ----

    pub fn conv3d(&mut self, x: Var, w: Var, stride: [usize; 3], pad: [usize; 3]) -> Var {
        let vx = self.value(x).clone();
        let vw = self.value(w).clone();
        let y = conv::conv3d_forward(&vx, &vw, stride, pad);
        let need = [self.requires(x), self.requires(w)];
        let back: Option<Backward<F>> = (need[0] || need[1]).then(|| {
            Box::new(move |g: &Tensor<F>| {
                let gx = need[0].then(|| conv::conv3d_backward_input(g, &vw, vx.shape(), stride, pad));
                let gw = need[1].then(|| conv::conv3d_backward_weight(g, &vx, vw.shape(), stride, pad));
                vec![gx, gw]
            }) as Backward<F>
        });
        self.push(y, vec![x.0, w.0], back)
    }

    pub fn conv_transpose3d(
        &mut self,
        x: Var,
        w: Var,
        stride: [usize; 3],
        pad: [usize; 3],
        out_pad: [usize; 3],
    ) -> Var {
        let vx = self.value(x).clone();
        let vw = self.value(w).clone();
        let y = conv::tconv3d_forward(&vx, &vw, stride, pad, out_pad);
        let need = [self.requires(x), self.requires(w)];
        let back: Option<Backward<F>> = (need[0] || need[1]).then(|| {
            Box::new(move |g: &Tensor<F>| {
                let gx = need[0].then(|| conv::tconv3d_backward_input(g, &vw, vx.shape(), stride, pad));
                let gw = need[1].then(|| conv::tconv3d_backward_weight(g, &vx, vw.shape(), stride, pad));
                vec![gx, gw]
            }) as Backward<F>
        });
        self.push(y, vec![x.0, w.0], back)
    }

    /// Max pool with kernel = stride (disjoint windows).
    pub fn max_pool3d(&mut self, x: Var, kernel: [usize; 3]) -> Var {
        let vx = self.value(x).clone();
        let (y, argmax) = conv::max_pool3d_forward(&vx, kernel);
        let in_shape = vx.shape().to_vec();
        let need = self.requires(x);
        let back: Option<Backward<F>> = need.then(|| {
            Box::new(move |g: &Tensor<F>| {
                vec![Some(conv::max_pool3d_backward(g, &argmax, &in_shape))]
            }) as Backward<F>
        });
        self.push(y, vec![x.0], back)
    }

    // ---- composite conveniences ----

    /// Mean absolute difference.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let ad = self.abs(d);
        self.mean_all(ad)
    }

    /// Mean cross-entropy of logits `[N, K]` against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let lsm = self.log_softmax_rows(logits);
        let picked = self.select_rows(lsm, labels);
        let m = self.mean_all(picked);
        self.mul_scalar(m, -F::one())
    }
}

/// Per-channel sums of a `[N, C, sp]`-shaped buffer.
fn channel_sums<F: Scalar>(data: &[F], n: usize, c: usize, sp: usize) -> Vec<F> {
    let mut out = vec![F::zero(); c];
    for i in 0..n * c {
        let s: F = data[i * sp..(i + 1) * sp].iter().copied().sum();
        out[i % c] += s;
    }
    out
}

fn gemm<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

fn transpose<F: Scalar>(a: &[F], m: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

pub struct Grads<F: Scalar> {
    grads: Vec<Option<Tensor<F>>>,
    params: HashMap<(u64, usize), Var>,
}

impl<F: Scalar> Grads<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn for_param(&self, store: &ParamStore<F>, id: ParamId) -> Option<&Tensor<F>> {
        self.params.get(&(store.uid(), id.0)).and_then(|v| self.get(*v))
    }
}
