//! A small reverse-mode autodiff engine over `[batch, channel, length]` tensors.
//!
//! A [`Graph`] records every operation of one forward pass on a tape; calling
//! [`Graph::backward`] walks the tape in reverse and returns gradients for the
//! parameters of the [`ParamStore`] the graph was built against. The engine is
//! generic over [`Scalar`] so models train in `f32` and gradient checks run in
//! `f64`.

pub mod conv;
pub mod optim;

use std::collections::HashMap;
use std::fmt::Debug;
use std::iter::Sum;

use ndarray::LinalgScalar;
use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;

pub use optim::{Adam, AdamConfig};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + Sum
    + Debug
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub(crate) fn c<F: Scalar>(v: f64) -> F {
    F::from_f64(v).expect("representable constant")
}

/// Dense row-major tensor of shape `[B, C, L]`. Parameters reuse the type:
/// conv weights are `[Cout, Cin/groups, K]`, per-channel vectors `[C, 1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    pub shape: [usize; 3],
    pub data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(shape: [usize; 3]) -> Self {
        Self {
            shape,
            data: vec![F::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: [usize; 3], v: F) -> Self {
        Self {
            shape,
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 3], data: Vec<F>) -> Self {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "data does not fit shape {shape:?}"
        );
        Self { shape, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, b: usize, c: usize) -> &[F] {
        let l = self.shape[2];
        let o = (b * self.shape[1] + c) * l;
        &self.data[o..o + l]
    }

    pub fn row_mut(&mut self, b: usize, c: usize) -> &mut [F] {
        let l = self.shape[2];
        let o = (b * self.shape[1] + c) * l;
        &mut self.data[o..o + l]
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| c(v.to_f64().expect("finite")))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn add_assign(&mut self, o: &Tensor<F>) {
        debug_assert_eq!(self.shape, o.shape);
        self.data
            .iter_mut()
            .zip(&o.data)
            .for_each(|(a, &b)| *a = *a + b);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named tensors. Non-trainable entries (batch-norm running statistics) are
/// updated by the trainer, never by the optimizer.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<F> {
    names: Vec<String>,
    values: Vec<Tensor<F>>,
    trainable: Vec<bool>,
    index: HashMap<String, ParamId>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            trainable: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Panics if `name` is already taken.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>, trainable: bool) -> ParamId {
        let name = name.into();
        let id = ParamId(self.values.len());
        assert!(
            self.index.insert(name.clone(), id).is_none(),
            "duplicate parameter {name}"
        );
        self.names.push(name);
        self.values.push(value);
        self.trainable.push(trainable);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn n_trainable(&self) -> usize {
        self.ids()
            .filter(|&i| self.is_trainable(i))
            .map(|i| self.get(i).len())
            .sum()
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            trainable: self.trainable.clone(),
            index: self.index.clone(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Tensor::is_finite)
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<F> {
    Input,
    Param,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        dilation: usize,
        groups: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<F>,
        inv_std: Vec<F>,
        batch_stats: bool,
    },
    Relu(Var),
    Sigmoid(Var),
    ChannelMask {
        x: Var,
        scale: Vec<F>,
    },
    AvgPool2(Var),
    Upsample2(Var),
    Concat(Vec<Var>),
    Add(Var, Var),
    MeanLength(Var),
    Broadcast(Var),
    Jaccard {
        p: Var,
        grad: Tensor<F>,
    },
}

#[derive(Debug, Clone)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
}

/// Batch statistics observed by a training-mode batch norm, to be folded into
/// the running estimates with [`ParamStore`]-level momentum.
#[derive(Debug, Clone)]
pub struct BnUpdate<F> {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub mean: Vec<F>,
    /// Unbiased batch variance.
    pub var: Vec<F>,
}

impl<F: Scalar> BnUpdate<F> {
    pub fn apply(&self, params: &mut ParamStore<F>, momentum: F) {
        let keep = F::one() - momentum;
        for (id, stats) in [
            (self.running_mean, &self.mean),
            (self.running_var, &self.var),
        ] {
            for (r, &s) in params.get_mut(id).data.iter_mut().zip(stats) {
                *r = keep * *r + momentum * s;
            }
        }
    }
}

/// Batch-norm parameters and running-statistics handles.
#[derive(Debug, Clone, Copy)]
pub struct BnParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

pub const BN_EPS: f64 = 1e-5;

/// Gradients indexed by [`ParamId`]; `None` for parameters the loss does not
/// depend on.
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor::is_finite)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Tape for one forward pass.
pub struct Graph<'p, F> {
    params: &'p ParamStore<F>,
    nodes: Vec<Node<F>>,
    batch_stats: bool,
    rng: Option<ChaCha8Rng>,
    bn_updates: Vec<BnUpdate<F>>,
    param_nodes: HashMap<ParamId, Var>,
}

impl<'p, F: Scalar> Graph<'p, F> {
    /// `batch_stats` selects batch (training) or running (inference)
    /// batch-norm statistics; dropout is active iff `dropout_rng` is given.
    pub fn new(
        params: &'p ParamStore<F>,
        batch_stats: bool,
        dropout_rng: Option<ChaCha8Rng>,
    ) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            batch_stats,
            rng: dropout_rng,
            bn_updates: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    /// Running batch-norm statistics, no dropout.
    pub fn inference(params: &'p ParamStore<F>) -> Self {
        Self::new(params, false, None)
    }

    /// Batch statistics and dropout driven by `rng`.
    pub fn training(params: &'p ParamStore<F>, rng: ChaCha8Rng) -> Self {
        Self::new(params, true, Some(rng))
    }

    pub fn uses_batch_stats(&self) -> bool {
        self.batch_stats
    }

    /// Returns the dropout RNG (advanced by this pass).
    pub fn take_rng(&mut self) -> Option<ChaCha8Rng> {
        self.rng.take()
    }

    pub fn bn_updates(&self) -> &[BnUpdate<F>] {
        &self.bn_updates
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 3] {
        self.nodes[v.0].value.shape
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Input)
    }

    /// Parameter leaf; repeated calls for the same id share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let v = self.push(self.params.get(id).clone(), Op::Param);
        self.param_nodes.insert(id, v);
        v
    }

    pub fn conv1d(
        &mut self,
        x: Var,
        w: ParamId,
        b: Option<ParamId>,
        dilation: usize,
        groups: usize,
    ) -> Var {
        let w = self.param(w);
        let b = b.map(|b| self.param(b));
        let out = conv::conv1d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            dilation,
            groups,
        );
        self.push(
            out,
            Op::Conv {
                x,
                w,
                b,
                dilation,
                groups,
            },
        )
    }

    /// Batch norm over (batch, length) per channel. Training graphs use batch
    /// statistics and record a [`BnUpdate`]; inference graphs use running ones.
    pub fn batch_norm(&mut self, x: Var, p: BnParams) -> Var {
        let gamma = self.param(p.gamma);
        let beta = self.param(p.beta);
        let [b, ch, l] = self.shape(x);
        let n = b * l;
        let eps: F = c(BN_EPS);
        let (mean, inv_std) = if self.batch_stats {
            let xv = self.value(x);
            let mut mean = vec![F::zero(); ch];
            let mut var = vec![F::zero(); ch];
            for ci in 0..ch {
                let s: F = (0..b)
                    .map(|bi| xv.row(bi, ci).iter().copied().sum::<F>())
                    .sum();
                let m = s / c(n as f64);
                let ss: F = (0..b)
                    .map(|bi| xv.row(bi, ci).iter().map(|&v| (v - m) * (v - m)).sum::<F>())
                    .sum();
                mean[ci] = m;
                var[ci] = ss / c(n as f64);
            }
            let unbiased = var
                .iter()
                .map(|&v| {
                    if n > 1 {
                        v * c(n as f64 / (n - 1) as f64)
                    } else {
                        v
                    }
                })
                .collect();
            self.bn_updates.push(BnUpdate {
                running_mean: p.running_mean,
                running_var: p.running_var,
                mean: mean.clone(),
                var: unbiased,
            });
            (
                mean,
                var.iter()
                    .map(|&v| F::one() / (v + eps).sqrt())
                    .collect::<Vec<F>>(),
            )
        } else {
            let mean = self.params.get(p.running_mean).data.clone();
            let inv = self
                .params
                .get(p.running_var)
                .data
                .iter()
                .map(|&v| F::one() / (v + eps).sqrt())
                .collect();
            (mean, inv)
        };
        let xv = self.value(x);
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let mut xhat = Tensor::zeros([b, ch, l]);
        let mut out = Tensor::zeros([b, ch, l]);
        for bi in 0..b {
            for ci in 0..ch {
                let (m, s, g, be) = (mean[ci], inv_std[ci], gv.data[ci], bv.data[ci]);
                for ((h, o), &v) in xhat
                    .row_mut(bi, ci)
                    .iter_mut()
                    .zip(out.row_mut(bi, ci))
                    .zip(xv.row(bi, ci))
                {
                    *h = (v - m) * s;
                    *o = g * *h + be;
                }
            }
        }
        let batch_stats = self.batch_stats;
        self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: xhat.data,
                inv_std,
                batch_stats,
            },
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data.iter_mut().for_each(|v| *v = v.max(F::zero()));
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data
            .iter_mut()
            .for_each(|v| *v = F::one() / (F::one() + (-*v).exp()));
        self.push(out, Op::Sigmoid(x))
    }

    /// Spatial dropout: zeroes whole (batch, channel) rows with probability
    /// `rate` and rescales survivors by `1 / (1 - rate)`. Identity without a
    /// dropout rng or when `rate == 0`.
    pub fn spatial_dropout(&mut self, x: Var, rate: f64) -> Var {
        let [b, ch, _] = self.shape(x);
        let Some(rng) = self.rng.as_mut().filter(|_| rate > 0.0) else {
            return x;
        };
        let keep: F = c(1.0 / (1.0 - rate));
        let scale: Vec<F> = (0..b * ch)
            .map(|_| {
                if rng.random::<f64>() < rate {
                    F::zero()
                } else {
                    keep
                }
            })
            .collect();
        let mut out = self.value(x).clone();
        for bi in 0..b {
            for ci in 0..ch {
                let s = scale[bi * ch + ci];
                out.row_mut(bi, ci).iter_mut().for_each(|v| *v = *v * s);
            }
        }
        self.push(out, Op::ChannelMask { x, scale })
    }

    /// Mean of neighboring sample pairs; the length must be even.
    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let [b, ch, l] = self.shape(x);
        assert!(l % 2 == 0, "average pooling needs an even length, got {l}");
        let half: F = c(0.5);
        let xv = self.value(x);
        let mut out = Tensor::zeros([b, ch, l / 2]);
        for bi in 0..b {
            for ci in 0..ch {
                let src = xv.row(bi, ci);
                for (i, o) in out.row_mut(bi, ci).iter_mut().enumerate() {
                    *o = (src[2 * i] + src[2 * i + 1]) * half;
                }
            }
        }
        self.push(out, Op::AvgPool2(x))
    }

    /// Linear interpolation to twice the length (half-pixel centers, edges
    /// clamped).
    pub fn upsample2(&mut self, x: Var) -> Var {
        let [b, ch, l] = self.shape(x);
        let (near, far): (F, F) = (c(0.75), c(0.25));
        let xv = self.value(x);
        let mut out = Tensor::zeros([b, ch, 2 * l]);
        for bi in 0..b {
            for ci in 0..ch {
                let src = xv.row(bi, ci);
                let dst = out.row_mut(bi, ci);
                for i in 0..l {
                    let prev = src[i.saturating_sub(1)];
                    let next = src[(i + 1).min(l - 1)];
                    dst[2 * i] = near * src[i] + far * prev;
                    dst[2 * i + 1] = near * src[i] + far * next;
                }
            }
        }
        self.push(out, Op::Upsample2(x))
    }

    /// Channel concatenation.
    pub fn concat(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "concat of nothing");
        if xs.len() == 1 {
            return xs[0];
        }
        let [b, _, l] = self.shape(xs[0]);
        for &x in xs {
            let [bx, _, lx] = self.shape(x);
            assert_eq!(
                (bx, lx),
                (b, l),
                "concat operands differ in batch or length"
            );
        }
        let total: usize = xs.iter().map(|&x| self.shape(x)[1]).sum();
        let mut out = Tensor::zeros([b, total, l]);
        for bi in 0..b {
            let mut co = 0;
            for &x in xs {
                let xv = self.value(x);
                for ci in 0..xv.shape[1] {
                    out.row_mut(bi, co).copy_from_slice(xv.row(bi, ci));
                    co += 1;
                }
            }
        }
        self.push(out, Op::Concat(xs.to_vec()))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add operands differ in shape");
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// Global average over the length axis: `[B, C, L] -> [B, C, 1]`.
    pub fn mean_length(&mut self, x: Var) -> Var {
        let [b, ch, l] = self.shape(x);
        let inv: F = c(1.0 / l as f64);
        let xv = self.value(x);
        let mut out = Tensor::zeros([b, ch, 1]);
        for bi in 0..b {
            for ci in 0..ch {
                out.data[bi * ch + ci] = xv.row(bi, ci).iter().copied().sum::<F>() * inv;
            }
        }
        self.push(out, Op::MeanLength(x))
    }

    /// Repeats a `[B, C, 1]` tensor along the length axis.
    pub fn broadcast_length(&mut self, x: Var, len: usize) -> Var {
        let [b, ch, l] = self.shape(x);
        assert_eq!(l, 1, "broadcast source must have length 1");
        let xv = self.value(x);
        let mut out = Tensor::zeros([b, ch, len]);
        for i in 0..b * ch {
            let v = xv.data[i];
            out.data[i * len..(i + 1) * len]
                .iter_mut()
                .for_each(|o| *o = v);
        }
        self.push(out, Op::Broadcast(x))
    }

    /// Soft Jaccard loss `1 - mean_c (I_c + eps) / (U_c + eps)`, with sums over
    /// batch and length per channel. Returns a `[1, 1, 1]` node.
    pub fn jaccard_loss(&mut self, p: Var, target: &Tensor<F>, eps: f64) -> Var {
        let pv = self.value(p);
        assert_eq!(
            pv.shape, target.shape,
            "prediction and target shapes differ"
        );
        let [b, ch, _] = pv.shape;
        let eps: F = c(eps);
        let mut grad = Tensor::zeros(pv.shape);
        let mut jsum = F::zero();
        let inv_c: F = c(1.0 / ch as f64);
        for ci in 0..ch {
            let (mut inter, mut sp, mut st) = (F::zero(), F::zero(), F::zero());
            for bi in 0..b {
                for (&pp, &tt) in pv.row(bi, ci).iter().zip(target.row(bi, ci)) {
                    inter = inter + pp * tt;
                    sp = sp + pp;
                    st = st + tt;
                }
            }
            let u = sp + st - inter + eps;
            let num = inter + eps;
            jsum = jsum + num / u;
            // d(num/u)/dp = (t u - num (1 - t)) / u^2
            for bi in 0..b {
                for (g, &tt) in grad.row_mut(bi, ci).iter_mut().zip(target.row(bi, ci)) {
                    *g = -inv_c * (tt * u - num * (F::one() - tt)) / (u * u);
                }
            }
        }
        let loss = F::one() - jsum * inv_c;
        self.push(
            Tensor::from_vec([1, 1, 1], vec![loss]),
            Op::Jaccard { p, grad },
        )
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients<F> {
        assert_eq!(self.shape(loss), [1, 1, 1], "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full([1, 1, 1], F::one()));
        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param => {
                    grads[i] = Some(dy);
                    continue;
                }
                Op::Conv {
                    x,
                    w,
                    b,
                    dilation,
                    groups,
                } => {
                    let g = conv::conv1d_backward(
                        self.value(*x),
                        self.value(*w),
                        &dy,
                        *dilation,
                        *groups,
                    );
                    accumulate(&mut grads, *x, g.dx);
                    accumulate(&mut grads, *w, g.dw);
                    if let Some(b) = b {
                        let shape = self.shape(*b);
                        accumulate(&mut grads, *b, Tensor::from_vec(shape, g.db));
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let [b, ch, l] = dy.shape;
                    let n: F = c((b * l) as f64);
                    let gv = self.value(*gamma);
                    let mut dg = vec![F::zero(); ch];
                    let mut dbeta = vec![F::zero(); ch];
                    let mut dx = Tensor::zeros(dy.shape);
                    for ci in 0..ch {
                        let (mut sdy, mut sdyx) = (F::zero(), F::zero());
                        for bi in 0..b {
                            let o = (bi * ch + ci) * l;
                            for (&d, &h) in dy.row(bi, ci).iter().zip(&xhat[o..o + l]) {
                                sdy = sdy + d;
                                sdyx = sdyx + d * h;
                            }
                        }
                        dg[ci] = sdyx;
                        dbeta[ci] = sdy;
                        let scale = gv.data[ci] * inv_std[ci];
                        for bi in 0..b {
                            let o = (bi * ch + ci) * l;
                            let h = &xhat[o..o + l];
                            for ((d, &g), &hh) in
                                dx.row_mut(bi, ci).iter_mut().zip(dy.row(bi, ci)).zip(h)
                            {
                                *d = if *batch_stats {
                                    scale * (g - sdy / n - hh * sdyx / n)
                                } else {
                                    scale * g
                                };
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gamma, Tensor::from_vec([ch, 1, 1], dg));
                    accumulate(&mut grads, *beta, Tensor::from_vec([ch, 1, 1], dbeta));
                }
                Op::Relu(x) => {
                    let mut dx = dy;
                    for (d, &v) in dx.data.iter_mut().zip(&node.value.data) {
                        if v <= F::zero() {
                            *d = F::zero();
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let mut dx = dy;
                    for (d, &s) in dx.data.iter_mut().zip(&node.value.data) {
                        *d = *d * s * (F::one() - s);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ChannelMask { x, scale } => {
                    let mut dx = dy;
                    let l = dx.shape[2];
                    for (row, &s) in dx.data.chunks_mut(l).zip(scale) {
                        row.iter_mut().for_each(|v| *v = *v * s);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::AvgPool2(x) => {
                    let half: F = c(0.5);
                    let mut dx = Tensor::zeros(self.shape(*x));
                    for (src, dst) in dy
                        .data
                        .chunks(dy.shape[2])
                        .zip(dx.data.chunks_mut(2 * dy.shape[2]))
                    {
                        for (i, &g) in src.iter().enumerate() {
                            dst[2 * i] = g * half;
                            dst[2 * i + 1] = g * half;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Upsample2(x) => {
                    let (near, far): (F, F) = (c(0.75), c(0.25));
                    let shape = self.shape(*x);
                    let l = shape[2];
                    let mut dx = Tensor::zeros(shape);
                    for (src, dst) in dy.data.chunks(2 * l).zip(dx.data.chunks_mut(l)) {
                        for i in 0..l {
                            let (g0, g1) = (src[2 * i], src[2 * i + 1]);
                            dst[i] = dst[i] + near * (g0 + g1);
                            let prev = i.saturating_sub(1);
                            dst[prev] = dst[prev] + far * g0;
                            let next = (i + 1).min(l - 1);
                            dst[next] = dst[next] + far * g1;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Concat(xs) => {
                    let b = dy.shape[0];
                    let mut co = 0;
                    for &x in xs {
                        let shape = self.shape(x);
                        let mut dx = Tensor::zeros(shape);
                        for bi in 0..b {
                            for ci in 0..shape[1] {
                                dx.row_mut(bi, ci).copy_from_slice(dy.row(bi, co + ci));
                            }
                        }
                        co += shape[1];
                        accumulate(&mut grads, x, dx);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, dy.clone());
                    accumulate(&mut grads, *b, dy);
                }
                Op::MeanLength(x) => {
                    let shape = self.shape(*x);
                    let inv: F = c(1.0 / shape[2] as f64);
                    let mut dx = Tensor::zeros(shape);
                    for (row, &g) in dx.data.chunks_mut(shape[2]).zip(&dy.data) {
                        row.iter_mut().for_each(|v| *v = g * inv);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Broadcast(x) => {
                    let l = dy.shape[2];
                    let data = dy
                        .data
                        .chunks(l)
                        .map(|row| row.iter().copied().sum())
                        .collect();
                    accumulate(&mut grads, *x, Tensor::from_vec(self.shape(*x), data));
                }
                Op::Jaccard { p, grad } => {
                    let s = dy.data[0];
                    let mut dp = grad.clone();
                    dp.data.iter_mut().for_each(|v| *v = *v * s);
                    accumulate(&mut grads, *p, dp);
                }
            }
        }
        let mut out = vec![None; self.params.len()];
        for (&id, &v) in &self.param_nodes {
            out[id.0] = grads[v.0].take();
        }
        Gradients { grads: out }
    }
}

fn accumulate<F: Scalar>(grads: &mut [Option<Tensor<F>>], v: Var, g: Tensor<F>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}
