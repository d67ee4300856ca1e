//! The configurable 1D U-Net family.
//!
//! Topology: stem → encoder levels `0..L-1` (CB blocks at `2^l·N` channels,
//! then average pooling ×2) → bottleneck at level `L-1` (optionally followed by
//! ASPP) → decoder levels `L-2..=0` (linear upsampling ×2, concatenation with
//! the encoder skip, CB blocks) → `sigmoid(conv(relu(x)))` head to 3 channels.
//! Every convolution has kernel 3 (1 for projections and pointwise convs)
//! and "same" zero padding, so the output length equals the input length.
//!
//! Blocks are pre-activation compositions with `N = ReLU` and
//! `R = batch norm then spatial dropout`:
//!
//! - Vanilla: `C(R(N(C(R(N(x))))))`
//! - Residual: the vanilla body plus `x` (1×1-projected when channels differ)
//! - XCeption: as residual, with each `C` replaced by a separable conv
//!   (depthwise k3, then pointwise 1×1)
//!
//! The stem is `C(R(N(C(x))))`: a vanilla block without its leading ReLU,
//! which would otherwise discard the negative deflections of the raw ECG.
//!
//! Variants:
//! - HdC: block `k` of a level consumes the concatenation of the level input
//!   and the outputs of blocks `1..k`.
//! - MsU: decoder level `l` additionally receives the last tensor of level
//!   `l + 2` (decoder side, or the bottleneck) upsampled ×4.
//! - ASPP: the bottleneck output is replaced by a 1×1 fusion of a 1×1 branch,
//!   one dilated k3 branch per rate and a global-average-pool branch.

use std::fmt;
use std::path::Path;

use ndarray::{Array3, ArrayView3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{
    c, Adam, AdamConfig, BnParams, Gradients, Graph, ParamId, ParamStore, Scalar, Tensor, Var,
};

pub use crate::metrics::dice_score;

pub const OUT_CHANNELS: usize = 3;
pub const KERNEL_SIZE: usize = 3;
pub const JACCARD_EPS: f64 = 1.0;
pub const BN_MOMENTUM: f64 = 0.1;
pub const CHECKPOINT_FORMAT: &str = "ecgdel-checkpoint/1";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("input length {len} is not divisible by {divisor}")]
    LengthNotDivisible { len: usize, divisor: usize },
    #[error("expected {expected} input channels, got {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockType {
    Vanilla,
    Residual,
    XCeption,
}

impl BlockType {
    pub const ALL: [BlockType; 3] = [BlockType::Vanilla, BlockType::Residual, BlockType::XCeption];
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct Variants {
    pub aspp: bool,
    pub hdc: bool,
    pub msu: bool,
}

impl Variants {
    /// All 8 flag combinations.
    pub fn all() -> impl Iterator<Item = Variants> {
        (0..8u8).map(|m| Variants {
            aspp: m & 1 != 0,
            hdc: m & 2 != 0,
            msu: m & 4 != 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub levels: usize,
    pub blocks_per_level: usize,
    pub base_channels: usize,
    pub block_type: BlockType,
    pub sdo_rate: f64,
    pub variants: Variants,
    pub aspp_rates: Vec<usize>,
    pub in_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            levels: 5,
            blocks_per_level: 3,
            base_channels: 16,
            block_type: BlockType::Vanilla,
            sdo_rate: 0.25,
            variants: Variants::default(),
            aspp_rates: vec![2, 4, 8],
            in_channels: 1,
        }
    }
}

impl ModelConfig {
    pub const LEVELS: std::ops::RangeInclusive<usize> = 4..=7;
    pub const BLOCKS: std::ops::RangeInclusive<usize> = 2..=6;

    /// Structural constraints only; see [`ModelConfig::validate`] for the
    /// experiment grid.
    pub fn validate_structure(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.levels < 2 {
            return bad(format!("levels must be at least 2, got {}", self.levels));
        }
        if self.blocks_per_level == 0 {
            return bad("blocks_per_level must be positive".into());
        }
        if self.base_channels == 0 {
            return bad("base_channels must be positive".into());
        }
        if !(0.0..1.0).contains(&self.sdo_rate) {
            return bad(format!("sdo_rate must be in [0, 1), got {}", self.sdo_rate));
        }
        if !(1..=2).contains(&self.in_channels) {
            return bad(format!(
                "in_channels must be 1 or 2, got {}",
                self.in_channels
            ));
        }
        if self.variants.aspp && self.aspp_rates.is_empty() {
            return bad("ASPP needs at least one dilation rate".into());
        }
        if self.aspp_rates.contains(&0) {
            return bad("dilation rates must be positive".into());
        }
        Ok(())
    }

    /// Structural constraints plus `L ∈ [4, 7]` and `CB ∈ [2, 6]`.
    pub fn validate(&self) -> Result<(), ModelError> {
        self.validate_structure()?;
        if !Self::LEVELS.contains(&self.levels) {
            return Err(ModelError::InvalidConfig(format!(
                "levels must be in [4, 7], got {}",
                self.levels
            )));
        }
        if !Self::BLOCKS.contains(&self.blocks_per_level) {
            return Err(ModelError::InvalidConfig(format!(
                "blocks_per_level must be in [2, 6], got {}",
                self.blocks_per_level
            )));
        }
        Ok(())
    }

    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Input lengths must be multiples of this.
    pub fn length_divisor(&self) -> usize {
        1 << (self.levels - 1)
    }
}

/// One entry of the built topology, for shape audits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GraphOp {
    pub name: String,
    pub kind: OpKind,
    pub level: Option<usize>,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Length of this op's output relative to the input length (`L / 2^level`).
    pub length_divisor: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Stem,
    Block,
    Downsample,
    Aspp,
    Upsample,
    Concat,
    Head,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ModelGraph {
    pub ops: Vec<GraphOp>,
    pub params: Vec<(String, [usize; 3])>,
}

impl ModelGraph {
    fn op(&mut self, name: String, kind: OpKind, level: Option<usize>, cin: usize, cout: usize) {
        let length_divisor = level.map_or(1, |l| 1 << l);
        self.ops.push(GraphOp {
            name,
            kind,
            level,
            in_channels: cin,
            out_channels: cout,
            length_divisor,
        });
    }

    pub fn blocks(&self) -> impl Iterator<Item = &GraphOp> {
        self.ops.iter().filter(|o| o.kind == OpKind::Block)
    }
}

impl fmt::Display for ModelGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for op in &self.ops {
            writeln!(
                f,
                "{:<24} {:<10} {:>5} -> {:<5} L/{}",
                op.name,
                format!("{:?}", op.kind),
                op.in_channels,
                op.out_channels,
                op.length_divisor
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvLayer {
    w: ParamId,
    b: Option<ParamId>,
    dilation: usize,
    groups: usize,
}

#[derive(Debug, Clone)]
enum Shortcut {
    None,
    Identity,
    Project(ConvLayer),
}

/// `op2(R(N(op1(R(N(x)))))) [+ shortcut(x)]`; `bn1` is `None` for the stem,
/// which also skips the leading ReLU.
#[derive(Debug, Clone)]
struct Block {
    pre: Option<BnParams>,
    op1: Vec<ConvLayer>,
    bn2: BnParams,
    op2: Vec<ConvLayer>,
    shortcut: Shortcut,
}

#[derive(Debug, Clone)]
struct Level {
    blocks: Vec<Block>,
}

#[derive(Debug, Clone)]
struct Aspp {
    branches: Vec<ConvLayer>,
    pool: ConvLayer,
    fuse: ConvLayer,
}

struct Builder<'a, F> {
    params: ParamStore<F>,
    graph: ModelGraph,
    rng: &'a mut ChaCha8Rng,
}

impl<F: Scalar> Builder<'_, F> {
    fn conv(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        dilation: usize,
        groups: usize,
    ) -> ConvLayer {
        let shape = [cout, cin / groups, k];
        let bound = (6.0 / (shape[1] * k) as f64).sqrt();
        let data = (0..shape.iter().product())
            .map(|_| c(self.rng.random_range(-bound..bound)))
            .collect();
        let w = self.add(format!("{name}.w"), Tensor::from_vec(shape, data), true);
        let b = self.add(format!("{name}.b"), Tensor::zeros([cout, 1, 1]), true);
        ConvLayer {
            w,
            b: Some(b),
            dilation,
            groups,
        }
    }

    fn bn(&mut self, name: &str, ch: usize) -> BnParams {
        BnParams {
            gamma: self.add(
                format!("{name}.gamma"),
                Tensor::full([ch, 1, 1], F::one()),
                true,
            ),
            beta: self.add(format!("{name}.beta"), Tensor::zeros([ch, 1, 1]), true),
            running_mean: self.add(
                format!("{name}.running_mean"),
                Tensor::zeros([ch, 1, 1]),
                false,
            ),
            running_var: self.add(
                format!("{name}.running_var"),
                Tensor::full([ch, 1, 1], F::one()),
                false,
            ),
        }
    }

    fn add(&mut self, name: String, t: Tensor<F>, trainable: bool) -> ParamId {
        self.graph.params.push((name.clone(), t.shape));
        self.params.add(name, t, trainable)
    }

    /// A plain or separable conv `cin -> cout`.
    fn body_conv(
        &mut self,
        name: &str,
        kind: BlockType,
        cin: usize,
        cout: usize,
    ) -> Vec<ConvLayer> {
        match kind {
            BlockType::XCeption => vec![
                self.conv(&format!("{name}.dw"), cin, cin, KERNEL_SIZE, 1, cin),
                self.conv(&format!("{name}.pw"), cin, cout, 1, 1, 1),
            ],
            _ => vec![self.conv(name, cin, cout, KERNEL_SIZE, 1, 1)],
        }
    }

    fn block(&mut self, name: &str, kind: BlockType, cin: usize, cout: usize) -> Block {
        let pre = Some(self.bn(&format!("{name}.bn1"), cin));
        let op1 = self.body_conv(&format!("{name}.conv1"), kind, cin, cout);
        let bn2 = self.bn(&format!("{name}.bn2"), cout);
        let op2 = self.body_conv(&format!("{name}.conv2"), kind, cout, cout);
        let shortcut = match kind {
            BlockType::Vanilla => Shortcut::None,
            _ if cin == cout => Shortcut::Identity,
            _ => Shortcut::Project(self.conv(&format!("{name}.proj"), cin, cout, 1, 1, 1)),
        };
        Block {
            pre,
            op1,
            bn2,
            op2,
            shortcut,
        }
    }

    fn level(&mut self, prefix: &str, cfg: &ModelConfig, level: usize, cin: usize) -> Level {
        let ch = cfg.channels_at(level);
        let mut blocks = Vec::new();
        for k in 0..cfg.blocks_per_level {
            let block_in = if cfg.variants.hdc {
                cin + k * ch
            } else if k == 0 {
                cin
            } else {
                ch
            };
            let name = format!("{prefix}{level}.block{k}");
            blocks.push(self.block(&name, cfg.block_type, block_in, ch));
            self.graph
                .op(name, OpKind::Block, Some(level), block_in, ch);
        }
        Level { blocks }
    }
}

/// The network and its parameters.
#[derive(Debug, Clone)]
pub struct UNet<F> {
    config: ModelConfig,
    params: ParamStore<F>,
    graph: ModelGraph,
    stem: Block,
    encoder: Vec<Level>,
    bottleneck: Level,
    aspp: Option<Aspp>,
    decoder: Vec<Level>,
    head: ConvLayer,
}

impl<F: Scalar> UNet<F> {
    /// Builds a model on the experiment grid with He-uniform weights drawn
    /// from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(Self::build(config, seed))
    }

    /// Like [`UNet::new`] but only enforces structural constraints (allows
    /// tiny models for tests and gradient checks).
    pub fn new_relaxed(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate_structure()?;
        Ok(Self::build(config, seed))
    }

    fn build(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            params: ParamStore::new(),
            graph: ModelGraph::default(),
            rng: &mut rng,
        };
        let cfg = &config;
        let n = cfg.base_channels;
        let last = cfg.levels - 1;

        let stem_conv = b.conv("stem.conv1", cfg.in_channels, n, KERNEL_SIZE, 1, 1);
        let stem_bn = b.bn("stem.bn2", n);
        let stem_out = b.conv("stem.conv2", n, n, KERNEL_SIZE, 1, 1);
        let stem = Block {
            pre: None,
            op1: vec![stem_conv],
            bn2: stem_bn,
            op2: vec![stem_out],
            shortcut: Shortcut::None,
        };
        b.graph
            .op("stem".into(), OpKind::Stem, Some(0), cfg.in_channels, n);

        let mut encoder = Vec::new();
        let mut cin = n;
        for l in 0..last {
            encoder.push(b.level("enc", cfg, l, cin));
            cin = cfg.channels_at(l);
            b.graph.op(
                format!("pool{l}"),
                OpKind::Downsample,
                Some(l + 1),
                cin,
                cin,
            );
        }
        let bottleneck = b.level("bottleneck", cfg, last, cin);
        let cb = cfg.channels_at(last);
        let aspp = cfg.variants.aspp.then(|| {
            let mut branches = vec![b.conv("aspp.b1x1", cb, cb, 1, 1, 1)];
            for &r in &cfg.aspp_rates {
                branches.push(b.conv(&format!("aspp.rate{r}"), cb, cb, KERNEL_SIZE, r, 1));
            }
            let pool = b.conv("aspp.pool", cb, cb, 1, 1, 1);
            let fuse = b.conv("aspp.fuse", cb * (branches.len() + 1), cb, 1, 1, 1);
            b.graph.op("aspp".into(), OpKind::Aspp, Some(last), cb, cb);
            Aspp {
                branches,
                pool,
                fuse,
            }
        });

        let mut decoder = Vec::new();
        let mut below = cb;
        for l in (0..last).rev() {
            let skip = cfg.channels_at(l);
            let msu = if cfg.variants.msu && l + 2 <= last {
                cfg.channels_at(l + 2)
            } else {
                0
            };
            b.graph
                .op(format!("up{l}"), OpKind::Upsample, Some(l), below, below);
            b.graph.op(
                format!("concat{l}"),
                OpKind::Concat,
                Some(l),
                skip + below + msu,
                skip + below + msu,
            );
            decoder.push(b.level("dec", cfg, l, skip + below + msu));
            below = skip;
        }
        let head = b.conv("head", n, OUT_CHANNELS, KERNEL_SIZE, 1, 1);
        b.graph
            .op("head".into(), OpKind::Head, Some(0), n, OUT_CHANNELS);

        let Builder { params, graph, .. } = b;
        Self {
            config,
            params,
            graph,
            stem,
            encoder,
            bottleneck,
            aspp,
            decoder,
            head,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    pub fn describe(&self) -> &ModelGraph {
        &self.graph
    }

    fn conv(&self, g: &mut Graph<'_, F>, x: Var, layer: &ConvLayer) -> Var {
        g.conv1d(x, layer.w, layer.b, layer.dilation, layer.groups)
    }

    fn convs(&self, g: &mut Graph<'_, F>, mut x: Var, layers: &[ConvLayer]) -> Var {
        for layer in layers {
            x = self.conv(g, x, layer);
        }
        x
    }

    fn block(&self, g: &mut Graph<'_, F>, x: Var, block: &Block) -> Var {
        let sdo = self.config.sdo_rate;
        let mut h = x;
        if let Some(bn) = block.pre {
            h = g.relu(h);
            h = g.batch_norm(h, bn);
            h = g.spatial_dropout(h, sdo);
        }
        h = self.convs(g, h, &block.op1);
        h = g.relu(h);
        h = g.batch_norm(h, block.bn2);
        h = g.spatial_dropout(h, sdo);
        h = self.convs(g, h, &block.op2);
        match &block.shortcut {
            Shortcut::None => h,
            Shortcut::Identity => g.add(h, x),
            Shortcut::Project(p) => {
                let px = self.conv(g, x, p);
                g.add(h, px)
            }
        }
    }

    fn level(&self, g: &mut Graph<'_, F>, x: Var, level: &Level) -> Var {
        let mut outs = vec![x];
        for block in &level.blocks {
            let input = if self.config.variants.hdc {
                g.concat(&outs)
            } else {
                *outs.last().expect("nonempty")
            };
            let y = self.block(g, input, block);
            outs.push(y);
        }
        *outs.last().expect("nonempty")
    }

    fn aspp(&self, g: &mut Graph<'_, F>, x: Var, aspp: &Aspp) -> Var {
        let len = g.shape(x)[2];
        let mut branches: Vec<Var> = aspp
            .branches
            .iter()
            .map(|layer| {
                let y = self.conv(g, x, layer);
                g.relu(y)
            })
            .collect();
        let gap = g.mean_length(x);
        let pooled = self.conv(g, gap, &aspp.pool);
        let pooled = g.relu(pooled);
        branches.push(g.broadcast_length(pooled, len));
        let cat = g.concat(&branches);
        self.conv(g, cat, &aspp.fuse)
    }

    /// Builds the forward pass on `g` for a channels-first `[B, Cin, L]`
    /// input node; returns the `[B, 3, L]` sigmoid output node.
    pub fn forward_graph(&self, g: &mut Graph<'_, F>, x: Var) -> Result<Var, ModelError> {
        let [_, cin, len] = g.shape(x);
        if cin != self.config.in_channels {
            return Err(ModelError::ChannelMismatch {
                expected: self.config.in_channels,
                found: cin,
            });
        }
        let divisor = self.config.length_divisor();
        if len == 0 || len % divisor != 0 {
            return Err(ModelError::LengthNotDivisible { len, divisor });
        }
        let mut h = self.block(g, x, &self.stem);
        let mut skips = Vec::new();
        for level in &self.encoder {
            h = self.level(g, h, level);
            skips.push(h);
            h = g.avg_pool2(h);
        }
        h = self.level(g, h, &self.bottleneck);
        if let Some(aspp) = &self.aspp {
            h = self.aspp(g, h, aspp);
        }
        // last tensor per level, indexed by level, for MsU
        let last = self.config.levels - 1;
        let mut level_out = vec![None; self.config.levels];
        level_out[last] = Some(h);
        for (level, l) in self.decoder.iter().zip((0..last).rev()) {
            let up = g.upsample2(h);
            let mut operands = vec![skips[l], up];
            if self.config.variants.msu && l + 2 <= last {
                let deep = level_out[l + 2].expect("deeper level computed");
                let up2 = g.upsample2(deep);
                operands.push(g.upsample2(up2));
            }
            let cat = g.concat(&operands);
            h = self.level(g, cat, level);
            level_out[l] = Some(h);
        }
        let h = g.relu(h);
        let logits = self.conv(g, h, &self.head);
        Ok(g.sigmoid(logits))
    }

    /// Inference on a `[B, L, Cin]` batch; returns `[B, L, 3]` in (0, 1).
    pub fn forward(&self, batch: ArrayView3<'_, F>) -> Result<Array3<F>, ModelError> {
        let mut g = Graph::inference(&self.params);
        self.run(&mut g, batch)
    }

    /// Forward pass in training mode (batch statistics, dropout from `rng`).
    pub fn forward_train(
        &self,
        batch: ArrayView3<'_, F>,
        rng: ChaCha8Rng,
    ) -> Result<Array3<F>, ModelError> {
        let mut g = Graph::training(&self.params, rng);
        self.run(&mut g, batch)
    }

    fn run(&self, g: &mut Graph<'_, F>, batch: ArrayView3<'_, F>) -> Result<Array3<F>, ModelError> {
        let x = g.input(to_channels_first(batch));
        let y = self.forward_graph(g, x)?;
        Ok(from_channels_first(g.value(y)))
    }

    pub fn cast<G: Scalar>(&self) -> UNet<G> {
        UNet {
            config: self.config.clone(),
            params: self.params.cast(),
            graph: self.graph.clone(),
            stem: self.stem.clone(),
            encoder: self.encoder.clone(),
            bottleneck: self.bottleneck.clone(),
            aspp: self.aspp.clone(),
            decoder: self.decoder.clone(),
            head: self.head,
        }
    }

    /// Jaccard loss of a batch and its gradient with respect to every
    /// parameter. Uses batch statistics without dropout, so the result is a
    /// deterministic function of the parameters.
    pub fn loss_and_gradients(
        &self,
        batch: ArrayView3<'_, F>,
        labels: ArrayView3<'_, F>,
    ) -> Result<(f64, Gradients<F>), ModelError> {
        let mut g = Graph::new(&self.params, true, None);
        let x = g.input(to_channels_first(batch));
        let y = self.forward_graph(&mut g, x)?;
        let target = to_channels_first(labels);
        if g.shape(y) != target.shape {
            return Err(ModelError::Shape(format!(
                "labels {:?} vs output {:?}",
                target.shape,
                g.shape(y)
            )));
        }
        let loss = g.jaccard_loss(y, &target, JACCARD_EPS);
        let value = g.value(loss).data[0].to_f64().expect("finite");
        Ok((value, g.backward(loss)))
    }

    /// Sets the head's weights and bias to zero.
    pub fn zero_head(&mut self) {
        let ids = [Some(self.head.w), self.head.b];
        for id in ids.into_iter().flatten() {
            self.params
                .get_mut(id)
                .data
                .iter_mut()
                .for_each(|v| *v = F::zero());
        }
    }
}

/// `[B, L, C]` → `[B, C, L]`.
pub fn to_channels_first<F: Scalar>(x: ArrayView3<'_, F>) -> Tensor<F> {
    let (b, l, ch) = x.dim();
    let mut t = Tensor::zeros([b, ch, l]);
    for bi in 0..b {
        for ci in 0..ch {
            for (o, &v) in t
                .row_mut(bi, ci)
                .iter_mut()
                .zip(x.slice(ndarray::s![bi, .., ci]))
            {
                *o = v;
            }
        }
    }
    t
}

/// `[B, C, L]` → `[B, L, C]`.
pub fn from_channels_first<F: Scalar>(t: &Tensor<F>) -> Array3<F> {
    let [b, ch, l] = t.shape;
    Array3::from_shape_fn((b, l, ch), |(bi, li, ci)| t.row(bi, ci)[li])
}

/// Soft Jaccard loss on `[B, L, 3]` arrays (no gradient).
pub fn jaccard_loss<F: Scalar>(
    pred: ArrayView3<'_, F>,
    target: ArrayView3<'_, F>,
    eps: f64,
) -> Result<f64, ModelError> {
    if pred.dim() != target.dim() {
        return Err(ModelError::Shape(format!(
            "{:?} vs {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let ps = ParamStore::new();
    let mut g = Graph::inference(&ps);
    let p = g.input(to_channels_first(pred));
    let loss = g.jaccard_loss(p, &to_channels_first(target), eps);
    Ok(g.value(loss).data[0].to_f64().expect("finite"))
}

/// Parameters, optimizer moments, step counter and dropout RNG.
#[derive(Debug, Clone)]
pub struct TrainState<F> {
    pub model: UNet<F>,
    pub optimizer: Adam<F>,
    pub rng: ChaCha8Rng,
}

impl<F: Scalar> TrainState<F> {
    pub fn new(model: UNet<F>, adam: AdamConfig, seed: u64) -> Self {
        Self {
            model,
            optimizer: Adam::new(adam),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn step(&self) -> u64 {
        self.optimizer.step
    }

    /// One Adam update on the Jaccard loss of a `[B, L, Cin]` batch against
    /// `[B, L, 3]` labels. Returns the loss before the update.
    pub fn train_step(
        &mut self,
        batch: ArrayView3<'_, F>,
        labels: ArrayView3<'_, F>,
        lr: f64,
    ) -> Result<f64, ModelError> {
        let target = to_channels_first(labels);
        let (loss, grads, updates, rng) = {
            let mut g = Graph::training(&self.model.params, self.rng.clone());
            let x = g.input(to_channels_first(batch));
            let y = self.model.forward_graph(&mut g, x)?;
            if g.shape(y) != target.shape {
                return Err(ModelError::Shape(format!(
                    "labels {:?} vs output {:?}",
                    target.shape,
                    g.shape(y)
                )));
            }
            let loss = g.jaccard_loss(y, &target, JACCARD_EPS);
            let value = g.value(loss).data[0].to_f64().expect("finite");
            let grads = g.backward(loss);
            let updates = g.bn_updates().to_vec();
            (value, grads, updates, g.take_rng().expect("training rng"))
        };
        if !loss.is_finite() {
            return Err(ModelError::Divergence(format!(
                "loss is {loss} at step {}",
                self.step() + 1
            )));
        }
        self.optimizer
            .update(&mut self.model.params, &grads, lr)
            .map_err(|e| ModelError::Divergence(format!("{e} at step {}", self.step())))?;
        let momentum: F = c(BN_MOMENTUM);
        for u in &updates {
            u.apply(&mut self.model.params, momentum);
        }
        self.rng = rng;
        Ok(loss)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointParam {
    name: String,
    shape: [usize; 3],
    data: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointDoc {
    format: String,
    config: ModelConfig,
    step: u64,
    params: Vec<CheckpointParam>,
}

impl UNet<f32> {
    /// Self-describing JSON: the config and every named tensor.
    pub fn to_checkpoint(&self, step: u64) -> String {
        let params = self
            .params
            .ids()
            .map(|id| {
                let t = self.params.get(id);
                CheckpointParam {
                    name: self.params.name(id).to_string(),
                    shape: t.shape,
                    data: t.data.clone(),
                }
            })
            .collect();
        let doc = CheckpointDoc {
            format: CHECKPOINT_FORMAT.into(),
            config: self.config.clone(),
            step,
            params,
        };
        serde_json::to_string(&doc).expect("checkpoint serializes")
    }

    /// Returns the model and the training step it was saved at.
    pub fn from_checkpoint(text: &str) -> Result<(Self, u64), ModelError> {
        let doc: CheckpointDoc =
            serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if doc.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Checkpoint(format!(
                "unknown format {:?}",
                doc.format
            )));
        }
        let mut model = Self::new_relaxed(doc.config, 0)?;
        if doc.params.len() != model.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, found {}",
                model.params.len(),
                doc.params.len()
            )));
        }
        for p in doc.params {
            let id = model
                .params
                .id(&p.name)
                .ok_or_else(|| ModelError::Checkpoint(format!("unknown tensor {}", p.name)))?;
            let t = model.params.get_mut(id);
            if t.shape != p.shape || p.data.len() != t.len() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    p.name, p.shape, t.shape
                )));
            }
            t.data = p.data;
        }
        Ok((model, doc.step))
    }

    pub fn save(&self, path: &Path, step: u64) -> std::io::Result<()> {
        std::fs::write(path, self.to_checkpoint(step))
    }

    pub fn load(path: &Path) -> Result<(Self, u64), ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_checkpoint(&text)
    }
}
