//! Residual MLP models: stem, stages of identity-dimension residual blocks,
//! linear head.
//!
//! Block forward is `x + (relu(x·W1 + b1)·W2 + b2)`: the residual branch is
//! two linears around a relu, plus the untouched skip path. Zeroing all four
//! branch parameters makes the block an exact identity, which is what makes
//! zeroing and architectural dropping interchangeable.

pub mod checkpoint;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{self, LrSchedule, NodeId, Tape, Tensor};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// One stage: `blocks` residual blocks at `width`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct StageSpec {
    pub width: usize,
    pub blocks: usize,
}

/// Architecture description. `seed` fixes the parameter init.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct NetSpec {
    pub input_dim: usize,
    pub stages: Vec<StageSpec>,
    pub num_classes: usize,
    pub seed: u64,
}

impl NetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArg("input_dim must be positive".into()));
        }
        if self.stages.is_empty() {
            return Err(Error::InvalidArg("need at least one stage".into()));
        }
        if let Some(s) = self.stages.iter().find(|s| s.width == 0) {
            return Err(Error::InvalidArg(format!("zero width stage in {s:?}")));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidArg(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// All block positions, in (stage, index) order.
    pub fn block_ids(&self) -> Vec<BlockId> {
        let mut out = Vec::new();
        for (s, st) in self.stages.iter().enumerate() {
            for i in 0..st.blocks {
                out.push(BlockId { stage: s, index: i });
            }
        }
        out
    }
}

/// Position of a residual block. Blocks map width to width, so every block
/// is droppable.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId {
    pub stage: usize,
    pub index: usize,
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}b{}", self.stage, self.index)
    }
}

/// Residual-branch parameters of one block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// A linear layer position, used for adaptor attachment and layout names.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum LayerRef {
    Stem,
    Boundary(usize),
    Head,
    BlockW1(BlockId),
    BlockW2(BlockId),
}

impl fmt::Display for LayerRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerRef::Stem => write!(f, "stem"),
            LayerRef::Boundary(s) => write!(f, "boundary{s}"),
            LayerRef::Head => write!(f, "head"),
            LayerRef::BlockW1(b) => write!(f, "{b}.w1"),
            LayerRef::BlockW2(b) => write!(f, "{b}.w2"),
        }
    }
}

/// Model: spec plus parameter store plus the set of dropped blocks.
///
/// `hidden` overrides a block's hidden width after architectural filter
/// pruning; by default the hidden width equals the stage width.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: NetSpec,
    pub stem_w: Tensor,
    pub stem_b: Tensor,
    pub blocks: BTreeMap<BlockId, BlockParams>,
    pub boundaries: Vec<(Tensor, Tensor)>,
    pub head_w: Tensor,
    pub head_b: Tensor,
    pub dropped: BTreeSet<BlockId>,
    pub hidden: BTreeMap<BlockId, usize>,
}

/// Which parameter groups a training loop updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainScope {
    pub backbone: bool,
    pub head: bool,
}

impl TrainScope {
    pub const ALL: TrainScope = TrainScope { backbone: true, head: true };
    pub const BACKBONE: TrainScope = TrainScope { backbone: true, head: false };
    pub const NONE: TrainScope = TrainScope { backbone: false, head: false };
}

/// Tape node ids for every parameter of a registered model, in layout order.
pub struct TapedParams {
    pub stem_w: NodeId,
    pub stem_b: NodeId,
    pub blocks: BTreeMap<BlockId, [NodeId; 4]>,
    pub boundaries: Vec<(NodeId, NodeId)>,
    pub head_w: NodeId,
    pub head_b: NodeId,
}

/// Build a model with seeded Gaussian init, std `1/sqrt(fan_in)` per layer
/// (biases included, so zero inputs still produce nonzero logits).
pub fn build(spec: &NetSpec) -> Result<Model> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed, "net_init", 0);
    let w0 = spec.stages[0].width;
    let stem_std = 1.0 / (spec.input_dim as f64).sqrt();
    let stem_w = Tensor::randn(spec.input_dim, w0, stem_std, &mut rng);
    let stem_b = Tensor::randn(1, w0, stem_std, &mut rng);

    let mut blocks = BTreeMap::new();
    let mut boundaries = Vec::new();
    for (s, st) in spec.stages.iter().enumerate() {
        let w = st.width;
        let std = 1.0 / (w as f64).sqrt();
        for i in 0..st.blocks {
            let id = BlockId { stage: s, index: i };
            blocks.insert(
                id,
                BlockParams {
                    w1: Tensor::randn(w, w, std, &mut rng),
                    b1: Tensor::randn(1, w, std, &mut rng),
                    w2: Tensor::randn(w, w, std, &mut rng),
                    b2: Tensor::randn(1, w, std, &mut rng),
                },
            );
        }
        if s + 1 < spec.stages.len() {
            let next = spec.stages[s + 1].width;
            boundaries.push((
                Tensor::randn(w, next, std, &mut rng),
                Tensor::randn(1, next, std, &mut rng),
            ));
        }
    }

    let wl = spec.stages.last().unwrap().width;
    let head_std = 1.0 / (wl as f64).sqrt();
    let head_w = Tensor::randn(wl, spec.num_classes, head_std, &mut rng);
    let head_b = Tensor::randn(1, spec.num_classes, head_std, &mut rng);

    Ok(Model {
        spec: spec.clone(),
        stem_w,
        stem_b,
        blocks,
        boundaries,
        head_w,
        head_b,
        dropped: BTreeSet::new(),
        hidden: BTreeMap::new(),
    })
}

impl Model {
    /// Blocks still present (not dropped), in (stage, index) order.
    pub fn live_blocks(&self) -> Vec<BlockId> {
        self.spec
            .block_ids()
            .into_iter()
            .filter(|b| !self.dropped.contains(b))
            .collect()
    }

    /// Hidden width of a block's residual branch.
    pub fn hidden_dim(&self, b: BlockId) -> usize {
        self.hidden.get(&b).copied().unwrap_or(self.spec.stages[b.stage].width)
    }

    pub fn block(&self, b: BlockId) -> Result<&BlockParams> {
        self.blocks
            .get(&b)
            .ok_or_else(|| Error::InvalidArg(format!("no live block {b}")))
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.spec.input_dim {
            return Err(Error::Shape(format!(
                "input width {} does not match input_dim {}",
                x.cols(),
                self.spec.input_dim
            )));
        }
        Ok(())
    }

    /// Forward pass: `(feature, logits)` where `feature` is the output of the
    /// last stage (pre-head). Dropped blocks are skipped entirely.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_input(x)?;
        let mut h = tensor::relu(&tensor::add_row(&tensor::matmul(x, &self.stem_w)?, &self.stem_b)?);
        for (s, st) in self.spec.stages.iter().enumerate() {
            for i in 0..st.blocks {
                let id = BlockId { stage: s, index: i };
                if self.dropped.contains(&id) {
                    continue;
                }
                let p = self.block(id)?;
                let t = tensor::relu(&tensor::add_row(&tensor::matmul(&h, &p.w1)?, &p.b1)?);
                let branch = tensor::add_row(&tensor::matmul(&t, &p.w2)?, &p.b2)?;
                h = tensor::add(&h, &branch)?;
            }
            if s + 1 < self.spec.stages.len() {
                let (bw, bb) = &self.boundaries[s];
                h = tensor::relu(&tensor::add_row(&tensor::matmul(&h, bw)?, bb)?);
            }
        }
        let logits = tensor::add_row(&tensor::matmul(&h, &self.head_w)?, &self.head_b)?;
        Ok((h, logits))
    }

    pub fn feature(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.0)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.1)
    }

    /// Register all parameters as tape leaves. The trainable flag follows
    /// `scope`; the update step applies the same scope, so frozen groups
    /// never move.
    pub fn register(&self, tape: &mut Tape, scope: TrainScope) -> TapedParams {
        let bb = scope.backbone;
        let stem_w = tape.leaf(self.stem_w.clone(), bb);
        let stem_b = tape.leaf(self.stem_b.clone(), bb);
        let mut blocks = BTreeMap::new();
        for (id, p) in &self.blocks {
            blocks.insert(
                *id,
                [
                    tape.leaf(p.w1.clone(), bb),
                    tape.leaf(p.b1.clone(), bb),
                    tape.leaf(p.w2.clone(), bb),
                    tape.leaf(p.b2.clone(), bb),
                ],
            );
        }
        let boundaries = self
            .boundaries
            .iter()
            .map(|(w, b)| (tape.leaf(w.clone(), bb), tape.leaf(b.clone(), bb)))
            .collect();
        let head_w = tape.leaf(self.head_w.clone(), scope.head);
        let head_b = tape.leaf(self.head_b.clone(), scope.head);
        TapedParams { stem_w, stem_b, blocks, boundaries, head_w, head_b }
    }

    /// Taped forward mirroring [`Model::forward`] op for op, so values agree
    /// bitwise with the plain pass.
    pub fn forward_on(
        &self,
        tape: &mut Tape,
        p: &TapedParams,
        x: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        self.check_input(tape.value(x))?;
        let mut h = {
            let z = tape.matmul(x, p.stem_w)?;
            let z = tape.add_row(z, p.stem_b)?;
            tape.relu(z)
        };
        for (s, st) in self.spec.stages.iter().enumerate() {
            for i in 0..st.blocks {
                let id = BlockId { stage: s, index: i };
                if self.dropped.contains(&id) {
                    continue;
                }
                let [w1, b1, w2, b2] = p.blocks[&id];
                let t = {
                    let z = tape.matmul(h, w1)?;
                    let z = tape.add_row(z, b1)?;
                    tape.relu(z)
                };
                let branch = {
                    let z = tape.matmul(t, w2)?;
                    tape.add_row(z, b2)?
                };
                h = tape.add(h, branch)?;
            }
            if s + 1 < self.spec.stages.len() {
                let (bw, bb) = p.boundaries[s];
                let z = tape.matmul(h, bw)?;
                let z = tape.add_row(z, bb)?;
                h = tape.relu(z);
            }
        }
        let logits = {
            let z = tape.matmul(h, p.head_w)?;
            tape.add_row(z, p.head_b)?
        };
        Ok((h, logits))
    }

    /// SGD step on every parameter inside `scope`, using the last backward
    /// pass's gradients.
    pub fn apply_sgd(
        &mut self,
        tape: &Tape,
        p: &TapedParams,
        scope: TrainScope,
        lr: f64,
    ) -> Result<()> {
        if scope.backbone {
            tensor::sgd_update(&mut self.stem_w, tape.grad(p.stem_w)?, lr)?;
            tensor::sgd_update(&mut self.stem_b, tape.grad(p.stem_b)?, lr)?;
            for (id, bp) in self.blocks.iter_mut() {
                let [w1, b1, w2, b2] = p.blocks[id];
                tensor::sgd_update(&mut bp.w1, tape.grad(w1)?, lr)?;
                tensor::sgd_update(&mut bp.b1, tape.grad(b1)?, lr)?;
                tensor::sgd_update(&mut bp.w2, tape.grad(w2)?, lr)?;
                tensor::sgd_update(&mut bp.b2, tape.grad(b2)?, lr)?;
            }
            for ((w, b), (wid, bid)) in self.boundaries.iter_mut().zip(&p.boundaries) {
                tensor::sgd_update(w, tape.grad(*wid)?, lr)?;
                tensor::sgd_update(b, tape.grad(*bid)?, lr)?;
            }
        }
        if scope.head {
            tensor::sgd_update(&mut self.head_w, tape.grad(p.head_w)?, lr)?;
            tensor::sgd_update(&mut self.head_b, tape.grad(p.head_b)?, lr)?;
        }
        Ok(())
    }

    /// Weight and bias of a named linear layer.
    pub fn layer_mut(&mut self, layer: LayerRef) -> Result<(&mut Tensor, &mut Tensor)> {
        match layer {
            LayerRef::Stem => Ok((&mut self.stem_w, &mut self.stem_b)),
            LayerRef::Head => Ok((&mut self.head_w, &mut self.head_b)),
            LayerRef::Boundary(s) => {
                let n = self.boundaries.len();
                let (w, b) = self
                    .boundaries
                    .get_mut(s)
                    .ok_or_else(|| Error::InvalidArg(format!("boundary{s} of {n} boundaries")))?;
                Ok((w, b))
            }
            LayerRef::BlockW1(id) => {
                let p = self
                    .blocks
                    .get_mut(&id)
                    .ok_or_else(|| Error::InvalidArg(format!("no live block {id}")))?;
                Ok((&mut p.w1, &mut p.b1))
            }
            LayerRef::BlockW2(id) => {
                let p = self
                    .blocks
                    .get_mut(&id)
                    .ok_or_else(|| Error::InvalidArg(format!("no live block {id}")))?;
                Ok((&mut p.w2, &mut p.b2))
            }
        }
    }

    /// Output width of a layer (the dimension an `after` adaptor acts on).
    pub fn layer_out_dim(&self, layer: LayerRef) -> usize {
        match layer {
            LayerRef::Stem => self.spec.stages[0].width,
            LayerRef::Boundary(s) => self.spec.stages[s + 1].width,
            LayerRef::Head => self.spec.num_classes,
            LayerRef::BlockW1(b) => self.hidden_dim(b),
            LayerRef::BlockW2(b) => self.spec.stages[b.stage].width,
        }
    }

    /// Input width of a layer (the dimension a `before` adaptor acts on).
    pub fn layer_in_dim(&self, layer: LayerRef) -> usize {
        match layer {
            LayerRef::Stem => self.spec.input_dim,
            LayerRef::Boundary(s) => self.spec.stages[s].width,
            LayerRef::Head => self.spec.stages.last().unwrap().width,
            LayerRef::BlockW1(b) => self.spec.stages[b.stage].width,
            LayerRef::BlockW2(b) => self.hidden_dim(b),
        }
    }

    /// FLOPs per sample: `2·in·out` per live linear layer.
    pub fn count_flops(&self) -> u64 {
        let mut total = 0u64;
        for e in self.layout() {
            if e.name.ends_with(".b") || e.name.ends_with(".b1") || e.name.ends_with(".b2") {
                continue;
            }
            total += 2 * e.rows as u64 * e.cols as u64;
        }
        total
    }

    /// Flattened parameter layout: stem, then per stage its live blocks
    /// (w1,b1,w2,b2) and trailing boundary, then head.
    pub fn layout(&self) -> Vec<LayoutEntry> {
        let mut out = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, t: &Tensor, offset: &mut usize| {
            out.push(LayoutEntry { name, offset: *offset, rows: t.rows(), cols: t.cols() });
            *offset += t.len();
        };
        push("stem.w".into(), &self.stem_w, &mut offset);
        push("stem.b".into(), &self.stem_b, &mut offset);
        for (s, st) in self.spec.stages.iter().enumerate() {
            for i in 0..st.blocks {
                let id = BlockId { stage: s, index: i };
                if self.dropped.contains(&id) {
                    continue;
                }
                let p = &self.blocks[&id];
                push(format!("{id}.w1"), &p.w1, &mut offset);
                push(format!("{id}.b1"), &p.b1, &mut offset);
                push(format!("{id}.w2"), &p.w2, &mut offset);
                push(format!("{id}.b2"), &p.b2, &mut offset);
            }
            if s + 1 < self.spec.stages.len() {
                let (w, b) = &self.boundaries[s];
                push(format!("boundary{s}.w"), w, &mut offset);
                push(format!("boundary{s}.b"), b, &mut offset);
            }
        }
        push("head.w".into(), &self.head_w, &mut offset);
        push("head.b".into(), &self.head_b, &mut offset);
        out
    }

    /// Flatten all live parameters into a single vector with its layout.
    pub fn flatten(&self) -> ParamVector {
        let layout = self.layout();
        let total = layout.last().map(|e| e.offset + e.rows * e.cols).unwrap_or(0);
        let mut values = Vec::with_capacity(total);
        let mut append = |t: &Tensor| values.extend_from_slice(t.data());
        append(&self.stem_w);
        append(&self.stem_b);
        for (s, st) in self.spec.stages.iter().enumerate() {
            for i in 0..st.blocks {
                let id = BlockId { stage: s, index: i };
                if self.dropped.contains(&id) {
                    continue;
                }
                let p = &self.blocks[&id];
                append(&p.w1);
                append(&p.b1);
                append(&p.w2);
                append(&p.b2);
            }
            if s + 1 < self.spec.stages.len() {
                let (w, b) = &self.boundaries[s];
                append(w);
                append(b);
            }
        }
        append(&self.head_w);
        append(&self.head_b);
        debug_assert_eq!(values.len(), total);
        ParamVector { values, layout }
    }

    /// Replace all live parameters from a flat vector with matching layout.
    pub fn load_flat(&mut self, pv: &ParamVector) -> Result<()> {
        let expect = self.layout();
        if expect != pv.layout {
            return Err(Error::Shape(
                "parameter vector layout does not match model layout".into(),
            ));
        }
        let mut cursor = 0usize;
        let take = |t: &mut Tensor, values: &[f64], cursor: &mut usize| {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[*cursor..*cursor + n]);
            *cursor += n;
        };
        take(&mut self.stem_w, &pv.values, &mut cursor);
        take(&mut self.stem_b, &pv.values, &mut cursor);
        let stages = self.spec.stages.clone();
        for (s, st) in stages.iter().enumerate() {
            for i in 0..st.blocks {
                let id = BlockId { stage: s, index: i };
                if self.dropped.contains(&id) {
                    continue;
                }
                let p = self.blocks.get_mut(&id).unwrap();
                take(&mut p.w1, &pv.values, &mut cursor);
                take(&mut p.b1, &pv.values, &mut cursor);
                take(&mut p.w2, &pv.values, &mut cursor);
                take(&mut p.b2, &pv.values, &mut cursor);
            }
            if s + 1 < stages.len() {
                let (w, b) = &mut self.boundaries[s];
                take(w, &pv.values, &mut cursor);
                take(b, &pv.values, &mut cursor);
            }
        }
        take(&mut self.head_w, &pv.values, &mut cursor);
        take(&mut self.head_b, &pv.values, &mut cursor);
        Ok(())
    }
}

/// Rebuild a model from `(spec, dropped, hidden)` and a flat vector.
pub fn unflatten(
    spec: &NetSpec,
    dropped: &BTreeSet<BlockId>,
    hidden: &BTreeMap<BlockId, usize>,
    pv: &ParamVector,
) -> Result<Model> {
    let mut m = build(spec)?;
    for b in dropped {
        if !m.blocks.contains_key(b) {
            return Err(Error::InvalidArg(format!("dropped block {b} not in spec")));
        }
        m.blocks.remove(b);
        m.dropped.insert(*b);
    }
    for (b, h) in hidden {
        if m.dropped.contains(b) || !m.blocks.contains_key(b) {
            return Err(Error::InvalidArg(format!("hidden override for missing block {b}")));
        }
        let w = spec.stages[b.stage].width;
        let p = m.blocks.get_mut(b).unwrap();
        p.w1 = Tensor::zeros(w, *h);
        p.b1 = Tensor::zeros(1, *h);
        p.w2 = Tensor::zeros(*h, w);
        m.hidden.insert(*b, *h);
    }
    m.load_flat(pv)?;
    Ok(m)
}

/// One named span of a flattened parameter vector.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct LayoutEntry {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Flat parameter values plus the layout that maps them back to tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Vec<LayoutEntry>,
}

impl ParamVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.layout == other.layout
    }
}

/// Train a model on the dataset's train split with cross-entropy (T=1).
///
/// Batches are drawn without replacement per iteration from a stream derived
/// from `seed_val`; `batch` is clipped to the train size. Returns the model
/// and the per-iteration loss trace.
pub fn train_teacher(
    mut model: Model,
    ds: &Dataset,
    iters: usize,
    sched: &LrSchedule,
    batch: usize,
    seed_val: u64,
) -> Result<(Model, Vec<f64>)> {
    if ds.train.is_empty() {
        return Err(Error::InvalidArg("empty dataset".into()));
    }
    if batch == 0 {
        return Err(Error::InvalidArg("batch must be positive".into()));
    }
    let b = batch.min(ds.train.len());
    let mut trace = Vec::with_capacity(iters);
    for it in 0..iters {
        let mut rng = seed::rng(seed_val, "teacher_batch", it as u64);
        let pick = rand::seq::index::sample(&mut rng, ds.train.len(), b);
        let rows: Vec<usize> = pick.iter().map(|i| ds.train[i]).collect();
        let x = ds.x.select_rows(&rows);
        let labels: Vec<u32> = rows.iter().map(|&r| ds.labels[r]).collect();

        let mut tape = Tape::new();
        let xid = tape.constant(x);
        let tp = model.register(&mut tape, TrainScope::ALL);
        let (_, logits) = model.forward_on(&mut tape, &tp, xid)?;
        let loss = tape.softmax_ce_hard(logits, &labels, 1.0)?;
        trace.push(tape.scalar(loss)?);
        tape.backward(loss)?;
        model.apply_sgd(&tape, &tp, TrainScope::ALL, sched.lr(it))?;
    }
    Ok((model, trace))
}

/// Like [`train_teacher`], but with a per-block weight decay that ramps
/// linearly from 0 for the first block to `max_decay` for the last (in
/// `block_ids` order). After each step every parameter of block `i` is
/// shrunk by `1 - 2 * decay_i * lr`, the plain L2 coupling.
///
/// The ramp gives the trained network a deliberate importance spectrum:
/// heavily decayed blocks end up with small contributions that cost little
/// to remove, undecayed blocks carry the function. With `max_decay = 0`
/// the result is bit-identical to [`train_teacher`].
pub fn train_teacher_decay_ramp(
    mut model: Model,
    ds: &Dataset,
    iters: usize,
    sched: &LrSchedule,
    batch: usize,
    max_decay: f64,
    seed_val: u64,
) -> Result<(Model, Vec<f64>)> {
    if ds.train.is_empty() {
        return Err(Error::InvalidArg("empty dataset".into()));
    }
    if batch == 0 {
        return Err(Error::InvalidArg("batch must be positive".into()));
    }
    if !(max_decay >= 0.0) {
        return Err(Error::InvalidArg(format!(
            "max_decay must be nonnegative, got {max_decay}"
        )));
    }
    let ids = model.spec.block_ids();
    let denom = (ids.len() - 1).max(1) as f64;
    let b = batch.min(ds.train.len());
    let mut trace = Vec::with_capacity(iters);
    for it in 0..iters {
        let mut rng = seed::rng(seed_val, "teacher_batch", it as u64);
        let pick = rand::seq::index::sample(&mut rng, ds.train.len(), b);
        let rows: Vec<usize> = pick.iter().map(|i| ds.train[i]).collect();
        let x = ds.x.select_rows(&rows);
        let labels: Vec<u32> = rows.iter().map(|&r| ds.labels[r]).collect();

        let mut tape = Tape::new();
        let xid = tape.constant(x);
        let tp = model.register(&mut tape, TrainScope::ALL);
        let (_, logits) = model.forward_on(&mut tape, &tp, xid)?;
        let loss = tape.softmax_ce_hard(logits, &labels, 1.0)?;
        trace.push(tape.scalar(loss)?);
        tape.backward(loss)?;
        let lr = sched.lr(it);
        model.apply_sgd(&tape, &tp, TrainScope::ALL, lr)?;

        for (pos, &id) in ids.iter().enumerate() {
            let decay = max_decay * pos as f64 / denom;
            let factor = (1.0 - 2.0 * decay * lr).max(0.0);
            if factor < 1.0 {
                let block = model.blocks.get_mut(&id).unwrap();
                for t in [&mut block.w1, &mut block.b1, &mut block.w2, &mut block.b2] {
                    for v in t.data_mut() {
                        *v *= factor;
                    }
                }
            }
        }
    }
    Ok((model, trace))
}
