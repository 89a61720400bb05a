//! Compression edits: block zeroing and dropping, L1 filter pruning, and
//! identity-initialized adaptors with exact fusion.
//!
//! Zeroing a block's branch and dropping the block compute the same
//! function; zeroing keeps the parameter layout (useful for interpolation),
//! dropping removes the compute.

use crate::error::{Error, Result};
use crate::network::{BlockId, LayerRef, Model, TapedParams, TrainScope};
use crate::tensor::{self, NodeId, Tape, Tensor};
use serde::{Deserialize, Serialize};

/// Zero the residual branch of a live block in place.
pub fn zero_block(model: &mut Model, b: BlockId) -> Result<()> {
    let h = model.hidden_dim(b);
    let w = model.spec.stages[b.stage].width;
    let p = model
        .blocks
        .get_mut(&b)
        .ok_or_else(|| Error::InvalidArg(format!("no live block {b}")))?;
    p.w1 = Tensor::zeros(w, h);
    p.b1 = Tensor::zeros(1, h);
    p.w2 = Tensor::zeros(h, w);
    p.b2 = Tensor::zeros(1, w);
    Ok(())
}

/// Remove a live block from the architecture.
pub fn drop_block(model: &mut Model, b: BlockId) -> Result<()> {
    if model.blocks.remove(&b).is_none() {
        return Err(Error::InvalidArg(format!("no live block {b}")));
    }
    model.dropped.insert(b);
    model.hidden.remove(&b);
    Ok(())
}

/// Hidden units to prune in one block: the `floor(ratio * h)` units with the
/// smallest L1 norm of incoming weights (a column of the block's first
/// linear). Ties break toward the lower index, and at least one unit always
/// survives. Returned indices are ascending.
pub fn pruned_unit_selection(w1: &Tensor, ratio: f64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidArg(format!("prune ratio {ratio} outside [0, 1]")));
    }
    let h = w1.cols();
    let count = ((ratio * h as f64).floor() as usize).min(h.saturating_sub(1));
    let mut scored: Vec<(f64, usize)> = (0..h)
        .map(|j| ((0..w1.rows()).map(|i| w1.get(i, j).abs()).sum(), j))
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut picked: Vec<usize> = scored.into_iter().take(count).map(|(_, j)| j).collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Zero the selected fraction of hidden units in every live block: the unit's
/// incoming column, its bias, and its outgoing row. Shapes are unchanged.
pub fn prune_filters_zeroed(model: &mut Model, ratio: f64) -> Result<()> {
    let ids: Vec<BlockId> = model.blocks.keys().copied().collect();
    for b in ids {
        let p = model.blocks.get_mut(&b).unwrap();
        let units = pruned_unit_selection(&p.w1, ratio)?;
        for &j in &units {
            for i in 0..p.w1.rows() {
                p.w1.set(i, j, 0.0);
            }
            p.b1.set(0, j, 0.0);
            for k in 0..p.w2.cols() {
                p.w2.set(j, k, 0.0);
            }
        }
    }
    Ok(())
}

/// Filter pruning that actually removes the selected units, shrinking each
/// block's hidden width. Computes the same function as the zeroed form.
pub fn prune_filters_shrunk(model: &Model, ratio: f64) -> Result<Model> {
    let mut out = model.clone();
    let ids: Vec<BlockId> = out.blocks.keys().copied().collect();
    for b in ids {
        let p = &model.blocks[&b];
        let pruned = pruned_unit_selection(&p.w1, ratio)?;
        if pruned.is_empty() {
            continue;
        }
        let keep: Vec<usize> =
            (0..p.w1.cols()).filter(|j| !pruned.contains(j)).collect();
        let w = p.w1.rows();
        let h2 = keep.len();
        let mut w1 = Tensor::zeros(w, h2);
        let mut b1 = Tensor::zeros(1, h2);
        let mut w2 = Tensor::zeros(h2, p.w2.cols());
        for (jj, &j) in keep.iter().enumerate() {
            for i in 0..w {
                w1.set(i, jj, p.w1.get(i, j));
            }
            b1.set(0, jj, p.b1.get(0, j));
            for k in 0..p.w2.cols() {
                w2.set(jj, k, p.w2.get(j, k));
            }
        }
        let q = out.blocks.get_mut(&b).unwrap();
        q.w1 = w1;
        q.b1 = b1;
        q.w2 = w2;
        out.hidden.insert(b, h2);
    }
    Ok(out)
}

/// Prune ratio whose effective compute removal lands closest to
/// `target_flops` on this model, scanned at percent granularity. The unit
/// count per block is a floor of `ratio * width`, so exact hits are the
/// exception; callers compare budgets, not identities.
pub fn matched_filter_ratio(model: &Model, target_flops: u64) -> Result<f64> {
    let total = model.count_flops();
    let mut best = (u64::MAX, 0.0);
    for step in 1..100u32 {
        let r = f64::from(step) / 100.0;
        let removed = total - prune_filters_shrunk(model, r)?.count_flops();
        let miss = removed.abs_diff(target_flops);
        if miss < best.0 {
            best = (miss, r);
        }
    }
    Ok(best.1)
}

/// How far adaptor insertion reaches into the dropped block's stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Radius {
    /// Same-stage blocks within this index distance get adaptors;
    /// `Blocks(0)` means only the stage-entry and stage-exit layers.
    Blocks(usize),
    All,
}

impl Radius {
    fn covers(self, dist: usize) -> bool {
        match self {
            Radius::All => true,
            Radius::Blocks(r) => dist <= r,
        }
    }
}

/// Which side of a linear layer an adaptor multiplies.
///
/// With row-vector activations, `Before` maps the layer input (`x·A` feeds
/// the layer) and `After` maps the pre-activation output (`(x·W + b)·A`,
/// applied before any relu).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Before,
    After,
}

/// One square adaptor attached to a linear layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Adaptor {
    pub layer: LayerRef,
    pub side: Side,
    pub a: Tensor,
}

/// A model with a dropped block and the identity-initialized adaptors placed
/// around the gap. At initialization the adapted model computes the same
/// function as the plain dropped model.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedModel {
    pub model: Model,
    pub adaptors: Vec<Adaptor>,
}

/// Adaptor attachment points for one dropped block, in forward order:
/// the layer feeding the stage, covered same-stage blocks, the layer
/// consuming the stage.
pub fn adaptor_sites(model: &Model, dropped: BlockId, radius: Radius) -> Vec<(LayerRef, Side)> {
    let s = dropped.stage;
    let mut sites = Vec::new();
    let incoming = if s == 0 { LayerRef::Stem } else { LayerRef::Boundary(s - 1) };
    sites.push((incoming, Side::After));
    for i in 0..model.spec.stages[s].blocks {
        let b = BlockId { stage: s, index: i };
        if model.dropped.contains(&b) {
            continue;
        }
        let dist = i.abs_diff(dropped.index);
        if !radius.covers(dist) {
            continue;
        }
        let side = if i < dropped.index { Side::After } else { Side::Before };
        sites.push((LayerRef::BlockW1(b), side));
        sites.push((LayerRef::BlockW2(b), side));
    }
    let outgoing = if s + 1 == model.spec.stages.len() {
        LayerRef::Head
    } else {
        LayerRef::Boundary(s)
    };
    sites.push((outgoing, Side::Before));
    sites
}

/// Attach identity adaptors around an already-dropped block.
pub fn insert_adaptors(model: &Model, dropped: BlockId, radius: Radius) -> Result<AdaptedModel> {
    if !model.dropped.contains(&dropped) {
        return Err(Error::InvalidArg(format!("block {dropped} is not dropped")));
    }
    let adaptors = adaptor_sites(model, dropped, radius)
        .into_iter()
        .map(|(layer, side)| {
            let dim = match side {
                Side::Before => model.layer_in_dim(layer),
                Side::After => model.layer_out_dim(layer),
            };
            Adaptor { layer, side, a: Tensor::identity(dim) }
        })
        .collect();
    Ok(AdaptedModel { model: model.clone(), adaptors })
}

/// Tape handles for an adapted model: frozen backbone plus trainable
/// adaptor matrices, parallel to `AdaptedModel::adaptors`.
pub struct TapedAdapted {
    pub params: TapedParams,
    pub adaptors: Vec<NodeId>,
}

impl AdaptedModel {
    fn find(&self, layer: LayerRef, side: Side) -> Option<usize> {
        self.adaptors.iter().position(|ad| ad.layer == layer && ad.side == side)
    }

    /// Apply one linear layer with its adaptor hooks: `Before` maps the
    /// input, `After` maps the pre-activation output.
    fn linear(&self, x: &Tensor, layer: LayerRef, w: &Tensor, b: &Tensor) -> Result<Tensor> {
        let x = match self.find(layer, Side::Before) {
            Some(i) => tensor::matmul(x, &self.adaptors[i].a)?,
            None => x.clone(),
        };
        let y = tensor::add_row(&tensor::matmul(&x, w)?, b)?;
        match self.find(layer, Side::After) {
            Some(i) => tensor::matmul(&y, &self.adaptors[i].a),
            None => Ok(y),
        }
    }

    /// Forward pass with adaptors. The returned feature is the head input,
    /// so an adaptor at the head participates in feature mimicking.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let m = &self.model;
        let mut h = tensor::relu(&self.linear(x, LayerRef::Stem, &m.stem_w, &m.stem_b)?);
        for (s, st) in m.spec.stages.iter().enumerate() {
            for i in 0..st.blocks {
                let id = BlockId { stage: s, index: i };
                if m.dropped.contains(&id) {
                    continue;
                }
                let p = &m.blocks[&id];
                let t = tensor::relu(&self.linear(&h, LayerRef::BlockW1(id), &p.w1, &p.b1)?);
                let branch = self.linear(&t, LayerRef::BlockW2(id), &p.w2, &p.b2)?;
                h = tensor::add(&h, &branch)?;
            }
            if s + 1 < m.spec.stages.len() {
                let (bw, bb) = &m.boundaries[s];
                h = tensor::relu(&self.linear(&h, LayerRef::Boundary(s), bw, bb)?);
            }
        }
        let feat = match self.find(LayerRef::Head, Side::Before) {
            Some(i) => tensor::matmul(&h, &self.adaptors[i].a)?,
            None => h,
        };
        let mut logits = tensor::add_row(&tensor::matmul(&feat, &m.head_w)?, &m.head_b)?;
        if let Some(i) = self.find(LayerRef::Head, Side::After) {
            logits = tensor::matmul(&logits, &self.adaptors[i].a)?;
        }
        Ok((feat, logits))
    }

    pub fn feature(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.0)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.1)
    }

    /// Register on a tape: backbone frozen, adaptors trainable.
    pub fn register(&self, tape: &mut Tape) -> TapedAdapted {
        let params = self.model.register(tape, TrainScope::NONE);
        let adaptors =
            self.adaptors.iter().map(|ad| tape.leaf(ad.a.clone(), true)).collect();
        TapedAdapted { params, adaptors }
    }

    fn linear_on(
        &self,
        tape: &mut Tape,
        t: &TapedAdapted,
        x: NodeId,
        layer: LayerRef,
        w: NodeId,
        b: NodeId,
    ) -> Result<NodeId> {
        let x = match self.find(layer, Side::Before) {
            Some(i) => tape.matmul(x, t.adaptors[i])?,
            None => x,
        };
        let z = tape.matmul(x, w)?;
        let y = tape.add_row(z, b)?;
        match self.find(layer, Side::After) {
            Some(i) => tape.matmul(y, t.adaptors[i]),
            None => Ok(y),
        }
    }

    /// Taped forward mirroring [`AdaptedModel::forward`] op for op.
    pub fn forward_on(
        &self,
        tape: &mut Tape,
        t: &TapedAdapted,
        x: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let m = &self.model;
        let z = self.linear_on(tape, t, x, LayerRef::Stem, t.params.stem_w, t.params.stem_b)?;
        let mut h = tape.relu(z);
        for (s, st) in m.spec.stages.iter().enumerate() {
            for i in 0..st.blocks {
                let id = BlockId { stage: s, index: i };
                if m.dropped.contains(&id) {
                    continue;
                }
                let [w1, b1, w2, b2] = t.params.blocks[&id];
                let z = self.linear_on(tape, t, h, LayerRef::BlockW1(id), w1, b1)?;
                let tt = tape.relu(z);
                let branch = self.linear_on(tape, t, tt, LayerRef::BlockW2(id), w2, b2)?;
                h = tape.add(h, branch)?;
            }
            if s + 1 < m.spec.stages.len() {
                let (bw, bb) = t.params.boundaries[s];
                let z = self.linear_on(tape, t, h, LayerRef::Boundary(s), bw, bb)?;
                h = tape.relu(z);
            }
        }
        let feat = match self.find(LayerRef::Head, Side::Before) {
            Some(i) => tape.matmul(h, t.adaptors[i])?,
            None => h,
        };
        let z = tape.matmul(feat, t.params.head_w)?;
        let mut logits = tape.add_row(z, t.params.head_b)?;
        if let Some(i) = self.find(LayerRef::Head, Side::After) {
            logits = tape.matmul(logits, t.adaptors[i])?;
        }
        Ok((feat, logits))
    }

    /// SGD step on the adaptor matrices only.
    pub fn apply_sgd(&mut self, tape: &Tape, t: &TapedAdapted, lr: f64) -> Result<()> {
        for (ad, id) in self.adaptors.iter_mut().zip(&t.adaptors) {
            tensor::sgd_update(&mut ad.a, tape.grad(*id)?, lr)?;
        }
        Ok(())
    }

    /// Fold every adaptor into its layer's weights, producing a plain model
    /// that computes the same logits. `After` folds as `W·A, b·A`; `Before`
    /// folds as `A·W` with the bias untouched.
    pub fn fuse(&self) -> Result<Model> {
        let mut out = self.model.clone();
        for ad in &self.adaptors {
            let (w, b) = out.layer_mut(ad.layer)?;
            match ad.side {
                Side::After => {
                    *w = tensor::matmul(w, &ad.a)?;
                    *b = tensor::matmul(b, &ad.a)?;
                }
                Side::Before => {
                    *w = tensor::matmul(&ad.a, w)?;
                }
            }
        }
        Ok(out)
    }
}
