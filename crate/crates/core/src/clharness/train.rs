//! One task of class-incremental training with synthetic replay.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::buffer::SyntheticBuffer;
use super::losses::{hkd_loss, rkd_loss, tft_loss, tkd_loss};
use super::tasks::LabeledSet;
use crate::netcore::{softmax_cross_entropy, HeadMode, NetOptimizer, Network, ParamGrads, Tensor};
use crate::seed::{child_seed, rng_from};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CLLossWeights {
    pub hkd: f64,
    pub rkd: f64,
    pub ft: f64,
    pub tkd: f64,
    pub tft: f64,
    /// Multiply the distillation weights by `sqrt(old / new)` classes.
    pub scaling: bool,
}

impl CLLossWeights {
    pub fn linear_defaults() -> Self {
        Self {
            hkd: 0.15,
            rkd: 0.5,
            ft: 1.5,
            tkd: 0.0,
            tft: 0.0,
            scaling: true,
        }
    }

    pub fn anchor_defaults() -> Self {
        Self {
            hkd: 0.1,
            rkd: 0.0,
            ft: 0.0,
            tkd: 0.2,
            tft: 0.001,
            scaling: true,
        }
    }

    pub fn zeros() -> Self {
        Self {
            hkd: 0.0,
            rkd: 0.0,
            ft: 0.0,
            tkd: 0.0,
            tft: 0.0,
            scaling: false,
        }
    }

    pub fn defaults_for(mode: HeadMode) -> Self {
        match mode {
            HeadMode::Linear => Self::linear_defaults(),
            HeadMode::Anchor => Self::anchor_defaults(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.hkd, self.rkd, self.ft, self.tkd, self.tft]
            .iter()
            .any(|w| !(*w >= 0.0 && w.is_finite()))
        {
            return Err(Error::InvalidArgument(
                "loss weights must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Factor applied to the distillation weights for a task with `new`
    /// classes after `old` classes.
    pub fn distill_scale(&self, old: usize, new: usize) -> f64 {
        if self.scaling && old > 0 && new > 0 {
            (old as f64 / new as f64).sqrt()
        } else {
            1.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.01,
            batch_size: 32,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean total loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Appends head columns for `count` new classes: random rows in linear
/// mode, the given unit anchors in anchor mode.
pub fn prepare_head<R: Rng + ?Sized>(
    net: &mut Network,
    count: usize,
    anchors: Option<&[Vec<f64>]>,
    rng: &mut R,
) -> Result<()> {
    match net.head.mode() {
        HeadMode::Linear => net.head.add_linear_classes(count, rng),
        HeadMode::Anchor => {
            let a = anchors
                .ok_or_else(|| Error::InvalidArgument("anchor head needs class anchors".into()))?;
            if a.len() != count {
                return Err(Error::InvalidArgument(format!(
                    "{} anchors for {count} classes",
                    a.len()
                )));
            }
            net.head.add_anchor_classes(a)
        }
    }
}

/// Copies the columns `0..old` of `[n, k]` logits.
fn old_columns(logits: &[f64], n: usize, k: usize, old: usize) -> Tensor {
    let mut out = Vec::with_capacity(n * old);
    for row in logits.chunks(k) {
        out.extend_from_slice(&row[..old]);
    }
    Tensor::from_raw(vec![n, old], out)
}

struct ReplayCursor {
    set: LabeledSet,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl ReplayCursor {
    fn next_batch(&mut self, size: usize) -> LabeledSet {
        let mut idx = Vec::with_capacity(size);
        while idx.len() < size.min(self.order.len()) {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            idx.push(self.order[self.pos]);
            self.pos += 1;
        }
        self.set.select(&idx)
    }
}

/// Trains `net` on one task. `data` holds the new-task samples with labels
/// in `new_classes` (contiguous, following every old column). Each step
/// pairs a new-data batch with a replay batch when the buffer is nonempty.
#[allow(clippy::too_many_arguments)]
pub fn train_task(
    net: &mut Network,
    data: &LabeledSet,
    new_classes: &[usize],
    buffer: &SyntheticBuffer,
    teacher: Option<&Network>,
    weights: &CLLossWeights,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    weights.validate()?;
    let old = *new_classes
        .first()
        .ok_or_else(|| Error::InvalidArgument("task has no classes".into()))?;
    let k = net.classes();
    if new_classes.iter().enumerate().any(|(i, &c)| c != old + i) || old + new_classes.len() != k {
        return Err(Error::InvalidArgument(format!(
            "new classes {new_classes:?} must be the last columns of a {k}-class head"
        )));
    }
    if data.is_empty() || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "training needs data and a positive batch size".into(),
        ));
    }
    let teacher = match (old, teacher) {
        (0, _) => None,
        (_, Some(t)) => {
            if t.classes() != old || t.feature_dim() != net.feature_dim() {
                return Err(Error::InvalidArgument(format!(
                    "teacher has {} classes, expected {old}",
                    t.classes()
                )));
            }
            Some(t)
        }
        (_, None) => {
            return Err(Error::InvalidArgument(
                "a teacher model is required after the first task".into(),
            ))
        }
    };
    if old == 0 && !buffer.is_empty() {
        return Err(Error::InvalidArgument(
            "first task cannot replay a buffer".into(),
        ));
    }
    if buffer.entries.iter().any(|e| e.class >= old) {
        return Err(Error::InvalidArgument(
            "buffer holds samples of non-old classes".into(),
        ));
    }
    let anchor = net.head.mode() == HeadMode::Anchor;
    let s = weights.distill_scale(old, new_classes.len());
    let (w_hkd, w_rkd) = (weights.hkd * s, weights.rkd * s);
    let mut rng = rng_from(seed);
    let mut cursor = match teacher {
        Some(_) if !buffer.is_empty() => {
            let set = buffer.as_labeled()?;
            let order = (0..set.len()).collect();
            Some(ReplayCursor {
                pos: set.len(),
                set,
                order,
                rng: rng_from(child_seed(seed, 1)),
            })
        }
        _ => None,
    };
    let old_anchors = teacher.filter(|_| anchor).map(|t| t.head.weight().to_vec());
    let mut opt = NetOptimizer::new(net, cfg.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = data.select(chunk);
            let b = xb.len();
            let mut grads = ParamGrads::zeros(net);
            let fwd = net.forward(&xb.features)?;
            let (mut total, g) =
                softmax_cross_entropy(&fwd.logits, b, k, &xb.labels, Some(new_classes))?;
            let (_, pg) = net.backward(&fwd, Some(&g), None, true);
            grads.add_scaled(&pg, 1.0);

            let replay = match (&mut cursor, teacher) {
                (Some(c), Some(t)) => Some((c.next_batch(cfg.batch_size), t)),
                _ => None,
            };
            // (mean loss, head-only gradient, rows) per batch
            let mut ft_parts: Vec<(f64, ParamGrads, usize)> = Vec::new();
            if weights.ft > 0.0 && old > 0 {
                let (v, g) = softmax_cross_entropy(&fwd.logits, b, k, &xb.labels, None)?;
                ft_parts.push((v, net.head_only_grad(&fwd, &g), b));
            }
            if let Some((rb, t)) = &replay {
                let br = rb.len();
                let fr = net.forward(&rb.features)?;
                let tf = t.forward(&rb.features)?;
                let mut gl = vec![0.0; br * k];
                let mut gf = None;
                if w_hkd > 0.0 {
                    let student = old_columns(&fr.logits, br, k, old);
                    let teacher_logits = Tensor::from_raw(vec![br, old], tf.logits.clone());
                    let (v, g) = hkd_loss(&student, &teacher_logits)?;
                    total += w_hkd * v;
                    for (row, grow) in gl.chunks_mut(k).zip(g.data().chunks(old)) {
                        for (a, b) in row.iter_mut().zip(grow) {
                            *a += w_hkd * b;
                        }
                    }
                }
                if w_rkd > 0.0 {
                    let d = net.feature_dim();
                    let student = Tensor::from_raw(vec![br, d], fr.features().to_vec());
                    let teacher_feats = Tensor::from_raw(vec![br, d], tf.features().to_vec());
                    let (v, g) = rkd_loss(&student, &teacher_feats)?;
                    total += w_rkd * v;
                    gf = Some(g.data().iter().map(|x| w_rkd * x).collect::<Vec<f64>>());
                }
                if w_hkd > 0.0 || w_rkd > 0.0 {
                    let (_, pg) = net.backward(&fr, Some(&gl), gf.as_deref(), true);
                    grads.add_scaled(&pg, 1.0);
                }
                if weights.ft > 0.0 {
                    let (v, g) = softmax_cross_entropy(&fr.logits, br, k, &rb.labels, None)?;
                    ft_parts.push((v, net.head_only_grad(&fr, &g), br));
                }
                if anchor && weights.tft > 0.0 {
                    let feats =
                        Tensor::from_raw(vec![br, net.feature_dim()], fr.features().to_vec());
                    let (v, hg) = tft_loss(&net.head, &feats, &rb.labels)?;
                    total += weights.tft * v;
                    for (a, b) in grads.head.weight.iter_mut().zip(&hg.weight) {
                        *a += weights.tft * b;
                    }
                }
            }
            // cross-entropy over the union of the new and replay batches
            let rows: usize = ft_parts.iter().map(|p| p.2).sum();
            for (v, part, n) in &ft_parts {
                let w = weights.ft * *n as f64 / rows as f64;
                total += w * v;
                grads.add_scaled(part, w);
            }
            if let (Some(prev), true) = (&old_anchors, weights.tkd > 0.0) {
                let d = net.feature_dim();
                let prev = Tensor::from_raw(vec![old, d], prev.clone());
                let cur = Tensor::from_raw(vec![old, d], net.head.weight()[..old * d].to_vec());
                let (v, g) = tkd_loss(&prev, &cur)?;
                total += weights.tkd * v;
                for (a, b) in grads.head.weight.iter_mut().zip(g.data()) {
                    *a += weights.tkd * b;
                }
            }
            if !total.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            opt.step(net, &grads)?;
            epoch_loss += total;
            batches += 1;
        }
        report.epoch_losses.push(epoch_loss / batches.max(1) as f64);
    }
    Ok(report)
}
