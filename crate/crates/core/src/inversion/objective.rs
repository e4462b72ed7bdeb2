//! Layer-wise and full-model inversion objectives.

use super::kl::batch_prior_kl;
use super::tv::total_variation_with_grad;
use crate::netcore::{softmax_cross_entropy, Layer, LayerStats, Network, Tensor};
use crate::{Error, Result};

/// Per-term scaling factors. `alpha[l]` weighs the prior constraint on
/// level `l` (the input of unit `l + 1`, or the backbone output for
/// `l = L`); `beta[l - 1]` weighs the output match of unit `l`, and
/// `beta[L]` the top-level match (cross-entropy or feature MSE).
#[derive(Clone, Debug, PartialEq)]
pub struct InversionWeights {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: f64,
}

impl InversionWeights {
    pub fn uniform(depth: usize, alpha: f64, beta: f64, gamma: f64) -> Self {
        Self {
            alpha: vec![alpha; depth + 1],
            beta: vec![beta; depth + 1],
            gamma,
        }
    }

    pub fn zeros(depth: usize) -> Self {
        Self::uniform(depth, 0.0, 0.0, 0.0)
    }

    pub fn validate(&self, depth: usize) -> Result<()> {
        if self.alpha.len() != depth + 1 || self.beta.len() != depth + 1 {
            return Err(Error::InvalidArgument(format!(
                "weights need {} entries per list for depth {depth}",
                depth + 1
            )));
        }
        if self
            .alpha
            .iter()
            .chain(&self.beta)
            .chain(std::iter::once(&self.gamma))
            .any(|w| !(*w >= 0.0) || !w.is_finite())
        {
            return Err(Error::InvalidArgument(
                "inversion weights must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// What the top of the network should produce for each synthetic sample.
#[derive(Clone, Debug, PartialEq)]
pub enum InversionTarget {
    /// One class id per sample.
    Labels(Vec<usize>),
    /// One backbone output vector per sample, `[n, feature_dim]`.
    Features(Tensor),
}

impl InversionTarget {
    pub fn class(label: usize, n: usize) -> Self {
        InversionTarget::Labels(vec![label; n])
    }

    pub fn batch_size(&self) -> usize {
        match self {
            InversionTarget::Labels(l) => l.len(),
            InversionTarget::Features(f) => f.rows(),
        }
    }

    pub(crate) fn check(&self, net: &Network) -> Result<()> {
        match self {
            InversionTarget::Labels(labels) => {
                if let Some(y) = labels.iter().find(|&&y| y >= net.classes()) {
                    return Err(Error::InvalidArgument(format!(
                        "label {y} outside the {} known classes",
                        net.classes()
                    )));
                }
            }
            InversionTarget::Features(f) => {
                if f.row_len() != net.feature_dim() {
                    return Err(Error::Shape(format!(
                        "feature target has width {}, backbone output is {}",
                        f.row_len(),
                        net.feature_dim()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Loss value split into its components.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub kl: f64,
    pub matching: f64,
    pub tv: f64,
}

/// `(1/n) sum_i ||pred_i - target_i||^2 / dim` and its gradient.
pub(crate) fn per_element_mse(
    pred: &[f64],
    target: &[f64],
    n: usize,
    dim: usize,
) -> (f64, Vec<f64>) {
    let scale = 1.0 / (n * dim) as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let e = p - t;
            loss += e * e;
            2.0 * e * scale
        })
        .collect();
    (loss * scale, grad)
}

/// Objective for inverting a single layer unit:
/// `alpha * KL(batch stats of candidate || stored) + beta * mse(layer(candidate), target)`.
///
/// Components in the returned parts are already weighted.
pub fn layer_inversion_objective(
    layer: &Layer,
    candidate: &Tensor,
    target: &Tensor,
    stats: &LayerStats,
    alpha: f64,
    beta: f64,
) -> Result<(LossParts, Tensor)> {
    let n = candidate.rows();
    if n < 2 {
        return Err(Error::BatchTooSmall { got: n, need: 2 });
    }
    let (din, dout) = (layer.in_dim(), layer.out_dim());
    if candidate.row_len() != din {
        return Err(Error::Shape(format!(
            "candidate width {} does not match layer input {din}",
            candidate.row_len()
        )));
    }
    if target.rows() != n || target.row_len() != dout {
        return Err(Error::Shape(format!(
            "target must be [{n}, {dout}], got {:?}",
            target.shape()
        )));
    }
    let mut grad = vec![0.0; n * din];
    let mut parts = LossParts::default();
    if alpha > 0.0 {
        let (kl, g) = batch_prior_kl(candidate.data(), n, din, stats)?;
        parts.kl = alpha * kl;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += alpha * b);
    }
    if beta > 0.0 {
        let (z, y) = layer.forward_raw(candidate.data(), n);
        let (mse, gy) = per_element_mse(&y, target.data(), n, dout);
        parts.matching = beta * mse;
        let (gx, _) = layer.backward_raw(candidate.data(), &z, &gy, n, false);
        grad.iter_mut().zip(&gx).for_each(|(a, b)| *a += beta * b);
    }
    parts.total = parts.kl + parts.matching;
    Ok((parts, Tensor::from_raw(candidate.shape().to_vec(), grad)))
}

/// Top-level objective on the backbone output for label targets:
/// `alpha_L * KL(o_L batch || stored) + beta_L * CE(head(o_L), y)`.
pub fn top_label_objective(
    net: &Network,
    features: &Tensor,
    labels: &[usize],
    w: &InversionWeights,
) -> Result<(LossParts, Tensor)> {
    let n = features.rows();
    if n < 2 {
        return Err(Error::BatchTooSmall { got: n, need: 2 });
    }
    let (l, d, k) = (net.depth(), net.feature_dim(), net.classes());
    let mut grad = vec![0.0; n * d];
    let mut parts = LossParts::default();
    if w.alpha[l] > 0.0 {
        let (kl, g) = batch_prior_kl(features.data(), n, d, net.require_stats(l)?)?;
        parts.kl = w.alpha[l] * kl;
        grad.iter_mut()
            .zip(&g)
            .for_each(|(a, b)| *a += w.alpha[l] * b);
    }
    if w.beta[l] > 0.0 {
        let logits = net.head.logits_raw(features.data(), n);
        let (ce, gl) = softmax_cross_entropy(&logits, n, k, labels, None)?;
        parts.matching = w.beta[l] * ce;
        let (gf, _) = net.head.backward_raw(features.data(), &gl, n);
        grad.iter_mut()
            .zip(&gf)
            .for_each(|(a, b)| *a += w.beta[l] * b);
    }
    parts.total = parts.kl + parts.matching;
    Ok((parts, Tensor::from_raw(features.shape().to_vec(), grad)))
}

/// Full-model inversion objective for an input at level 0.
pub fn full_inversion_objective(
    net: &Network,
    x: &Tensor,
    target: &InversionTarget,
    w: &InversionWeights,
) -> Result<(LossParts, Tensor)> {
    full_inversion_objective_from(net, 0, x, target, w)
}

/// Full-model inversion objective for a candidate at level `entry`:
/// prior KL on every level from `entry` to `L`, the top match term and
/// total variation on `x` when it carries a grid shape. The per-layer
/// output matches are not part of this objective.
pub fn full_inversion_objective_from(
    net: &Network,
    entry: usize,
    x: &Tensor,
    target: &InversionTarget,
    w: &InversionWeights,
) -> Result<(LossParts, Tensor)> {
    let depth = net.depth();
    w.validate(depth)?;
    if entry >= depth {
        return Err(Error::InvalidArgument(format!(
            "entry level {entry} must be below depth {depth}"
        )));
    }
    let n = x.rows();
    if n < 2 {
        return Err(Error::BatchTooSmall { got: n, need: 2 });
    }
    if target.batch_size() != n {
        return Err(Error::Shape(format!(
            "target describes {} samples, candidate has {n}",
            target.batch_size()
        )));
    }
    target.check(net)?;
    let flat = x.flatten_rows();
    let cache = net.backbone.forward_range(entry, depth, &flat)?;
    let mut parts = LossParts::default();
    let mut level_grads: Vec<Option<Vec<f64>>> = vec![None; depth - entry + 1];
    for l in entry..=depth {
        let a = w.alpha[l];
        if a == 0.0 {
            continue;
        }
        let d = net.backbone.level_dim(l);
        let (kl, g) = batch_prior_kl(cache.level(l), n, d, net.require_stats(l)?)?;
        parts.kl += a * kl;
        level_grads[l - entry] = Some(g.into_iter().map(|v| a * v).collect());
    }
    let b = w.beta[depth];
    if b > 0.0 {
        let d = net.feature_dim();
        let feats = cache.top();
        let (value, gf) = match target {
            InversionTarget::Features(t) => per_element_mse(feats, t.data(), n, d),
            InversionTarget::Labels(labels) => {
                let logits = net.head.logits_raw(feats, n);
                let (ce, gl) = softmax_cross_entropy(&logits, n, net.classes(), labels, None)?;
                (ce, net.head.backward_raw(feats, &gl, n).0)
            }
        };
        parts.matching = b * value;
        let slot = level_grads[depth - entry].get_or_insert_with(|| vec![0.0; n * d]);
        slot.iter_mut().zip(&gf).for_each(|(a, g)| *a += b * g);
    }
    let (gx, _) = net.backbone.backward(&cache, &level_grads, false);
    let mut grad = Tensor::from_raw(x.shape().to_vec(), gx);
    if w.gamma > 0.0 {
        let (tv, g) = total_variation_with_grad(x);
        parts.tv = w.gamma * tv;
        grad.data_mut()
            .iter_mut()
            .zip(&g)
            .for_each(|(a, b)| *a += w.gamma * b);
    }
    parts.total = parts.kl + parts.matching + parts.tv;
    Ok((parts, grad))
}
