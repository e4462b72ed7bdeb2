//! Per-layer model inversion followed by full-model fine-tuning.

use rand_distr::{Distribution, Normal};

use super::objective::{
    full_inversion_objective_from, layer_inversion_objective, top_label_objective, InversionTarget,
    InversionWeights, LossParts,
};
use super::trace::{InversionTrace, Phase};
use crate::netcore::{Layer, LayerStats, Network, OptimizerState, Tensor};
use crate::seed::{child_seed, rng_from};
use crate::{Error, Result};

/// Draws `n` rows from the diagonal Gaussian described by `stats`.
pub fn sample_from_stats(stats: &LayerStats, n: usize, seed: u64) -> Tensor {
    let mut rng = rng_from(seed);
    let std = stats.std();
    let mut data = Vec::with_capacity(n * stats.dim());
    for _ in 0..n {
        for (m, s) in stats.mean().iter().zip(&std) {
            let z: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(&mut rng);
            data.push(m + s * z);
        }
    }
    Tensor::from_raw(vec![n, stats.dim()], data)
}

/// Adam descent on `objective`, returning the lowest-loss iterate seen.
fn descend<F>(
    init: Tensor,
    steps: usize,
    lr: f64,
    phase: Phase,
    trace: &mut InversionTrace,
    mut objective: F,
) -> Result<(Tensor, LossParts)>
where
    F: FnMut(&Tensor) -> Result<(LossParts, Tensor)>,
{
    let mut x = init;
    let mut state = OptimizerState::adam(lr);
    let mut best: Option<(Tensor, LossParts)> = None;
    for step in 0..steps {
        let (parts, grad) = objective(&x)?;
        if !parts.total.is_finite() {
            return Err(Error::NonFinite(format!("{phase} loss at step {step}")));
        }
        trace.push(phase, step, parts);
        if best.as_ref().is_none_or(|(_, b)| parts.total < b.total) {
            best = Some((x.clone(), parts));
        }
        state.step(x.data_mut(), grad.data())?;
    }
    let (parts, _) = objective(&x)?;
    match best {
        Some((bx, bp)) if !(parts.total < bp.total) => Ok((bx, bp)),
        _ => Ok((x, parts)),
    }
}

/// Inverts a single layer unit: finds an input batch whose image under
/// `layer` matches `target` while staying close to the stored input
/// statistics. Initialization is drawn from `N(stats.mean, stats.std)`.
#[allow(clippy::too_many_arguments)]
pub fn invert_layer(
    layer: &Layer,
    unit: usize,
    target: &Tensor,
    stats: &LayerStats,
    alpha: f64,
    beta: f64,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<(Tensor, InversionTrace)> {
    if steps < 1 {
        return Err(Error::InvalidArgument(
            "layer inversion needs at least one step".into(),
        ));
    }
    if stats.dim() != layer.in_dim() {
        return Err(Error::Shape(format!(
            "stats width {} does not match layer {unit} input {}",
            stats.dim(),
            layer.in_dim()
        )));
    }
    let init = sample_from_stats(stats, target.rows(), seed);
    let mut trace = InversionTrace::default();
    let (x, _) = descend(init, steps, lr, Phase::PmiLayer(unit), &mut trace, |c| {
        layer_inversion_objective(layer, c, target, stats, alpha, beta)
    })?;
    Ok((x, trace))
}

/// Result of the top-down per-layer pass.
#[derive(Clone, Debug)]
pub struct PmiOutput {
    /// Synthetic batch at the entry level.
    pub input: Tensor,
    /// `levels[l - entry]` is the optimized batch at level `l`, for
    /// `l = entry..=L`; the last entry is the top target.
    pub levels: Vec<Tensor>,
    pub trace: InversionTrace,
}

/// Top-down inversion from unit `L` to unit `entry_layer + 1`, each
/// stage's result becoming the next stage's target.
pub fn run_pmi(
    net: &Network,
    target: &InversionTarget,
    w: &InversionWeights,
    steps_per_layer: usize,
    lr: f64,
    seed: u64,
    entry_layer: usize,
) -> Result<PmiOutput> {
    let depth = net.depth();
    w.validate(depth)?;
    if steps_per_layer < 1 {
        return Err(Error::InvalidArgument(
            "steps_per_layer must be at least 1".into(),
        ));
    }
    if entry_layer >= depth {
        return Err(Error::InvalidArgument(format!(
            "entry layer {entry_layer} must be in [0, {}]",
            depth - 1
        )));
    }
    target.check(net)?;
    let n = target.batch_size();
    if n < 2 {
        return Err(Error::BatchTooSmall { got: n, need: 2 });
    }
    let mut trace = InversionTrace::default();
    let top = match target {
        InversionTarget::Features(f) => f.flatten_rows(),
        InversionTarget::Labels(labels) => {
            let init = sample_from_stats(
                net.require_stats(depth)?,
                n,
                child_seed(seed, depth as u64 + 1),
            );
            descend(init, steps_per_layer, lr, Phase::PmiHead, &mut trace, |o| {
                top_label_objective(net, o, labels, w)
            })?
            .0
        }
    };
    let mut levels = vec![top];
    for l in (entry_layer + 1..=depth).rev() {
        let stats = net.require_stats(l - 1)?;
        let current = levels.last().expect("non-empty");
        let (x, t) = invert_layer(
            &net.backbone.layers[l - 1],
            l,
            current,
            stats,
            w.alpha[l - 1],
            w.beta[l - 1],
            steps_per_layer,
            lr,
            child_seed(seed, l as u64),
        )?;
        trace.extend(t);
        levels.push(x);
    }
    levels.reverse();
    Ok(PmiOutput {
        input: levels[0].clone(),
        levels,
        trace,
    })
}

/// Adam descent on the full-model objective starting from `x_init`.
/// With `steps == 0` the input is returned unchanged.
pub fn finetune_full(
    net: &Network,
    x_init: &Tensor,
    target: &InversionTarget,
    w: &InversionWeights,
    steps: usize,
    lr: f64,
    entry_layer: usize,
) -> Result<(Tensor, InversionTrace)> {
    let mut trace = InversionTrace::default();
    if steps == 0 {
        return Ok((x_init.clone(), trace));
    }
    let (x, _) = descend(x_init.clone(), steps, lr, Phase::Full, &mut trace, |x| {
        full_inversion_objective_from(net, entry_layer, x, target, w)
    })?;
    Ok((x, trace))
}

/// Settings of a complete PMI + full-model inversion.
#[derive(Clone, Debug, PartialEq)]
pub struct InversionConfig {
    pub weights: InversionWeights,
    pub steps_per_layer: usize,
    pub steps_full: usize,
    pub lr_pmi: f64,
    pub lr_full: f64,
    pub entry_layer: usize,
    /// Grid shape applied to the entry-level batch before fine-tuning.
    pub input_grid: Option<(usize, usize)>,
}

impl InversionConfig {
    pub fn new(weights: InversionWeights) -> Self {
        Self {
            weights,
            steps_per_layer: 50,
            steps_full: 160,
            lr_pmi: 0.1,
            lr_full: 0.05,
            entry_layer: 0,
            input_grid: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Inversion {
    pub input: Tensor,
    pub trace: InversionTrace,
}

fn with_grid(x: Tensor, grid: Option<(usize, usize)>) -> Result<Tensor> {
    match grid {
        Some((h, w)) => {
            let n = x.rows();
            x.reshape(vec![n, h, w])
        }
        None => Ok(x),
    }
}

/// PMI followed by full-model fine-tuning.
pub fn invert(
    net: &Network,
    target: &InversionTarget,
    cfg: &InversionConfig,
    seed: u64,
) -> Result<Inversion> {
    let pmi = run_pmi(
        net,
        target,
        &cfg.weights,
        cfg.steps_per_layer,
        cfg.lr_pmi,
        seed,
        cfg.entry_layer,
    )?;
    let init = with_grid(pmi.input, cfg.input_grid)?;
    let (input, full) = finetune_full(
        net,
        &init,
        target,
        &cfg.weights,
        cfg.steps_full,
        cfg.lr_full,
        cfg.entry_layer,
    )?;
    let mut trace = pmi.trace;
    trace.extend(full);
    Ok(Inversion { input, trace })
}

/// Where the full-model-only baseline starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RandomInit {
    /// Standard-normal noise.
    Noise,
    /// Draws from the entry-level feature statistics.
    Stats,
}

/// Full-model inversion alone, from a random batch.
pub fn invert_from_random(
    net: &Network,
    target: &InversionTarget,
    cfg: &InversionConfig,
    init: RandomInit,
    seed: u64,
) -> Result<Inversion> {
    let stats = net.require_stats(cfg.entry_layer)?;
    let n = target.batch_size();
    let start = match init {
        RandomInit::Stats => sample_from_stats(stats, n, seed),
        RandomInit::Noise => {
            let mut rng = rng_from(seed);
            let unit = Normal::new(0.0, 1.0).expect("unit normal");
            let data = (0..n * stats.dim())
                .map(|_| unit.sample(&mut rng))
                .collect();
            Tensor::from_raw(vec![n, stats.dim()], data)
        }
    };
    let start = with_grid(start, cfg.input_grid)?;
    let (input, trace) = finetune_full(
        net,
        &start,
        target,
        &cfg.weights,
        cfg.steps_full,
        cfg.lr_full,
        cfg.entry_layer,
    )?;
    Ok(Inversion { input, trace })
}
