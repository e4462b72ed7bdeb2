//! The full class-incremental loop and the per-class model bookkeeping
//! around it.

use log::{info, warn};
use rayon::prelude::*;

use super::buffer::{build_replay_buffer, BufferConfig, ClassModel, SyntheticBuffer};
use super::metrics::{evaluate, Metrics};
use super::tasks::{LabeledSet, TaskSequence};
use super::train::{prepare_head, train_task, CLLossWeights, TrainConfig, TrainReport};
use crate::featmodel::{fit_class_gaussian, train_contrastive, ContrastiveConfig};
use crate::inversion::{invert, InversionConfig, InversionTarget, InversionTrace};
use crate::netcore::{HeadMode, Network, Tensor};
use crate::projection::{most_similar, pseudo_feature, rotation_between};
use crate::seed::{child_seed, derive_seed, rng_from};
use crate::{Error, Result};

/// Fits a Gaussian (and, when `contrastive` is given, a contrastive model)
/// to the current-network features of every class in `classes`.
pub fn fit_class_models(
    net: &Network,
    data: &LabeledSet,
    classes: &[usize],
    contrastive: Option<&ContrastiveConfig>,
    seed: u64,
) -> Result<Vec<ClassModel>> {
    classes
        .par_iter()
        .map(|&c| {
            let feats = net.backbone.features(&data.class_rows(c))?;
            let gaussian = fit_class_gaussian(c, &feats)?;
            let contrastive = match contrastive {
                Some(cfg) if feats.rows() >= 8 => {
                    Some(train_contrastive(&feats, cfg, child_seed(seed, c as u64))?.0)
                }
                _ => None,
            };
            Ok(ClassModel {
                gaussian,
                contrastive,
            })
        })
        .collect()
}

/// Refits old-class Gaussians from the current network's features of the
/// buffer samples and retrains their contrastive models. A no-op for
/// anchor heads. Returns the classes left unchanged for lack of samples.
pub fn refresh_old_class_models(
    net: &Network,
    buffer: &SyntheticBuffer,
    models: &mut [ClassModel],
    contrastive: Option<&ContrastiveConfig>,
    seed: u64,
) -> Result<Vec<usize>> {
    if net.head.mode() == HeadMode::Anchor {
        return Ok(Vec::new());
    }
    let mut skipped = Vec::new();
    for model in models.iter_mut() {
        let c = model.gaussian.class_id;
        let rows: Vec<Vec<f64>> = buffer.class_entries(c).map(|e| e.input.clone()).collect();
        if rows.len() < 2 {
            warn!(
                "class {c} has {} buffer samples, keeping its feature model",
                rows.len()
            );
            skipped.push(c);
            continue;
        }
        let feats = net.backbone.features(&Tensor::from_rows(&rows)?)?;
        model.gaussian = fit_class_gaussian(c, &feats)?;
        if let Some(cfg) = contrastive {
            if feats.rows() >= 8 {
                model.contrastive =
                    Some(train_contrastive(&feats, cfg, child_seed(seed, c as u64))?.0);
            } else {
                warn!("class {c} has too few buffer samples to retrain its contrastive model");
            }
        }
    }
    Ok(skipped)
}

/// Input statistics after a task. Linear heads recompute them from the
/// task's real inputs plus the replay inputs; anchor heads pool the real
/// inputs into the running statistics.
pub fn refresh_layer_stats(
    net: &mut Network,
    real: &Tensor,
    buffer: &SyntheticBuffer,
) -> Result<()> {
    match net.head.mode() {
        HeadMode::Linear => {
            let batch = if buffer.is_empty() {
                real.clone()
            } else {
                let replay = buffer.as_labeled()?.features;
                Tensor::concat_rows(&[real, &replay])?
            };
            net.reset_stats();
            net.update_layer_stats(&batch)
        }
        HeadMode::Anchor => net.update_layer_stats(real),
    }
}

/// Settings for building training data of unseen classes from old-class
/// feature models projected onto the new classes' anchors.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub top_k: usize,
    pub alpha: f64,
    pub samples_per_class: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            top_k: 5,
            alpha: crate::projection::DEFAULT_ALPHA,
            samples_per_class: 40,
        }
    }
}

/// Synthesizes inputs for `new_classes`: features sampled from the most
/// anchor-similar old classes are rotated onto the new anchor, blended
/// toward it, rescaled to the source norm and inverted through `teacher`.
pub fn synthesize_new_classes(
    teacher: &Network,
    models: &[ClassModel],
    anchors: &[Vec<f64>],
    new_classes: &[usize],
    synth: &SynthConfig,
    inversion: &InversionConfig,
    seed: u64,
) -> Result<(LabeledSet, Vec<(usize, InversionTrace)>)> {
    if models.is_empty() || synth.top_k == 0 || synth.samples_per_class < 2 {
        return Err(Error::InvalidArgument(
            "synthesis needs old class models, top_k ≥ 1 and ≥ 2 samples per class".into(),
        ));
    }
    let old: Vec<usize> = models.iter().map(|m| m.gaussian.class_id).collect();
    let per_class: Vec<Result<(Tensor, InversionTrace)>> = new_classes
        .par_iter()
        .map(|&d| {
            let sources = most_similar(anchors, d, &old, synth.top_k);
            let rotations = sources
                .iter()
                .map(|&c| rotation_between(&anchors[c], &anchors[d]))
                .collect::<Result<Vec<_>>>()?;
            let mut rng = rng_from(child_seed(seed, d as u64));
            let mut targets = Vec::with_capacity(synth.samples_per_class);
            for i in 0..synth.samples_per_class {
                let k = i % sources.len();
                let model = models
                    .iter()
                    .find(|m| m.gaussian.class_id == sources[k])
                    .expect("source chosen among models");
                let o = model.gaussian.sample(1, &mut rng);
                let n = o.norm();
                if n < 1e-12 {
                    return Err(Error::DegenerateBlend);
                }
                let unit: Vec<f64> = o.data().iter().map(|v| v / n).collect();
                let p = pseudo_feature(&rotations[k], &unit, &anchors[d], synth.alpha)?;
                targets.push(p.into_iter().map(|v| v * n).collect::<Vec<f64>>());
            }
            let targets = Tensor::from_rows(&targets)?;
            let inv = invert(
                teacher,
                &InversionTarget::Features(targets),
                inversion,
                child_seed(seed, (d as u64) << 20),
            )?;
            Ok((inv.input.flatten_rows(), inv.trace))
        })
        .collect();
    let mut parts = Vec::new();
    let mut labels = Vec::new();
    let mut traces = Vec::new();
    for (&d, r) in new_classes.iter().zip(per_class) {
        let (x, trace) = r?;
        labels.extend(std::iter::repeat_n(d, x.rows()));
        parts.push(x);
        traces.push((d, trace));
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    Ok((
        LabeledSet::new(Tensor::concat_rows(&refs)?, labels)?,
        traces,
    ))
}

/// How the final task is learned.
#[derive(Clone, Debug, PartialEq)]
pub enum LastTaskPolicy {
    /// From its real training data, like every other task.
    Train,
    /// Not at all: the new classes only get head columns.
    NoData,
    /// From inputs synthesized out of old-class feature models.
    Synthesize(SynthConfig),
}

#[derive(Clone, Debug)]
pub struct ContinualConfig {
    pub train: TrainConfig,
    pub weights: CLLossWeights,
    pub replay: bool,
    pub buffer: BufferConfig,
    pub contrastive: ContrastiveConfig,
    pub last_task: LastTaskPolicy,
}

/// Inversion trace of one class generated before `task` (1-based).
#[derive(Clone, Debug)]
pub struct TraceEntry {
    pub task: usize,
    pub class: usize,
    pub trace: InversionTrace,
}

#[derive(Clone, Debug)]
pub struct ContinualOutcome {
    pub metrics: Metrics,
    pub reports: Vec<TrainReport>,
    pub traces: Vec<TraceEntry>,
    /// Network after each stage.
    pub checkpoints: Vec<Network>,
    /// Buffer replayed during each stage (empty for the first).
    pub buffers: Vec<SyntheticBuffer>,
}

fn stage_error(stage: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(msg) => Error::NonFinite(format!("stage {stage}: {msg}")),
        other => other,
    }
}

/// Trains `net` (whose head starts empty) through every task of `seq`,
/// evaluating after each stage. `anchors[column]` supplies anchor-head
/// class vectors.
pub fn run_continual(
    mut net: Network,
    seq: &TaskSequence,
    anchors: Option<&[Vec<f64>]>,
    cfg: &ContinualConfig,
    seed: u64,
) -> Result<ContinualOutcome> {
    if net.classes() != 0 {
        return Err(Error::InvalidArgument(
            "the network head must start without classes".into(),
        ));
    }
    let anchor_mode = net.head.mode() == HeadMode::Anchor;
    if anchor_mode && anchors.is_none_or(|a| a.len() != seq.classes_before(seq.len())) {
        return Err(Error::InvalidArgument(
            "anchor head needs one anchor per class".into(),
        ));
    }
    let synth = match &cfg.last_task {
        LastTaskPolicy::Synthesize(s) => {
            if !anchor_mode {
                return Err(Error::UnsupportedMode {
                    mode: net.head.mode().name(),
                    what: "new-class synthesis",
                });
            }
            Some(s)
        }
        _ => None,
    };
    let need_models = cfg.replay || synth.is_some();
    let contrastive = (cfg.replay && cfg.buffer.use_cfs).then_some(&cfg.contrastive);
    let mut models: Vec<ClassModel> = Vec::new();
    let mut teacher: Option<Network> = None;
    let mut out = ContinualOutcome {
        metrics: Metrics::default(),
        reports: Vec::new(),
        traces: Vec::new(),
        checkpoints: Vec::new(),
        buffers: Vec::new(),
    };
    let mut init_rng = rng_from(child_seed(derive_seed(seed, "init"), 1));
    for (t, task) in seq.tasks.iter().enumerate() {
        let stage = t + 1;
        let last = stage == seq.len();
        let inv_seed = child_seed(derive_seed(seed, "inversion"), t as u64);
        let mut buffer = SyntheticBuffer::default();
        if let (Some(teach), true) = (&teacher, cfg.replay) {
            let build = build_replay_buffer(teach, &models, &cfg.buffer, t, inv_seed)
                .map_err(|e| stage_error(stage, e))?;
            out.traces
                .extend(build.traces.into_iter().map(|(class, trace)| TraceEntry {
                    task: stage,
                    class,
                    trace,
                }));
            buffer = build.buffer;
        }
        let task_anchors =
            anchors.map(|a| a[task.classes[0]..task.classes[0] + task.classes.len()].to_vec());
        prepare_head(
            &mut net,
            task.classes.len(),
            task_anchors.as_deref(),
            &mut init_rng,
        )?;
        let data = match (last && t > 0, &cfg.last_task) {
            (true, LastTaskPolicy::NoData) => None,
            (true, LastTaskPolicy::Synthesize(s)) => {
                let teach = teacher
                    .as_ref()
                    .expect("teacher exists after the first task");
                let (set, traces) = synthesize_new_classes(
                    teach,
                    &models,
                    anchors.expect("checked above"),
                    &task.classes,
                    s,
                    &cfg.buffer.inversion,
                    child_seed(derive_seed(seed, "synth"), t as u64),
                )
                .map_err(|e| stage_error(stage, e))?;
                out.traces
                    .extend(traces.into_iter().map(|(class, trace)| TraceEntry {
                        task: stage,
                        class,
                        trace,
                    }));
                Some(set)
            }
            _ => Some(task.train.clone()),
        };
        let real = data.is_some() && !(last && synth.is_some());
        if let Some(d) = &data {
            let report = train_task(
                &mut net,
                d,
                &task.classes,
                &buffer,
                teacher.as_ref(),
                &cfg.weights,
                &cfg.train,
                child_seed(derive_seed(seed, "train"), t as u64),
            )
            .map_err(|e| stage_error(stage, e))?;
            out.reports.push(report);
        } else {
            out.reports.push(TrainReport::default());
        }
        if real {
            refresh_layer_stats(&mut net, &task.train.features, &buffer)?;
        }
        if need_models && !last {
            let cfs_seed = child_seed(derive_seed(seed, "cfs"), t as u64);
            if !buffer.is_empty() {
                refresh_old_class_models(&net, &buffer, &mut models, contrastive, cfs_seed)?;
            }
            models.extend(fit_class_models(
                &net,
                &task.train,
                &task.classes,
                contrastive,
                child_seed(cfs_seed, 1),
            )?);
        }
        let m = evaluate(&net, seq, stage)?;
        info!("stage {stage}: accuracy {:.4}", m.overall);
        out.metrics.stages.push(m);
        out.buffers.push(buffer);
        out.checkpoints.push(net.clone());
        teacher = Some(net.clone());
    }
    Ok(out)
}
