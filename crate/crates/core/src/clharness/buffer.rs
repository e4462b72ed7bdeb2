//! Synthetic replay buffer: per-class feature sampling (optionally with
//! contrastive selection) followed by inversion of the teacher.

use std::io::{BufRead, BufReader, Read, Write};

use log::debug;
use rayon::prelude::*;

use crate::featmodel::{cfs_select, keep_count, CfsConfig, ClassGaussian, ContrastiveModel};
use crate::inversion::{invert, InversionConfig, InversionTarget, InversionTrace};
use crate::netcore::{Network, Tensor};
use crate::seed::{child_seed, rng_from};
use crate::{Error, Result};

use super::tasks::LabeledSet;

pub const BUFFER_MAGIC: &str = "INVERCL-BUF-v1";

/// Fitted distribution of one class plus its optional contrastive model.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassModel {
    pub gaussian: ClassGaussian,
    pub contrastive: Option<ContrastiveModel>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BufferPolicy {
    /// `a * t + b` samples after `t` completed tasks, split over old classes.
    Linear { a: usize, b: usize },
    /// Fixed number of samples per old class.
    PerClass { quota: usize },
}

impl BufferPolicy {
    pub fn capacity(&self, completed_tasks: usize, old_classes: usize) -> usize {
        match *self {
            BufferPolicy::Linear { a, b } => a * completed_tasks + b,
            BufferPolicy::PerClass { quota } => quota * old_classes,
        }
    }

    /// Per-class sample counts; any remainder goes to the lowest classes.
    pub fn quotas(&self, completed_tasks: usize, old_classes: usize) -> Vec<usize> {
        if old_classes == 0 {
            return Vec::new();
        }
        let cap = self.capacity(completed_tasks, old_classes);
        let (base, extra) = (cap / old_classes, cap % old_classes);
        (0..old_classes)
            .map(|c| base + usize::from(c < extra))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct BufferConfig {
    pub policy: BufferPolicy,
    pub use_cfs: bool,
    pub cfs: CfsConfig,
    pub inversion: InversionConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BufferEntry {
    pub input: Vec<f64>,
    pub class: usize,
    pub target_feature: Vec<f64>,
    pub created_at_task: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SyntheticBuffer {
    pub entries: Vec<BufferEntry>,
}

impl SyntheticBuffer {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn as_labeled(&self) -> Result<LabeledSet> {
        let rows: Vec<Vec<f64>> = self.entries.iter().map(|e| e.input.clone()).collect();
        LabeledSet::new(
            Tensor::from_rows(&rows)?,
            self.entries.iter().map(|e| e.class).collect(),
        )
    }

    pub fn class_entries(&self, class: usize) -> impl Iterator<Item = &BufferEntry> {
        self.entries.iter().filter(move |e| e.class == class)
    }
}

/// Class-wise inversion traces collected while building a buffer.
#[derive(Clone, Debug)]
pub struct BufferBuild {
    pub buffer: SyntheticBuffer,
    pub traces: Vec<(usize, InversionTrace)>,
}

/// Target features for one class: contrastive selection when enabled and
/// a model is available, plain Gaussian samples otherwise.
fn class_targets(
    model: &ClassModel,
    quota: usize,
    cfg: &BufferConfig,
    seed: u64,
) -> Result<Tensor> {
    match (&model.contrastive, cfg.use_cfs) {
        (Some(cm), true) => {
            let keep = keep_count(cfg.cfs.candidates, cfg.cfs.keep_ratio);
            let k0 = cfg.cfs.init_size.unwrap_or(keep).min(quota).max(1);
            let steps = (quota.saturating_sub(k0)).div_ceil(keep);
            let sel_cfg = CfsConfig {
                init_size: Some(k0),
                steps,
                ..cfg.cfs.clone()
            };
            let mut set = cfs_select(&model.gaussian, cm, &sel_cfg, seed)?;
            set.truncate(quota);
            set.to_tensor()
        }
        _ => Ok(model.gaussian.sample(quota, &mut rng_from(seed))),
    }
}

/// Generates replay samples for classes `0..models.len()` by inverting
/// `teacher` towards features drawn from each class model.
pub fn build_replay_buffer(
    teacher: &Network,
    models: &[ClassModel],
    cfg: &BufferConfig,
    completed_tasks: usize,
    seed: u64,
) -> Result<BufferBuild> {
    if completed_tasks == 0 {
        return Err(Error::InvalidArgument(
            "replay needs at least one completed task".into(),
        ));
    }
    for l in cfg.inversion.entry_layer..=teacher.depth() {
        teacher.require_stats(l)?;
    }
    let quotas = cfg.policy.quotas(completed_tasks, models.len());
    let per_class: Vec<Result<(Vec<BufferEntry>, InversionTrace)>> = models
        .par_iter()
        .zip(quotas.par_iter())
        .map(|(model, &quota)| {
            let class = model.gaussian.class_id;
            if quota == 0 {
                return Ok((Vec::new(), InversionTrace::default()));
            }
            let class_seed = child_seed(seed, class as u64);
            // the prior term needs at least two samples per batch
            let batch = quota.max(2);
            let targets = class_targets(model, batch, cfg, child_seed(class_seed, 0))?;
            let inv = invert(
                teacher,
                &InversionTarget::Features(targets.clone()),
                &cfg.inversion,
                child_seed(class_seed, 1),
            )?;
            let x = inv.input.flatten_rows();
            debug!("class {class}: {} synthetic samples", quota);
            let entries = (0..quota)
                .map(|i| BufferEntry {
                    input: x.row(i).to_vec(),
                    class,
                    target_feature: targets.row(i).to_vec(),
                    created_at_task: completed_tasks,
                })
                .collect();
            Ok((entries, inv.trace))
        })
        .collect();
    let mut buffer = SyntheticBuffer::default();
    let mut traces = Vec::new();
    for (model, r) in models.iter().zip(per_class) {
        let (entries, trace) = r?;
        buffer.entries.extend(entries);
        traces.push((model.gaussian.class_id, trace));
    }
    Ok(BufferBuild { buffer, traces })
}

fn write_floats<W: Write>(out: &mut W, v: &[f64]) -> Result<()> {
    for x in v {
        out.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_floats<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

/// Binary dump: magic line, entry count, input and feature widths, then
/// per entry class, task, input and target feature (little-endian).
pub fn write_buffer<W: Write>(mut out: W, buffer: &SyntheticBuffer) -> Result<()> {
    writeln!(out, "{BUFFER_MAGIC}")?;
    let (din, dfeat) = buffer
        .entries
        .first()
        .map_or((0, 0), |e| (e.input.len(), e.target_feature.len()));
    for v in [buffer.len(), din, dfeat] {
        out.write_all(&(v as u64).to_le_bytes())?;
    }
    for e in &buffer.entries {
        if e.input.len() != din || e.target_feature.len() != dfeat {
            return Err(Error::Shape("buffer entries have mixed widths".into()));
        }
        out.write_all(&(e.class as u64).to_le_bytes())?;
        out.write_all(&(e.created_at_task as u64).to_le_bytes())?;
        write_floats(&mut out, &e.input)?;
        write_floats(&mut out, &e.target_feature)?;
    }
    Ok(())
}

pub fn read_buffer<R: Read>(input: R) -> Result<SyntheticBuffer> {
    let mut r = BufReader::new(input);
    let mut magic = String::new();
    r.read_line(&mut magic)?;
    if magic.trim_end() != BUFFER_MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad buffer header {:?}",
            magic.trim_end()
        )));
    }
    let to_usize =
        |v: u64| usize::try_from(v).map_err(|_| Error::Checkpoint("size overflow".into()));
    let n = to_usize(read_u64(&mut r)?)?;
    let din = to_usize(read_u64(&mut r)?)?;
    let dfeat = to_usize(read_u64(&mut r)?)?;
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        let class = to_usize(read_u64(&mut r)?)?;
        let created_at_task = to_usize(read_u64(&mut r)?)?;
        let input = read_floats(&mut r, din)?;
        let target_feature = read_floats(&mut r, dfeat)?;
        entries.push(BufferEntry {
            input,
            class,
            target_feature,
            created_at_task,
        });
    }
    Ok(SyntheticBuffer { entries })
}

/// CSV of the buffer's target features: `class_id,created_at_task,f0,...`.
pub fn write_buffer_csv<W: Write>(mut out: W, buffer: &SyntheticBuffer) -> Result<()> {
    let d = buffer.entries.first().map_or(0, |e| e.target_feature.len());
    let mut header = String::from("class_id,created_at_task");
    for k in 0..d {
        header.push_str(&format!(",f{k}"));
    }
    writeln!(out, "{header}")?;
    for e in &buffer.entries {
        let mut line = format!("{},{}", e.class, e.created_at_task);
        for v in &e.target_feature {
            line.push_str(&format!(",{v:.9e}"));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}
