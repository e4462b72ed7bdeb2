//! Flat `section.key = value` experiment configuration.

use std::path::PathBuf;

use crate::clharness::{BufferPolicy, CLLossWeights};
use crate::netcore::{Activation, HeadMode};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum LastTask {
    Train,
    NoData,
    Synthesize,
}

impl LastTask {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(LastTask::Train),
            "no-data" => Ok(LastTask::NoData),
            "synthesize" => Ok(LastTask::Synthesize),
            _ => Err(Error::Config(format!("unknown last-task policy {s:?}"))),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            LastTask::Train => "train",
            LastTask::NoData => "no-data",
            LastTask::Synthesize => "synthesize",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub spread: f64,

    pub layer_dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub head: HeadMode,
    pub anchor_scale: f64,

    pub steps_per_layer: usize,
    pub steps_full: usize,
    pub lr_pmi: f64,
    pub lr_full: f64,
    /// One value for every level, or one per level.
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: f64,
    pub entry_layer: usize,

    pub cfs_enabled: bool,
    pub cfs_k0: Option<usize>,
    pub cfs_candidates: usize,
    pub cfs_keep_ratio: f64,
    pub cfs_temperature: f64,

    pub contrastive_hidden: usize,
    pub contrastive_output: Option<usize>,
    pub contrastive_epochs: usize,
    pub contrastive_lr: f64,
    pub contrastive_batch: usize,

    pub tasks: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub replay: bool,
    pub weights: CLLossWeights,
    pub buffer: BufferPolicy,
    pub last_task: LastTask,
    pub synth_top_k: usize,
    pub synth_alpha: f64,
    pub synth_samples: usize,

    pub out_dir: PathBuf,
    pub write_checkpoints: bool,
    pub write_traces: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            classes: 10,
            dim: 16,
            samples_per_class: 100,
            spread: 0.2,
            layer_dims: vec![16, 32, 32, 16],
            activations: vec![
                Activation::LeakyRelu,
                Activation::LeakyRelu,
                Activation::None,
            ],
            head: HeadMode::Linear,
            anchor_scale: 10.0,
            steps_per_layer: 50,
            steps_full: 160,
            lr_pmi: 0.1,
            lr_full: 0.05,
            alpha: vec![0.01],
            beta: vec![1.0],
            gamma: 0.0,
            entry_layer: 0,
            cfs_enabled: true,
            cfs_k0: None,
            cfs_candidates: 8,
            cfs_keep_ratio: 0.5,
            cfs_temperature: 1.0,
            contrastive_hidden: 64,
            contrastive_output: None,
            contrastive_epochs: 30,
            contrastive_lr: 0.01,
            contrastive_batch: 32,
            tasks: 5,
            epochs: 30,
            lr: 0.01,
            batch_size: 32,
            replay: true,
            weights: CLLossWeights::linear_defaults(),
            buffer: BufferPolicy::Linear { a: 40, b: 60 },
            last_task: LastTask::Train,
            synth_top_k: 5,
            synth_alpha: 0.1,
            synth_samples: 40,
            out_dir: PathBuf::from("out"),
            write_checkpoints: true,
            write_traces: true,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn float(key: &str, v: &str) -> Result<f64> {
    let x: f64 = num(key, v)?;
    if !x.is_finite() {
        return Err(Error::Config(format!("{key}: value must be finite")));
    }
    Ok(x)
}

fn nonneg(key: &str, v: &str) -> Result<f64> {
    let x = float(key, v)?;
    if x < 0.0 {
        return Err(Error::Config(format!("{key}: value must be nonnegative")));
    }
    Ok(x)
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected a boolean, got {v:?}"
        ))),
    }
}

fn list<T, F: Fn(&str) -> Result<T>>(v: &str, f: F) -> Result<Vec<T>> {
    v.split(',').map(|s| f(s.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Parses `key=value` lines over the defaults. Without any
    /// `cl.lambda_*` key the loss weights follow the head mode.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut explicit_weights = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
            explicit_weights |= key.trim().starts_with("cl.lambda_");
            cfg.set(key.trim(), value.trim())?;
        }
        if !explicit_weights {
            cfg.use_mode_defaults();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = num(key, v)?,
            "dataset.classes" => self.classes = num(key, v)?,
            "dataset.dim" => self.dim = num(key, v)?,
            "dataset.samples_per_class" => self.samples_per_class = num(key, v)?,
            "dataset.spread" => self.spread = nonneg(key, v)?,
            "network.dims" => self.layer_dims = list(v, |s| num(key, s))?,
            "network.activations" => self.activations = list(v, Activation::parse)?,
            "network.head" => self.head = HeadMode::parse(v)?,
            "network.anchor_scale" => self.anchor_scale = nonneg(key, v)?,
            "inversion.steps_per_layer" => self.steps_per_layer = num(key, v)?,
            "inversion.steps_full" => self.steps_full = num(key, v)?,
            "inversion.lr_pmi" => self.lr_pmi = nonneg(key, v)?,
            "inversion.lr_full" => self.lr_full = nonneg(key, v)?,
            "inversion.alpha" => self.alpha = list(v, |s| nonneg(key, s))?,
            "inversion.beta" => self.beta = list(v, |s| nonneg(key, s))?,
            "inversion.gamma" => self.gamma = nonneg(key, v)?,
            "inversion.entry_layer" => self.entry_layer = num(key, v)?,
            "cfs.enabled" => self.cfs_enabled = boolean(key, v)?,
            "cfs.k0" => {
                self.cfs_k0 = if v == "auto" {
                    None
                } else {
                    Some(num(key, v)?)
                }
            }
            "cfs.candidates" => self.cfs_candidates = num(key, v)?,
            "cfs.keep_ratio" => self.cfs_keep_ratio = nonneg(key, v)?,
            "cfs.temperature" => self.cfs_temperature = nonneg(key, v)?,
            "contrastive.hidden" => self.contrastive_hidden = num(key, v)?,
            "contrastive.output" => {
                self.contrastive_output = if v == "auto" {
                    None
                } else {
                    Some(num(key, v)?)
                }
            }
            "contrastive.epochs" => self.contrastive_epochs = num(key, v)?,
            "contrastive.lr" => self.contrastive_lr = nonneg(key, v)?,
            "contrastive.batch_size" => self.contrastive_batch = num(key, v)?,
            "cl.tasks" => self.tasks = num(key, v)?,
            "cl.epochs" => self.epochs = num(key, v)?,
            "cl.lr" => self.lr = nonneg(key, v)?,
            "cl.batch_size" => self.batch_size = num(key, v)?,
            "cl.replay" => self.replay = boolean(key, v)?,
            "cl.lambda_hkd" => self.weights.hkd = nonneg(key, v)?,
            "cl.lambda_rkd" => self.weights.rkd = nonneg(key, v)?,
            "cl.lambda_ft" => self.weights.ft = nonneg(key, v)?,
            "cl.lambda_tkd" => self.weights.tkd = nonneg(key, v)?,
            "cl.lambda_tft" => self.weights.tft = nonneg(key, v)?,
            "cl.scaling" => self.weights.scaling = boolean(key, v)?,
            "cl.last_task" => self.last_task = LastTask::parse(v)?,
            "buffer.a" => match &mut self.buffer {
                BufferPolicy::Linear { a, .. } => *a = num(key, v)?,
                p => {
                    *p = BufferPolicy::Linear {
                        a: num(key, v)?,
                        b: 0,
                    }
                }
            },
            "buffer.b" => match &mut self.buffer {
                BufferPolicy::Linear { b, .. } => *b = num(key, v)?,
                p => {
                    *p = BufferPolicy::Linear {
                        a: 0,
                        b: num(key, v)?,
                    }
                }
            },
            "buffer.per_class" => {
                self.buffer = BufferPolicy::PerClass {
                    quota: num(key, v)?,
                }
            }
            "synth.top_k" => self.synth_top_k = num(key, v)?,
            "synth.alpha" => self.synth_alpha = nonneg(key, v)?,
            "synth.samples_per_class" => self.synth_samples = num(key, v)?,
            "output.dir" => self.out_dir = PathBuf::from(v),
            "output.checkpoints" => self.write_checkpoints = boolean(key, v)?,
            "output.traces" => self.write_traces = boolean(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Switches the loss weights to the head mode's defaults.
    pub fn use_mode_defaults(&mut self) {
        self.weights = CLLossWeights::defaults_for(self.head);
    }

    pub fn validate(&self) -> Result<()> {
        let depth = self.layer_dims.len().saturating_sub(1);
        if depth == 0 || self.activations.len() != depth {
            return Err(Error::Config(format!(
                "network.dims needs ≥ 2 entries and one activation per unit ({} dims, {} activations)",
                self.layer_dims.len(),
                self.activations.len()
            )));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::Config("network.dims must be positive".into()));
        }
        if self.layer_dims[0] != self.dim {
            return Err(Error::Config(format!(
                "network input width {} differs from dataset.dim {}",
                self.layer_dims[0], self.dim
            )));
        }
        if self.head == HeadMode::Anchor && self.layer_dims[depth] != self.dim {
            return Err(Error::Config(
                "anchor head needs feature width equal to dataset.dim".into(),
            ));
        }
        for (name, v) in [
            ("inversion.alpha", &self.alpha),
            ("inversion.beta", &self.beta),
        ] {
            if v.len() != 1 && v.len() != depth + 1 {
                return Err(Error::Config(format!(
                    "{name} needs 1 or {} values",
                    depth + 1
                )));
            }
        }
        if self.entry_layer >= depth {
            return Err(Error::Config(format!(
                "inversion.entry_layer must be below {depth}"
            )));
        }
        if self.tasks == 0 || self.classes % self.tasks != 0 {
            return Err(Error::Config(format!(
                "{} classes cannot be split into {} tasks",
                self.classes, self.tasks
            )));
        }
        if self.batch_size == 0 || self.contrastive_batch < 2 || self.cfs_candidates == 0 {
            return Err(Error::Config(
                "batch sizes and candidate counts must be positive".into(),
            ));
        }
        if !(self.cfs_keep_ratio > 0.0 && self.cfs_keep_ratio <= 1.0) {
            return Err(Error::Config("cfs.keep_ratio must lie in (0, 1]".into()));
        }
        if self.synth_alpha > 1.0 {
            return Err(Error::Config("synth.alpha must lie in [0, 1]".into()));
        }
        if self.last_task == LastTask::Synthesize && self.head != HeadMode::Anchor {
            return Err(Error::Config(
                "cl.last_task=synthesize needs network.head=anchor".into(),
            ));
        }
        Ok(())
    }

    /// Level weights expanded to one entry per level.
    pub fn level_weights(&self, v: &[f64]) -> Vec<f64> {
        let levels = self.layer_dims.len();
        if v.len() == 1 {
            vec![v[0]; levels]
        } else {
            v.to_vec()
        }
    }

    /// Canonical text form; parsing it gives back the same config.
    pub fn to_text(&self) -> String {
        let mut lines = vec![
            format!("seed={}", self.seed),
            format!("dataset.classes={}", self.classes),
            format!("dataset.dim={}", self.dim),
            format!("dataset.samples_per_class={}", self.samples_per_class),
            format!("dataset.spread={}", self.spread),
            format!("network.dims={}", join(&self.layer_dims)),
            format!(
                "network.activations={}",
                self.activations
                    .iter()
                    .map(|a| a.name())
                    .collect::<Vec<_>>()
                    .join(",")
            ),
            format!("network.head={}", self.head.name()),
            format!("network.anchor_scale={}", self.anchor_scale),
            format!("inversion.steps_per_layer={}", self.steps_per_layer),
            format!("inversion.steps_full={}", self.steps_full),
            format!("inversion.lr_pmi={}", self.lr_pmi),
            format!("inversion.lr_full={}", self.lr_full),
            format!("inversion.alpha={}", join(&self.alpha)),
            format!("inversion.beta={}", join(&self.beta)),
            format!("inversion.gamma={}", self.gamma),
            format!("inversion.entry_layer={}", self.entry_layer),
            format!("cfs.enabled={}", self.cfs_enabled),
            format!(
                "cfs.k0={}",
                self.cfs_k0.map_or("auto".into(), |k| k.to_string())
            ),
            format!("cfs.candidates={}", self.cfs_candidates),
            format!("cfs.keep_ratio={}", self.cfs_keep_ratio),
            format!("cfs.temperature={}", self.cfs_temperature),
            format!("contrastive.hidden={}", self.contrastive_hidden),
            format!(
                "contrastive.output={}",
                self.contrastive_output
                    .map_or("auto".into(), |k| k.to_string())
            ),
            format!("contrastive.epochs={}", self.contrastive_epochs),
            format!("contrastive.lr={}", self.contrastive_lr),
            format!("contrastive.batch_size={}", self.contrastive_batch),
            format!("cl.tasks={}", self.tasks),
            format!("cl.epochs={}", self.epochs),
            format!("cl.lr={}", self.lr),
            format!("cl.batch_size={}", self.batch_size),
            format!("cl.replay={}", self.replay),
            format!("cl.lambda_hkd={}", self.weights.hkd),
            format!("cl.lambda_rkd={}", self.weights.rkd),
            format!("cl.lambda_ft={}", self.weights.ft),
            format!("cl.lambda_tkd={}", self.weights.tkd),
            format!("cl.lambda_tft={}", self.weights.tft),
            format!("cl.scaling={}", self.weights.scaling),
            format!("cl.last_task={}", self.last_task.name()),
        ];
        match self.buffer {
            BufferPolicy::Linear { a, b } => {
                lines.push(format!("buffer.a={a}"));
                lines.push(format!("buffer.b={b}"));
            }
            BufferPolicy::PerClass { quota } => lines.push(format!("buffer.per_class={quota}")),
        }
        lines.extend([
            format!("synth.top_k={}", self.synth_top_k),
            format!("synth.alpha={}", self.synth_alpha),
            format!("synth.samples_per_class={}", self.synth_samples),
            format!("output.dir={}", self.out_dir.display()),
            format!("output.checkpoints={}", self.write_checkpoints),
            format!("output.traces={}", self.write_traces),
        ]);
        let mut s = lines.join("\n");
        s.push('\n');
        s
    }
}
