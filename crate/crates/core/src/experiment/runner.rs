//! End-to-end experiment runs from a config, with artifacts on disk.

use std::fs;
use std::path::Path;

use log::info;

use super::config::{ExperimentConfig, LastTask};
use super::dataset::{gen_toy_dataset, ToyDataset};
use crate::clharness::{
    run_continual, split_tasks, write_buffer, write_buffer_csv, BufferConfig, ContinualConfig,
    ContinualOutcome, LastTaskPolicy, SynthConfig, TaskSequence, TrainConfig,
};
use crate::featmodel::{CfsConfig, ContrastiveConfig};
use crate::inversion::{InversionConfig, InversionWeights};
use crate::netcore::{save_network, Backbone, ClassificationHead, HeadMode, Network};
use crate::seed::{child_seed, derive_seed, rng_from};
use crate::{Error, Result};

/// Everything a run needs, built deterministically from the config.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub dataset: ToyDataset,
    pub tasks: TaskSequence,
    pub net: Network,
    /// Anchor of each head column (unit centroids in task order).
    pub anchors: Vec<Vec<f64>>,
    pub continual: ContinualConfig,
}

pub fn inversion_config(cfg: &ExperimentConfig) -> InversionConfig {
    InversionConfig {
        weights: InversionWeights {
            alpha: cfg.level_weights(&cfg.alpha),
            beta: cfg.level_weights(&cfg.beta),
            gamma: cfg.gamma,
        },
        steps_per_layer: cfg.steps_per_layer,
        steps_full: cfg.steps_full,
        lr_pmi: cfg.lr_pmi,
        lr_full: cfg.lr_full,
        entry_layer: cfg.entry_layer,
        input_grid: None,
    }
}

pub fn dataset_for(cfg: &ExperimentConfig) -> Result<ToyDataset> {
    gen_toy_dataset(
        cfg.classes,
        cfg.dim,
        cfg.samples_per_class,
        cfg.spread,
        derive_seed(cfg.seed, "dataset"),
    )
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let dataset = dataset_for(cfg)?;
    let tasks = split_tasks(
        &dataset.train,
        &dataset.test,
        cfg.classes,
        cfg.tasks,
        child_seed(derive_seed(cfg.seed, "dataset"), 1),
    )?;
    let anchors = tasks
        .class_order
        .iter()
        .map(|&c| dataset.centroids[c].clone())
        .collect();
    let mut rng = rng_from(child_seed(derive_seed(cfg.seed, "init"), 0));
    let backbone = Backbone::mlp(&cfg.layer_dims, &cfg.activations, &mut rng)?;
    let feat = *cfg.layer_dims.last().expect("validated");
    let head = match cfg.head {
        HeadMode::Linear => ClassificationHead::linear(feat),
        HeadMode::Anchor => ClassificationHead::anchor(feat, cfg.anchor_scale)?,
    };
    let net = Network::new(backbone, head)?;
    let last_task = match cfg.last_task {
        LastTask::Train => LastTaskPolicy::Train,
        LastTask::NoData => LastTaskPolicy::NoData,
        LastTask::Synthesize => LastTaskPolicy::Synthesize(SynthConfig {
            top_k: cfg.synth_top_k,
            alpha: cfg.synth_alpha,
            samples_per_class: cfg.synth_samples,
        }),
    };
    let continual = ContinualConfig {
        train: TrainConfig {
            epochs: cfg.epochs,
            lr: cfg.lr,
            batch_size: cfg.batch_size,
        },
        weights: cfg.weights.clone(),
        replay: cfg.replay,
        buffer: BufferConfig {
            policy: cfg.buffer,
            use_cfs: cfg.cfs_enabled,
            cfs: CfsConfig {
                init_size: cfg.cfs_k0,
                steps: 0,
                candidates: cfg.cfs_candidates,
                keep_ratio: cfg.cfs_keep_ratio,
                temperature: cfg.cfs_temperature,
            },
            inversion: inversion_config(cfg),
        },
        contrastive: ContrastiveConfig {
            hidden: cfg.contrastive_hidden,
            output: cfg.contrastive_output,
            epochs: cfg.contrastive_epochs,
            lr: cfg.contrastive_lr,
            batch_size: cfg.contrastive_batch,
            temperature: cfg.cfs_temperature,
        },
        last_task,
    };
    Ok(Prepared {
        dataset,
        tasks,
        net,
        anchors,
        continual,
    })
}

/// Runs the continual loop without touching the filesystem.
pub fn execute(cfg: &ExperimentConfig) -> Result<ContinualOutcome> {
    let p = prepare(cfg)?;
    let anchors = (cfg.head == HeadMode::Anchor).then_some(p.anchors.as_slice());
    run_continual(p.net, &p.tasks, anchors, &p.continual, cfg.seed)
}

fn write_artifacts(cfg: &ExperimentConfig, out: &ContinualOutcome) -> Result<()> {
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.txt"), cfg.to_text())?;
    fs::write(dir.join("metrics.csv"), out.metrics.to_csv())?;
    if cfg.write_traces && !out.traces.is_empty() {
        let tdir = dir.join("traces");
        fs::create_dir_all(&tdir)?;
        for t in &out.traces {
            t.trace
                .write_csv(tdir.join(format!("task{}_class{}.csv", t.task, t.class)))?;
        }
    }
    if cfg.write_checkpoints {
        let cdir = dir.join("checkpoints");
        fs::create_dir_all(&cdir)?;
        for (i, net) in out.checkpoints.iter().enumerate() {
            save_network(net, cdir.join(format!("stage{}.ckpt", i + 1)))?;
        }
        let bdir = dir.join("buffers");
        for (i, buf) in out
            .buffers
            .iter()
            .enumerate()
            .filter(|(_, b)| !b.is_empty())
        {
            fs::create_dir_all(&bdir)?;
            write_buffer(
                fs::File::create(bdir.join(format!("stage{}.buf", i + 1)))?,
                buf,
            )?;
            write_buffer_csv(
                fs::File::create(bdir.join(format!("stage{}.csv", i + 1)))?,
                buf,
            )?;
        }
    }
    Ok(())
}

/// Runs the experiment and writes config, metrics, traces, checkpoints and
/// buffers under `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ContinualOutcome> {
    let out = execute(cfg)?;
    write_artifacts(cfg, &out)?;
    info!(
        "final average accuracy {:.4}, average incremental accuracy {:.4}",
        out.metrics.final_avg(),
        out.metrics.avg_incremental()
    );
    Ok(out)
}

/// Process exit code for a failed run: 2 for configuration problems, 3 for
/// numerical failure, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::NonFinite(_) => 3,
        _ => 1,
    }
}

/// Reads a config file, applies overrides and runs it. Returns the exit
/// code after reporting any failure on stderr.
pub fn run_experiment_file(path: &Path, seed: Option<u64>, out_dir: Option<&Path>) -> i32 {
    let result = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        .and_then(|text| ExperimentConfig::parse(&text))
        .and_then(|mut cfg| {
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(d) = out_dir {
                cfg.out_dir = d.to_path_buf();
            }
            run_experiment(&cfg)
        });
    match result {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
