//! Class-incremental training with synthetic replay: task splits, loss
//! terms, buffer generation, per-task training, model refresh and metrics.

mod buffer;
mod losses;
mod metrics;
mod run;
mod tasks;
mod train;

pub use buffer::{
    build_replay_buffer, read_buffer, write_buffer, write_buffer_csv, BufferBuild, BufferConfig,
    BufferEntry, BufferPolicy, ClassModel, SyntheticBuffer, BUFFER_MAGIC,
};
pub use losses::{ft_loss, hkd_loss, rkd_loss, tft_loss, tkd_loss};
pub use metrics::{accuracy, evaluate, predict_seen, Metrics, StageMetrics, METRICS_CSV_HEADER};
pub use run::{
    fit_class_models, refresh_layer_stats, refresh_old_class_models, run_continual,
    synthesize_new_classes, ContinualConfig, ContinualOutcome, LastTaskPolicy, SynthConfig,
    TraceEntry,
};
pub use tasks::{split_tasks, LabeledSet, Task, TaskSequence};
pub use train::{prepare_head, train_task, CLLossWeights, TrainConfig, TrainReport};
