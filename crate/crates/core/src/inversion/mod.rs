//! Model inversion: the layer-wise and full-model objectives and the
//! per-layer (PMI) + full-model procedure.

mod kl;
mod objective;
mod pmi;
mod trace;
mod tv;

pub use kl::{batch_prior_kl, gaussian_kl};
pub use objective::{
    full_inversion_objective, full_inversion_objective_from, layer_inversion_objective,
    top_label_objective, InversionTarget, InversionWeights, LossParts,
};
pub use pmi::{
    finetune_full, invert, invert_from_random, invert_layer, run_pmi, sample_from_stats, Inversion,
    InversionConfig, PmiOutput, RandomInit,
};
pub use trace::{InversionTrace, Phase, TraceRecord, TRACE_CSV_HEADER};
pub use tv::total_variation;
