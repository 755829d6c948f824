//! Downstream CTR model and the plug-in network.
//!
//! Frozen knowledge `K` is projected by a shallow MLP to `h^k` and added to
//! the output of main-MLP layer `m`: `h'_m = h_m + h^k`. The main
//! architecture is the same with or without a plug, so a model trained
//! without knowledge can be warm-started and extended in place.

mod model;
mod train;

pub use model::{forward_logits, forward_with_plug, DownstreamConfig, DownstreamModel, PlugConfig, PlugInNetwork};
pub use train::{
    compute_gradients, objective, DayTrainReport, DownstreamTrainer, ExtractorKnowledge, KnowledgeBatch,
    KnowledgeSource, TrainConfig, DOWNSTREAM_KIND,
};
