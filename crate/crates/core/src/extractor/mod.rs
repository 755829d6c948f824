//! Supervised multi-task pre-training on the super-domain log.
//!
//! Click, conversion and add-to-cart heads share one embedding bottom. Each
//! head is optimized with the hybrid loss `L = L^point + α·L^pair`, where the
//! pairwise term is built from same-session (positive, negative) triplets.
//! Click is trained on impressions, conversion and cart on clicks only.

mod checkpoint;
mod knowledge;
pub mod loss;
mod model;
mod train;
mod triplets;

pub use checkpoint::{load_extractor, save_extractor, ExtractorCheckpoint};
pub use knowledge::{extract_batch, extract_knowledge, interaction_knowledge, knowledge_dim, KnowledgeMask, KnowledgeVector};
pub use loss::{hybrid_loss, pairwise_loss, pointwise_loss};
pub use model::{ExtractorConfig, ExtractorModel, FeatureSchema, Task};
pub use train::{
    compute_gradients, objective, pretrain_step, PretrainBatch, PretrainConfig, PretrainReport, Pretrainer,
    StepLosses, TaskLoss,
};
pub use triplets::{build_triplets, Triplet, TripletBatch};
