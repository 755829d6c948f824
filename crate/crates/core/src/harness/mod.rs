//! Online-learning experiment driver and GAUC evaluation.
//!
//! Days replace calendar dates: by default the extractor is pre-trained on
//! super-domain days 0–4, downstream models learn online on days 5–6 and
//! are scored on sub-domain day 7.

mod config;
mod gauc;
mod grid;
mod online;

pub use config::{ExperimentConfig, KnowledgeSpec, Mode, Tables};
pub use gauc::{auc, gauc, gauc_grouped, GaucReport, GaucStatus, GroupGauc, GROUP_BOUNDS};
pub use grid::{
    run_experiment_grid, run_specs, CellResult, Check, GridReport, RunSpec, SeedConfigs, SeedContext, ServiceResolver,
    Stats, REFERENCE_BASE_GAUC, REFERENCE_KEEP_GAUC,
};
pub use online::{evaluate, run_online_loop, DayKnowledge, OnlineRun, OnlineSpec};
