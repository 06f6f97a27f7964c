//! The iterative engine: five stages of `y <- y + f_t(render(I, y))`.

mod frame;
mod mining;
mod model;
mod run;
mod train;

pub use frame::Frame;
pub use mining::{balanced_batches, mine_hard_samples, BalancedBatches, Histogram, MiningPartition};
pub use model::{CascadeModel, PatchConfig, NUM_STAGES};
pub use run::{
    clip_corrections, extract_patches, gate_corrections, global_input, patch_input, run_cascade,
    run_cascade_from, run_local_stage, CascadeBackend, CascadeResult, NetworkBackend, OracleBackend,
    PatchSet, StageStep,
};
pub use train::{train_cascade, CascadeConfig, MiningSummary, StageReport, TrainedCascade};
