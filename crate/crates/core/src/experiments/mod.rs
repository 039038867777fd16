//! Synthetic data, the training loop and multi-seed summaries.

mod config;
mod data;
mod probe;
mod record;
mod summary;
mod train;

pub use config::{ExperimentConfig, Task, TrainConfig};
pub use data::{
    gen_images, gen_sbm, read_dataset, write_dataset, ImageDataset, ImageSplit, SbmGraphSpec, SyntheticImageSpec,
    PATTERN_FAMILIES,
};
pub use probe::linear_probe;
pub use record::{read_records, write_records, EpochRecord, RunRecord, RunStatus};
pub use summary::{median, multi_seed, run_grid, sampling_grid, summarize, SamplingCell, Stat, SummaryRow};
pub use train::{evaluate_images, prepare, prepare_cached, run_one, sgd_step, train_graph, train_image, Prepared};
