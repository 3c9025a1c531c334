//! Dataset ingestion, synthetic fleet generation, metrics, configuration,
//! and experiment orchestration.

pub mod config;
pub mod dataset;
pub mod metrics;
pub mod runner;
pub mod synth;

pub use config::{DataMode, RunConfig, SynthAnomalyKind, ThresholdConfig};
pub use dataset::{group_services, load_dataset, write_smd_style, ServiceDataset};
pub use metrics::prf1;
pub use runner::{
    build_synth_fleet, prepare_data, run_experiment, stage_detect, stage_eval, stage_preprocess,
    stage_train, RunOptions, RunReport, ServiceMetrics,
};
pub use synth::{synth_generate, AnomalyEvent, AnomalyKind, SynthSpec};
