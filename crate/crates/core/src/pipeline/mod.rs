//! Experiment orchestration: configuration, training, artifacts and sweeps.

mod ablate;
mod artifacts;
mod config;
mod train;

pub use ablate::{
    ablate, lambda_grid, noise_grid, parse_sweep, render_ablation, write_ablation, AblationRow, SweepPoint,
};
pub use artifacts::{
    load_run, write_run, ModelCard, RunManifest, CHECKPOINT_FILE, CONFIG_FILE, MANIFEST_FILE, MODEL_CARD_FILE,
    REPORT_FILE,
};
pub use config::{
    flatten_table, parse_override_value, ExperimentConfig, CONFIG_KEYS, METHOD_UNCERTAINTY, SCORING_METHODS,
};
pub use train::{
    evaluate_bundle, generator_spec, initial_bundle, load_data, project_features, run_experiment, run_with_data,
    EpochLog, ExperimentData, Projection, RunOutcome,
};
