//! Training procedure, experiment orchestration and result files.

pub mod config;
pub mod experiment;
pub mod optim;
pub mod output;
pub mod run;

pub use config::{
    ConfigFile, DataConfig, ExperimentConfig, Grid, HyperParam, NeighborSpace, SweepSpec,
};
pub use experiment::{
    fingerprint, grid_search, run_experiment, run_many, sweep, GridOutcome, GridRow, MetricSummary,
    RunResult, SplitFailure, SplitResult, SweepRow,
};
pub use optim::Adam;
pub use run::{
    derive_seed, objective_terms, prepare_dataset, pretrain, run_split, train, CfWarnings,
    ObjectiveInputs, Pretrained, TrainOutcome,
};
