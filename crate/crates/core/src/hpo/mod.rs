//! Population-based training with a time-varying Gaussian-process bandit
//! choosing the continuous hyperparameters of perturbed trials.

mod gp;
mod pb2;
mod space;
mod trainables;

pub use gp::{GpBandit, KernelParams, Observation};
pub use pb2::{
    exploit_explore, random_search, ready_and_rank, run_hpo, run_hpo_logged, HpoEvent, HpoResult, LineageEvent, Pb2Config, Proposal, Ranking, Step, Trainable,
    TrialState,
};
pub use space::{presets, sample_initial_population, Config, DimKind, Dimension, HyperParamSpace, ParamValue, Scale};
pub use trainables::{apply_hyperparams, FusionTrainable, QuadraticTrainable};

use crate::models::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum HpoError {
    #[error("search space: {0}")]
    Space(String),
    #[error("population of {0} is too small; at least 2 trials are needed")]
    Population(usize),
    #[error("invalid tuner configuration: {0}")]
    Config(String),
    #[error("trials are at different epochs: {0:?}")]
    UnequalEpochs(Vec<(usize, usize)>),
    #[error("trial {0} has no interval score")]
    NotReady(usize),
    #[error("trial {trial} failed: {reason}")]
    Trial { trial: usize, reason: String },
    #[error("every trial failed at epoch {0}")]
    AllFailed(usize),
    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
