//! Experiment harness: configuration, training loop, evaluation, strategy
//! comparison and the command-line entry points.
//!
//! A run pretrains a frozen backbone on `l_global`, attaches a low-rank
//! adapter and fine-tunes it with one weighting strategy. Every random draw
//! comes from a stream derived from the run seed, so a run is a pure
//! function of its config.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::adapters::AdapterError;
use crate::diffusion::DiffusionError;
use crate::fair_moo::FairMooError;
use crate::numerics::NumericsError;

pub mod cli;
pub mod compare;
pub mod config;
pub mod data;
pub mod eval;
pub mod gradcheck;
pub mod optim;
pub mod reference;
pub mod train;

pub use compare::{compare_strategies, Comparison, StrategyRow};
pub use config::{AdapterConfig, PretrainConfig, RunConfig, ScheduleConfig, OUT_ENV};
pub use eval::{evaluate, EvalSet, RegionMetrics};
pub use gradcheck::{random_gradcheck, GradcheckReport};
pub use optim::Adam;
pub use train::{
    load_base, pretrain_base, run_training, train_adapter, write_run, EvalRecord, MetricsRecord, RunRecord,
    RunSummary,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("configs are not comparable: {0}")]
    Mismatch(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("non-finite {name} (objective {index}) at step {step}")]
    NonFinite {
        step: usize,
        index: usize,
        name: &'static str,
    },
    #[error("parameters became non-finite after step {step}")]
    NonFiniteParameters { step: usize },
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    FairMoo(#[from] FairMooError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

impl HarnessError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}
