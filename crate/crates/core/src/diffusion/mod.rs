//! Toy region-masked denoising task.
//!
//! Synthetic scenes carry a face box and a hand box with distinct
//! high-frequency textures over a smooth background. The "latent" is the
//! image average-pooled by `latent_factor`, and region masks are reshaped
//! to that resolution by the any-overlap rule. A small dense denoiser
//! predicts the noise added by the forward process, and three losses are
//! read off one shared forward pass: global, face-masked and hand-masked
//! squared error.

use thiserror::Error;

use crate::fair_moo::FairMooError;
use crate::numerics::NumericsError;

mod batch;
mod denoiser;
mod loss;
mod masks;
mod scene;
mod schedule;

pub use batch::{objective_bundle, objective_losses, TrainBatch, OBJECTIVE_NAMES};
pub use denoiser::{build_input, time_embedding, Denoise, Denoiser, LayerShape, COND_DIM, TIME_EMBED_DIM};
pub use loss::{masked_mse, Normalization};
pub use masks::{box_mask, downscale_mask, pool_latent, MaskRecord, RegionMasks};
pub use scene::{synth_sample, Rect, SceneSample, SceneSpec, Texture};
pub use schedule::{make_schedule, q_sample, q_sample_with_alpha_bar, NoiseSchedule};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),
    #[error("timestep {t} outside 1..={max}")]
    InvalidTimestep { t: usize, max: usize },
    #[error("image size {image_size} is not divisible by latent factor {factor}")]
    Divisibility { image_size: usize, factor: usize },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("objective {index} ({name}) is not finite: {value}")]
    NonFiniteLoss {
        index: usize,
        name: &'static str,
        value: f64,
    },
    #[error("gradient of objective {index} ({name}) is not finite")]
    NonFiniteGradient { index: usize, name: &'static str },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    FairMoo(#[from] FairMooError),
}
