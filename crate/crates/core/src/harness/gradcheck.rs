use rand::Rng;
use serde::Serialize;

use crate::adapters::{attach_adapter, AdaptedDenoiser, AdapterSpec};
use crate::diffusion::{objective_bundle, Denoiser, Normalization, TrainBatch};
use crate::fair_moo::ObjectiveBundle;
use crate::numerics::{max_relative_error, ParamVector};
use crate::seeds;

use super::reference::Reference;

use super::{data, HarnessError, RunConfig};

/// Step of the central differences.
pub const FD_STEP: f64 = 1e-5;
/// Bound on the elementwise relative error.
pub const FD_TOLERANCE: f64 = 1e-5;
/// Floor of the relative-error denominator.
pub const FD_FLOOR: f64 = 1e-8;

/// Largest elementwise relative error per objective for one random model.
#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub adapter_rank: Option<usize>,
    pub params: usize,
    pub max_rel_err: [f64; 3],
    pub passed: bool,
}

fn max_errors(bundle: &ObjectiveBundle, fd: &[Vec<f64>; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| max_relative_error(bundle.grads()[i].data(), &fd[i], FD_FLOOR))
}

/// Largest relative error per objective between the tape gradients of the
/// bare denoiser and double-double central differences.
pub fn check_base(batch: &TrainBatch, base: &Denoiser, theta: &ParamVector) -> Result<[f64; 3], HarnessError> {
    let norm = Normalization::FullCount;
    let bundle = objective_bundle(batch, base, theta, norm)?;
    let fd = Reference::for_base(base, theta, batch, norm)?.central_differences(FD_STEP);
    Ok(max_errors(&bundle, &fd))
}

/// As [`check_base`] for the adapter parameters `phi` of `model`.
pub fn check_adapted(batch: &TrainBatch, model: &AdaptedDenoiser, phi: &ParamVector) -> Result<[f64; 3], HarnessError> {
    let norm = Normalization::FullCount;
    let bundle = objective_bundle(batch, model, phi, norm)?;
    let fd = Reference::for_adapted(model, phi, batch, norm)?.central_differences(FD_STEP);
    Ok(max_errors(&bundle, &fd))
}

/// Gradient check of a random 8×8 toy denoiser drawn from `seed`: one or
/// two hidden layers of width at most 64, optionally wrapped in an adapter
/// whose up-projection is randomized so both factors get gradients.
pub fn random_gradcheck(seed: u64) -> Result<GradcheckReport, HarnessError> {
    let mut rng = seeds::rng(seed);
    let depth = rng.gen_range(1..=2);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.gen_range(2..=64)).collect();
    let batch_size = rng.gen_range(1..=3);
    let cfg = RunConfig {
        seed,
        image_size: 8,
        latent_factor: 1,
        hidden: hidden.clone(),
        ..Default::default()
    };
    let schedule = data::schedule(&cfg)?;
    let batch = data::minibatch(&cfg, &schedule, seeds::Stream::Train, 0, batch_size)?;
    let base = Denoiser::new(64, hidden.clone())?;
    let theta = base.init(rng.gen());
    let (errs, rank, params) = if rng.gen_bool(0.5) {
        (check_base(&batch, &base, &theta)?, None, theta.len())
    } else {
        let max_rank = hidden.iter().copied().min().unwrap_or(1);
        let rank = rng.gen_range(1..=max_rank.min(8));
        let spec = AdapterSpec::all_layers(&base, rank, rng.gen_range(0.1..1.0));
        let (model, adapter, _) = attach_adapter(&base, &theta, &spec, rng.gen())?;
        let data = adapter.params.data().iter().map(|_| rng.gen_range(-0.3..0.3)).collect();
        let phi = adapter.params.with_data(data)?;
        (check_adapted(&batch, &model, &phi)?, Some(rank), phi.len())
    };
    Ok(GradcheckReport {
        seed,
        hidden,
        batch_size,
        adapter_rank: rank,
        params,
        passed: errs.iter().all(|&e| e <= FD_TOLERANCE),
        max_rel_err: errs,
    })
}
