//! Seeded sample streams of a run.
//!
//! Every sample is a pure function of the run seed, its stream and its
//! index, so batches and evaluation sets do not depend on iteration order.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffusion::{make_schedule, synth_sample, NoiseSchedule, SceneSample, SceneSpec, TrainBatch};
use crate::numerics::Tensor;
use crate::seeds::{self, Stream};

use super::{HarnessError, RunConfig};

/// Scene of `item_seed`: layout from a derived seed, textures from the
/// item seed itself.
pub fn scene(item_seed: u64, image_size: usize, latent_factor: usize) -> Result<SceneSample, HarnessError> {
    let mut layout_rng = seeds::rng(seeds::derive(item_seed, Stream::Scene, 0));
    let spec = SceneSpec::random(image_size, latent_factor, &mut layout_rng);
    Ok(synth_sample(item_seed, &spec)?)
}

pub fn schedule(cfg: &RunConfig) -> Result<NoiseSchedule, HarnessError> {
    let s = &cfg.schedule;
    Ok(make_schedule(s.steps, s.beta_start, s.beta_end)?)
}

/// The timesteps every evaluation sample is scored at: `T/4, T/2, 3T/4`.
pub fn eval_timesteps(t_max: usize) -> [usize; 3] {
    [t_max / 4, t_max / 2, 3 * t_max / 4]
}

/// One row: a scene, its noise and timestep.
#[derive(Clone, Debug)]
pub struct Item {
    pub sample: SceneSample,
    pub eps: Vec<f64>,
    pub t: usize,
}

/// Scene `item_seed` with noise from `noise_seed`; the timestep is `t` or
/// uniform on `1..=T`.
pub fn item(cfg: &RunConfig, item_seed: u64, noise_seed: u64, t: Option<usize>) -> Result<Item, HarnessError> {
    let sample = scene(item_seed, cfg.image_size, cfg.latent_factor)?;
    let mut rng = seeds::rng(noise_seed);
    let t = t.unwrap_or_else(|| rng.gen_range(1..=cfg.schedule.steps));
    let eps = (0..sample.z0.len()).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Item { sample, eps, t })
}

pub fn batch(items: Vec<Item>, schedule: &NoiseSchedule) -> Result<TrainBatch, HarnessError> {
    let n = items.first().map_or(0, |i| i.eps.len());
    let b = items.len();
    let mut eps = Vec::with_capacity(b * n);
    let mut t = Vec::with_capacity(b);
    let mut samples = Vec::with_capacity(b);
    for it in items {
        eps.extend_from_slice(&it.eps);
        t.push(it.t);
        samples.push(it.sample);
    }
    Ok(TrainBatch::from_samples(&samples, Tensor::new(vec![b, n], eps)?, t, schedule)?)
}

/// Minibatch `step` of `stream` with `size` rows.
pub fn minibatch(
    cfg: &RunConfig,
    schedule: &NoiseSchedule,
    stream: Stream,
    step: usize,
    size: usize,
) -> Result<TrainBatch, HarnessError> {
    let items = (0..size)
        .map(|i| {
            let item_seed = seeds::derive(cfg.seed, stream, (step * size + i) as u64);
            item(cfg, item_seed, seeds::derive(item_seed, stream, 0), None)
        })
        .collect::<Result<Vec<_>, _>>()?;
    batch(items, schedule)
}

/// Evaluation sample `j` at each of [`eval_timesteps`], as one batch.
pub fn eval_sample(cfg: &RunConfig, schedule: &NoiseSchedule, j: usize) -> Result<TrainBatch, HarnessError> {
    let item_seed = seeds::derive(cfg.seed, Stream::Eval, j as u64);
    let items = eval_timesteps(cfg.schedule.steps)
        .iter()
        .enumerate()
        .map(|(k, &t)| item(cfg, item_seed, seeds::derive(item_seed, Stream::Eval, k as u64), Some(t)))
        .collect::<Result<Vec<_>, _>>()?;
    batch(items, schedule)
}

/// Probe sample `j`: training distribution, fixed noise and timestep.
pub fn probe_sample(cfg: &RunConfig, schedule: &NoiseSchedule, j: usize) -> Result<TrainBatch, HarnessError> {
    let item_seed = seeds::derive(cfg.seed, Stream::Probe, j as u64);
    batch(vec![item(cfg, item_seed, seeds::derive(item_seed, Stream::Probe, 0), None)?], schedule)
}
