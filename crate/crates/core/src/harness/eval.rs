use serde::{Deserialize, Serialize};

use crate::diffusion::{objective_losses, Denoise, NoiseSchedule, Normalization, TrainBatch};
use crate::numerics::ParamVector;

use super::{data, HarnessError, RunConfig};

/// Mean of the three losses over a fixed sample set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionMetrics {
    pub l_global: f64,
    pub l_face: f64,
    pub l_hand: f64,
}

impl RegionMetrics {
    /// `l_face + l_hand`.
    pub fn regional(&self) -> f64 {
        self.l_face + self.l_hand
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.l_global, self.l_face, self.l_hand]
    }
}

/// Per-sample batches scored independently, so results do not depend on
/// how samples are grouped.
#[derive(Clone, Debug)]
pub struct EvalSet {
    pub samples: Vec<TrainBatch>,
}

impl EvalSet {
    /// `cfg.eval_count` held-out scenes, each at the fixed evaluation
    /// timesteps with fixed noise.
    pub fn held_out(cfg: &RunConfig, schedule: &NoiseSchedule) -> Result<Self, HarnessError> {
        let samples = (0..cfg.eval_count)
            .map(|j| data::eval_sample(cfg, schedule, j))
            .collect::<Result<_, _>>()?;
        Ok(Self { samples })
    }

    /// `cfg.probe_count` training-distribution samples with fixed noise and
    /// timesteps.
    pub fn probe(cfg: &RunConfig, schedule: &NoiseSchedule) -> Result<Self, HarnessError> {
        let samples = (0..cfg.probe_count)
            .map(|j| data::probe_sample(cfg, schedule, j))
            .collect::<Result<_, _>>()?;
        Ok(Self { samples })
    }
}

/// Mean `l_global`, `l_face`, `l_hand` of `model` over `set`, accumulated
/// in sample order.
pub fn evaluate<M: Denoise + ?Sized>(
    model: &M,
    theta: &ParamVector,
    set: &EvalSet,
    norm: Normalization,
) -> Result<RegionMetrics, HarnessError> {
    if set.samples.is_empty() {
        return Err(HarnessError::EmptyEvalSet);
    }
    let mut acc = [0.0; 3];
    for s in &set.samples {
        let l = objective_losses(s, model, theta, norm)?;
        for k in 0..3 {
            acc[k] += l[k];
        }
    }
    let n = set.samples.len() as f64;
    Ok(RegionMetrics {
        l_global: acc[0] / n,
        l_face: acc[1] / n,
        l_hand: acc[2] / n,
    })
}
