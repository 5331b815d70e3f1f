use crate::fair_moo::ObjectiveBundle;
use crate::numerics::{evaluate, values_and_grads, NodeId, NumericsError, ParamNodes, ParamVector, Tape, Tensor};

use super::{build_input, q_sample, Denoise, DiffusionError, NoiseSchedule, Normalization, RegionMasks, SceneSample};

/// Objective order of every bundle and metrics row.
pub const OBJECTIVE_NAMES: [&str; 3] = ["l_global", "l_face", "l_hand"];

/// One minibatch of the denoising task; rows are samples.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainBatch {
    pub z0: Tensor,
    pub eps: Tensor,
    pub t: Vec<usize>,
    pub cond: Tensor,
    pub masks: Vec<RegionMasks>,
    zt: Tensor,
    input: Tensor,
    face: Tensor,
    hand: Tensor,
}

impl TrainBatch {
    /// `z0`, `eps`: `[B, n]`; `cond`: `[B, 4]`; one mask set and one
    /// timestep in `1..=T` per row.
    pub fn new(
        z0: Tensor,
        eps: Tensor,
        t: Vec<usize>,
        cond: Tensor,
        masks: Vec<RegionMasks>,
        schedule: &NoiseSchedule,
    ) -> Result<Self, DiffusionError> {
        let (b, n) = z0.dims2()?;
        if eps.shape() != z0.shape() || t.len() != b || masks.len() != b {
            return Err(DiffusionError::Shape(format!(
                "z0 {:?}, eps {:?}, {} timesteps, {} mask sets",
                z0.shape(),
                eps.shape(),
                t.len(),
                masks.len()
            )));
        }
        let mut zt = Vec::with_capacity(b * n);
        let (mut face, mut hand) = (Vec::with_capacity(b * n), Vec::with_capacity(b * n));
        for r in 0..b {
            let row = |x: &Tensor| Tensor::vector(x.row(r));
            zt.extend_from_slice(q_sample(&row(&z0), t[r], &row(&eps), schedule)?.data());
            for (dst, m) in [(&mut face, &masks[r].face_latent), (&mut hand, &masks[r].hand_latent)] {
                if m.len() != n {
                    return Err(DiffusionError::Shape(format!(
                        "row {r}: latent mask has {} cells, latent has {n}",
                        m.len()
                    )));
                }
                dst.extend_from_slice(m.data());
            }
        }
        let zt = Tensor::new(vec![b, n], zt)?;
        let input = build_input(&zt, &t, &cond)?;
        Ok(Self {
            z0,
            eps,
            t,
            cond,
            masks,
            zt,
            input,
            face: Tensor::new(vec![b, n], face)?,
            hand: Tensor::new(vec![b, n], hand)?,
        })
    }

    /// Stacks rendered scenes with the given noise and timesteps.
    pub fn from_samples(
        samples: &[SceneSample],
        eps: Tensor,
        t: Vec<usize>,
        schedule: &NoiseSchedule,
    ) -> Result<Self, DiffusionError> {
        let n = samples.first().map_or(0, |s| s.z0.len());
        let mut z0 = Vec::with_capacity(samples.len() * n);
        let mut cond = Vec::with_capacity(samples.len() * 4);
        for s in samples {
            z0.extend_from_slice(s.z0.data());
            cond.extend_from_slice(&s.cond);
        }
        let b = samples.len();
        Self::new(
            Tensor::new(vec![b, n], z0)?,
            eps,
            t,
            Tensor::new(vec![b, 4], cond)?,
            samples.iter().map(|s| s.masks.clone()).collect(),
            schedule,
        )
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn zt(&self) -> &Tensor {
        &self.zt
    }

    /// Denoiser input rows `z_t ⊕ time embedding ⊕ cond`.
    pub fn input(&self) -> &Tensor {
        &self.input
    }

    /// Stacked latent face masks, `[B, n]`.
    pub fn face_mask(&self) -> &Tensor {
        &self.face
    }

    pub fn hand_mask(&self) -> &Tensor {
        &self.hand
    }

    /// Records the three losses on one shared forward pass.
    pub fn record_losses<M: Denoise + ?Sized>(
        &self,
        tape: &mut Tape,
        params: &ParamNodes,
        model: &M,
        norm: Normalization,
    ) -> Result<Vec<NodeId>, NumericsError> {
        let x = tape.constant(self.input.clone());
        let pred = model.record(tape, params, x)?;
        let target = tape.constant(self.eps.clone());
        let total = self.eps.len();
        let global = tape.squared_error(pred, target, total as f64)?;
        let mut out = vec![global];
        for m in [&self.face, &self.hand] {
            let divisor = norm.divisor(total, m.sum());
            let mask = tape.constant(m.clone());
            out.push(tape.masked_squared_error(pred, target, mask, divisor)?);
        }
        Ok(out)
    }
}

fn check_losses(losses: &[f64]) -> Result<(), DiffusionError> {
    for (index, &value) in losses.iter().enumerate() {
        if !value.is_finite() {
            return Err(DiffusionError::NonFiniteLoss {
                index,
                name: OBJECTIVE_NAMES[index],
                value,
            });
        }
    }
    Ok(())
}

/// `(l_global, l_face, l_hand)` and their gradients with respect to the
/// trainable tensors `theta` of `model`.
pub fn objective_bundle<M: Denoise + ?Sized>(
    batch: &TrainBatch,
    model: &M,
    theta: &ParamVector,
    norm: Normalization,
) -> Result<ObjectiveBundle, DiffusionError> {
    let (losses, grads) = values_and_grads(|tape, p| batch.record_losses(tape, p, model, norm), theta)?;
    check_losses(&losses)?;
    for (index, g) in grads.iter().enumerate() {
        if !g.is_finite() {
            return Err(DiffusionError::NonFiniteGradient {
                index,
                name: OBJECTIVE_NAMES[index],
            });
        }
    }
    Ok(ObjectiveBundle::new(losses, grads)?)
}

/// The three losses without gradients.
pub fn objective_losses<M: Denoise + ?Sized>(
    batch: &TrainBatch,
    model: &M,
    theta: &ParamVector,
    norm: Normalization,
) -> Result<[f64; 3], DiffusionError> {
    let v = evaluate(|tape, p| batch.record_losses(tape, p, model, norm), theta)?;
    check_losses(&v)?;
    Ok([v[0], v[1], v[2]])
}
