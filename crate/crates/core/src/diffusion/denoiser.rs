use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::numerics::{NodeId, NumericsError, ParamNodes, ParamVector, Tape, Tensor};
use crate::seeds;

use super::DiffusionError;

pub const TIME_EMBED_DIM: usize = 16;
pub const COND_DIM: usize = 4;

/// Sinusoidal embedding: `sin(t·ω_i)` then `cos(t·ω_i)`, `ω_i = 10000^{-i/8}`.
pub fn time_embedding(t: usize) -> [f64; TIME_EMBED_DIM] {
    let half = TIME_EMBED_DIM / 2;
    let mut out = [0.0; TIME_EMBED_DIM];
    for i in 0..half {
        let w = 10000f64.powf(-(i as f64) / half as f64);
        out[i] = (t as f64 * w).sin();
        out[half + i] = (t as f64 * w).cos();
    }
    out
}

/// A noise predictor that can be recorded on a tape.
pub trait Denoise {
    /// Latent values per sample.
    fn io_dim(&self) -> usize;

    /// Records `ε̂` (`[B, io_dim]`) for `input` (`[B, io_dim + 20]`, rows
    /// `z_t ⊕ time embedding ⊕ cond`), reading trainable tensors from
    /// `params`.
    fn record(&self, tape: &mut Tape, params: &ParamNodes, input: NodeId) -> Result<NodeId, NumericsError>;

    /// Forward pass only.
    fn predict(&self, theta: &ParamVector, input: &Tensor) -> Result<Tensor, NumericsError> {
        let mut tape = Tape::new();
        let params = ParamNodes::record(&mut tape, theta);
        let x = tape.constant(input.clone());
        let out = self.record(&mut tape, &params, x)?;
        Ok(tape.value(out).clone())
    }
}

/// Dense tanh network `fc1 … fcN`; the last layer is linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Denoiser {
    pub io_dim: usize,
    pub hidden: Vec<usize>,
}

/// Name, fan-in and fan-out of one dense layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub name: String,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Denoiser {
    pub fn new(io_dim: usize, hidden: Vec<usize>) -> Result<Self, DiffusionError> {
        if io_dim == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(DiffusionError::Shape(format!(
                "denoiser needs io_dim > 0 and non-zero hidden widths, got {io_dim}, {hidden:?}"
            )));
        }
        Ok(Self { io_dim, hidden })
    }

    pub fn input_dim(&self) -> usize {
        self.io_dim + TIME_EMBED_DIM + COND_DIM
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        let mut dims = vec![self.input_dim()];
        dims.extend(&self.hidden);
        dims.push(self.io_dim);
        dims.windows(2)
            .enumerate()
            .map(|(i, w)| LayerShape {
                name: format!("fc{}", i + 1),
                fan_in: w[0],
                fan_out: w[1],
            })
            .collect()
    }

    /// Whether `theta` has exactly this network's segments, in order.
    pub fn matches_layout(&self, theta: &ParamVector) -> bool {
        let mut expected = Vec::new();
        for l in self.layers() {
            expected.push((format!("{}.weight", l.name), vec![l.fan_out, l.fan_in]));
            expected.push((format!("{}.bias", l.name), vec![l.fan_out]));
        }
        theta.segments().len() == expected.len()
            && theta
                .segments()
                .iter()
                .zip(&expected)
                .all(|(s, (name, shape))| &s.name == name && &s.shape == shape)
    }

    /// Weights `N(0, 1/fan_in)`, zero biases.
    pub fn init(&self, seed: u64) -> ParamVector {
        let mut rng = seeds::rng(seed);
        let mut tensors = Vec::new();
        for l in self.layers() {
            let normal = Normal::new(0.0, (l.fan_in as f64).powf(-0.5)).expect("positive std");
            let w = Tensor::from_fn(&[l.fan_out, l.fan_in], |_| normal.sample(&mut rng));
            tensors.push((format!("{}.weight", l.name), w));
            tensors.push((format!("{}.bias", l.name), Tensor::zeros(&[l.fan_out])));
        }
        ParamVector::from_tensors(tensors).expect("distinct layer names")
    }

    /// Records the network with per-layer `(weight, bias)` nodes supplied by `layer`.
    pub fn record_with(
        &self,
        tape: &mut Tape,
        input: NodeId,
        mut layer: impl FnMut(&mut Tape, &LayerShape) -> Result<(NodeId, NodeId), NumericsError>,
    ) -> Result<NodeId, NumericsError> {
        let layers = self.layers();
        let mut x = input;
        for (i, l) in layers.iter().enumerate() {
            let (w, b) = layer(tape, l)?;
            x = tape.affine(x, w, b)?;
            if i + 1 < layers.len() {
                x = tape.tanh(x)?;
            }
        }
        Ok(x)
    }
}

/// Rows `z_t ⊕ time_embedding(t) ⊕ cond` for a batch.
pub fn build_input(zt: &Tensor, t: &[usize], cond: &Tensor) -> Result<Tensor, DiffusionError> {
    let (b, n) = zt.dims2()?;
    if t.len() != b || cond.shape() != [b, COND_DIM] {
        return Err(DiffusionError::Shape(format!(
            "z_t {:?}, {} timesteps, cond {:?}",
            zt.shape(),
            t.len(),
            cond.shape()
        )));
    }
    let width = n + TIME_EMBED_DIM + COND_DIM;
    let mut data = Vec::with_capacity(b * width);
    for r in 0..b {
        data.extend_from_slice(zt.row(r));
        data.extend_from_slice(&time_embedding(t[r]));
        data.extend_from_slice(cond.row(r));
    }
    Ok(Tensor::new(vec![b, width], data)?)
}

impl Denoise for Denoiser {
    fn io_dim(&self) -> usize {
        self.io_dim
    }

    fn record(&self, tape: &mut Tape, params: &ParamNodes, input: NodeId) -> Result<NodeId, NumericsError> {
        self.record_with(tape, input, |_, l| {
            Ok((
                params.get(&format!("{}.weight", l.name))?,
                params.get(&format!("{}.bias", l.name))?,
            ))
        })
    }
}
