//! Low-rank adapters on a frozen [`Denoiser`].
//!
//! Each target layer `W` gains a trainable pair `A` (`r × fan_in`) and `B`
//! (`fan_out × r`) and is applied as `W + β·B·A` in a single affine pass.
//! The base tensors enter the tape as constants, so no gradient ever flows
//! into them.

use std::fs;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::{Denoise, Denoiser, LayerShape};
use crate::numerics::io::{read_tensor, write_tensor};
use crate::numerics::{NodeId, NumericsError, ParamNodes, ParamVector, Tape, Tensor};
use crate::seeds;

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("layer {layer}: rank {rank} must lie in 1..={max}")]
    RankBound { layer: String, rank: usize, max: usize },
    #[error("unknown target layer `{0}`")]
    UnknownTarget(String),
    #[error("scale beta must be finite, got {0}")]
    InvalidBeta(f64),
    #[error("adapted forward produced non-finite output")]
    NonFiniteOutput,
    #[error("adapter parameters do not match the spec: {0}")]
    Layout(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> AdapterError {
    AdapterError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Rank, scale and target layers of an adapter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterSpec {
    pub rank: usize,
    pub beta: f64,
    pub targets: Vec<String>,
}

impl AdapterSpec {
    /// Rank `rank` and scale `beta` on every layer of `base`.
    pub fn all_layers(base: &Denoiser, rank: usize, beta: f64) -> Self {
        Self {
            rank,
            beta,
            targets: base.layers().into_iter().map(|l| l.name).collect(),
        }
    }

    fn target_shapes(&self, base: &Denoiser) -> Result<Vec<LayerShape>, AdapterError> {
        if !self.beta.is_finite() {
            return Err(AdapterError::InvalidBeta(self.beta));
        }
        let layers = base.layers();
        let mut out = Vec::with_capacity(self.targets.len());
        for name in &self.targets {
            let l = layers
                .iter()
                .find(|l| &l.name == name)
                .ok_or_else(|| AdapterError::UnknownTarget(name.clone()))?;
            if out.iter().any(|o: &LayerShape| &o.name == name) {
                return Err(AdapterError::Layout(format!("target `{name}` listed twice")));
            }
            let max = l.fan_in.min(l.fan_out);
            if self.rank == 0 || self.rank > max {
                return Err(AdapterError::RankBound {
                    layer: name.clone(),
                    rank: self.rank,
                    max,
                });
            }
            out.push(l.clone());
        }
        Ok(out)
    }
}

/// Names of the down- and up-projection segments of `layer`.
pub fn projection_names(layer: &str) -> (String, String) {
    (format!("{layer}.lora_a"), format!("{layer}.lora_b"))
}

/// Trained or freshly initialized adapter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterParams {
    pub spec: AdapterSpec,
    pub seed: u64,
    /// Segments `<layer>.lora_a` (`r × fan_in`) and `<layer>.lora_b`
    /// (`fan_out × r`) per target, in target order.
    pub params: ParamVector,
}

impl AdapterParams {
    /// Same spec and seed, new tensors.
    pub fn with_params(&self, params: ParamVector) -> Result<Self, AdapterError> {
        if !params.same_layout(&self.params) {
            return Err(AdapterError::Layout("segment layout differs".into()));
        }
        Ok(Self {
            spec: self.spec.clone(),
            seed: self.seed,
            params,
        })
    }

    /// `B·A` of `layer`.
    pub fn delta(&self, layer: &str) -> Result<Tensor, AdapterError> {
        let (a, b) = projection_names(layer);
        let (a, b) = (self.tensor(&a)?, self.tensor(&b)?);
        Ok(b.matmul(&a)?)
    }

    fn tensor(&self, name: &str) -> Result<Tensor, AdapterError> {
        self.params
            .tensor(name)
            .ok_or_else(|| AdapterError::Layout(format!("missing segment `{name}`")))
    }
}

/// Frozen and trainable parameter names of an adapted model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamPartition {
    pub frozen: Vec<String>,
    pub trainable: Vec<String>,
}

impl ParamPartition {
    /// Whether the two sets are disjoint and together equal `all`.
    pub fn is_exact_cover(&self, all: &[String]) -> bool {
        let disjoint = self.frozen.iter().all(|f| !self.trainable.contains(f));
        let covered = all
            .iter()
            .all(|n| self.frozen.contains(n) || self.trainable.contains(n));
        let no_extra = self.frozen.len() + self.trainable.len() == all.len();
        disjoint && covered && no_extra
    }
}

/// A frozen denoiser with adapters on some of its layers.
///
/// As a [`Denoise`] model its trainable parameters are the adapter tensors;
/// the base tensors are recorded as constants.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedDenoiser {
    pub base: Denoiser,
    pub base_params: ParamVector,
    pub spec: AdapterSpec,
}

impl AdaptedDenoiser {
    pub fn new(base: Denoiser, base_params: ParamVector, spec: AdapterSpec) -> Result<Self, AdapterError> {
        spec.target_shapes(&base)?;
        if !base.matches_layout(&base_params) {
            return Err(AdapterError::Layout("base parameters do not match the denoiser".into()));
        }
        Ok(Self {
            base,
            base_params,
            spec,
        })
    }

    /// The same model with a different adapter scale.
    pub fn with_beta(&self, beta: f64) -> Result<Self, AdapterError> {
        if !beta.is_finite() {
            return Err(AdapterError::InvalidBeta(beta));
        }
        let mut out = self.clone();
        out.spec.beta = beta;
        Ok(out)
    }

    /// Adapter tensors with `A ~ N(0, 1/fan_in)` and `B = 0`.
    pub fn init_adapter(&self, seed: u64) -> Result<AdapterParams, AdapterError> {
        let mut rng = seeds::rng(seed);
        let mut tensors = Vec::new();
        for l in self.spec.target_shapes(&self.base)? {
            let normal = Normal::new(0.0, (l.fan_in as f64).powf(-0.5)).expect("positive std");
            let a = Tensor::from_fn(&[self.spec.rank, l.fan_in], |_| normal.sample(&mut rng));
            let b = Tensor::zeros(&[l.fan_out, self.spec.rank]);
            let (an, bn) = projection_names(&l.name);
            tensors.push((an, a));
            tensors.push((bn, b));
        }
        Ok(AdapterParams {
            spec: self.spec.clone(),
            seed,
            params: ParamVector::from_tensors(tensors)?,
        })
    }

    pub fn partition(&self) -> ParamPartition {
        let mut trainable = Vec::new();
        for t in &self.spec.targets {
            let (a, b) = projection_names(t);
            trainable.push(a);
            trainable.push(b);
        }
        ParamPartition {
            frozen: self.base_params.segments().iter().map(|s| s.name.clone()).collect(),
            trainable,
        }
    }

    fn base_tensor(&self, name: &str) -> Result<Tensor, NumericsError> {
        self.base_params
            .tensor(name)
            .ok_or_else(|| NumericsError::UnknownSegment(name.to_string()))
    }
}

/// Records `w + β·(b·a)`.
fn effective_weight(tape: &mut Tape, w: NodeId, a: NodeId, b: NodeId, beta: f64) -> Result<NodeId, NumericsError> {
    let ba = tape.matmul(b, a)?;
    let scaled = tape.scale(ba, beta)?;
    tape.add(w, scaled)
}

impl Denoise for AdaptedDenoiser {
    fn io_dim(&self) -> usize {
        self.base.io_dim
    }

    fn record(&self, tape: &mut Tape, params: &ParamNodes, input: NodeId) -> Result<NodeId, NumericsError> {
        self.base.record_with(tape, input, |tape, l| {
            let w = tape.constant(self.base_tensor(&format!("{}.weight", l.name))?);
            let b = tape.constant(self.base_tensor(&format!("{}.bias", l.name))?);
            if !self.spec.targets.contains(&l.name) {
                return Ok((w, b));
            }
            let (an, bn) = projection_names(&l.name);
            let w_eff = effective_weight(tape, w, params.get(&an)?, params.get(&bn)?, self.spec.beta)?;
            Ok((w_eff, b))
        })
    }
}

/// Wraps `base` with a fresh adapter drawn from `seed`.
pub fn attach_adapter(
    base: &Denoiser,
    base_params: &ParamVector,
    spec: &AdapterSpec,
    seed: u64,
) -> Result<(AdaptedDenoiser, AdapterParams, ParamPartition), AdapterError> {
    let model = AdaptedDenoiser::new(base.clone(), base_params.clone(), spec.clone())?;
    let adapter = model.init_adapter(seed)?;
    let partition = model.partition();
    Ok((model, adapter, partition))
}

/// Output of the base network with every target weight replaced by
/// `W + β·B·A`; `input` rows are `z_t ⊕ time embedding ⊕ cond`.
pub fn combined_forward(
    base: &Denoiser,
    base_params: &ParamVector,
    adapter: &AdapterParams,
    beta: f64,
    input: &Tensor,
) -> Result<Tensor, AdapterError> {
    let model = AdaptedDenoiser::new(base.clone(), base_params.clone(), adapter.spec.clone())?.with_beta(beta)?;
    let out = model.predict(&adapter.params, input)?;
    if !out.is_finite() {
        return Err(AdapterError::NonFiniteOutput);
    }
    Ok(out)
}

/// Base parameters with `β·B·A` folded into every target weight.
///
/// The fold uses the same arithmetic as [`combined_forward`], so the merged
/// network reproduces the combined one bit for bit.
pub fn merge_adapter(
    base: &Denoiser,
    base_params: &ParamVector,
    adapter: &AdapterParams,
    beta: f64,
) -> Result<ParamVector, AdapterError> {
    if !beta.is_finite() {
        return Err(AdapterError::InvalidBeta(beta));
    }
    adapter.spec.target_shapes(base)?;
    let mut merged = base_params.clone();
    for layer in &adapter.spec.targets {
        let name = format!("{layer}.weight");
        let w = base_params
            .tensor(&name)
            .ok_or_else(|| AdapterError::Layout(format!("base has no `{name}`")))?;
        let (an, bn) = projection_names(layer);
        let mut tape = Tape::new();
        let w = tape.constant(w);
        let a = tape.constant(adapter.tensor(&an)?);
        let b = tape.constant(adapter.tensor(&bn)?);
        let out = effective_weight(&mut tape, w, a, b, beta)?;
        merged
            .slice_mut(&name)
            .expect("segment exists")
            .copy_from_slice(tape.value(out).data());
    }
    Ok(merged)
}

/// `adapter.json` contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdapterHeader {
    rank: usize,
    beta: f64,
    targets: Vec<String>,
    seed: u64,
}

/// Writes `adapter.json` and one tensor dump per projection into `dir`.
pub fn save_adapter(dir: &Path, adapter: &AdapterParams) -> Result<(), AdapterError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let header = AdapterHeader {
        rank: adapter.spec.rank,
        beta: adapter.spec.beta,
        targets: adapter.spec.targets.clone(),
        seed: adapter.seed,
    };
    let path = dir.join("adapter.json");
    let text = serde_json::to_string_pretty(&header).map_err(|e| io_err(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
    for (name, t) in adapter.params.unflatten() {
        write_tensor(dir, &name, &t)?;
    }
    Ok(())
}

/// Reads a checkpoint written by [`save_adapter`] for use on `base`.
pub fn load_adapter(dir: &Path, base: &Denoiser) -> Result<AdapterParams, AdapterError> {
    let path = dir.join("adapter.json");
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let h: AdapterHeader = serde_json::from_str(&text).map_err(|e| io_err(&path, e))?;
    let spec = AdapterSpec {
        rank: h.rank,
        beta: h.beta,
        targets: h.targets,
    };
    let shapes = spec.target_shapes(base)?;
    let mut tensors = Vec::new();
    for l in &shapes {
        let (an, bn) = projection_names(&l.name);
        for (name, shape) in [(an, [spec.rank, l.fan_in]), (bn, [l.fan_out, spec.rank])] {
            let t = read_tensor(dir, &name)?;
            if t.shape() != shape {
                return Err(AdapterError::Layout(format!(
                    "`{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            tensors.push((name, t));
        }
    }
    Ok(AdapterParams {
        spec,
        seed: h.seed,
        params: ParamVector::from_tensors(tensors)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::build_input;
    use rand::Rng;

    fn setup() -> (Denoiser, ParamVector, Tensor) {
        let base = Denoiser::new(6, vec![5, 4]).unwrap();
        let theta = base.init(1);
        let mut rng = seeds::rng(2);
        let zt = Tensor::from_fn(&[3, 6], |_| rng.gen_range(-1.0..1.0));
        let cond = Tensor::from_fn(&[3, 4], |_| rng.gen_range(0.0..1.0));
        (base, theta, build_input(&zt, &[1, 5, 9], &cond).unwrap())
    }

    fn randomized(adapter: &AdapterParams, seed: u64) -> AdapterParams {
        let mut rng = seeds::rng(seed);
        let data = adapter.params.data().iter().map(|_| rng.gen_range(-0.5..0.5)).collect();
        adapter.with_params(adapter.params.with_data(data).unwrap()).unwrap()
    }

    #[test]
    fn fresh_adapter_is_the_identity() {
        let (base, theta, x) = setup();
        let spec = AdapterSpec::all_layers(&base, 2, 0.4);
        let (model, adapter, partition) = attach_adapter(&base, &theta, &spec, 7).unwrap();
        let base_out = base.predict(&theta, &x).unwrap();
        assert_eq!(model.predict(&adapter.params, &x).unwrap(), base_out);
        let all: Vec<String> = theta
            .segments()
            .iter()
            .chain(adapter.params.segments())
            .map(|s| s.name.clone())
            .collect();
        assert!(partition.is_exact_cover(&all));
        let trained = randomized(&adapter, 3);
        assert_eq!(combined_forward(&base, &theta, &trained, 0.0, &x).unwrap(), base_out);
    }

    #[test]
    fn explicit_merged_weight() {
        let (base, theta, x) = setup();
        let spec = AdapterSpec {
            rank: 2,
            beta: 1.0,
            targets: vec!["fc2".into()],
        };
        let (_, adapter, _) = attach_adapter(&base, &theta, &spec, 1).unwrap();
        let trained = randomized(&adapter, 4);
        let delta = trained.delta("fc2").unwrap();
        let mut manual = theta.clone();
        for (w, d) in manual.slice_mut("fc2.weight").unwrap().iter_mut().zip(delta.data()) {
            *w += d;
        }
        let out = combined_forward(&base, &theta, &trained, 1.0, &x).unwrap();
        let expected = base.predict(&manual, &x).unwrap();
        for (a, b) in out.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn merge_matches_and_inverts() {
        let (base, theta, x) = setup();
        let spec = AdapterSpec::all_layers(&base, 3, 0.4);
        let (_, adapter, _) = attach_adapter(&base, &theta, &spec, 1).unwrap();
        let trained = randomized(&adapter, 5);
        let merged = merge_adapter(&base, &theta, &trained, 0.4).unwrap();
        assert_eq!(
            base.predict(&merged, &x).unwrap(),
            combined_forward(&base, &theta, &trained, 0.4, &x).unwrap()
        );
        assert_eq!(merge_adapter(&base, &theta, &trained, 0.0).unwrap(), theta);
        let back = merge_adapter(&base, &merged, &trained, -0.4).unwrap();
        for (a, b) in back.data().iter().zip(theta.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn rank_and_target_checks() {
        let (base, theta, _) = setup();
        let too_big = AdapterSpec::all_layers(&base, 5, 0.4);
        assert!(matches!(
            attach_adapter(&base, &theta, &too_big, 0),
            Err(AdapterError::RankBound { max: 4, .. })
        ));
        let unknown = AdapterSpec {
            rank: 1,
            beta: 0.4,
            targets: vec!["fc9".into()],
        };
        assert!(matches!(
            attach_adapter(&base, &theta, &unknown, 0),
            Err(AdapterError::UnknownTarget(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let (base, theta, _) = setup();
        let spec = AdapterSpec::all_layers(&base, 2, 0.3);
        let (_, adapter, _) = attach_adapter(&base, &theta, &spec, 11).unwrap();
        let trained = randomized(&adapter, 6);
        let dir = tempfile::tempdir().unwrap();
        save_adapter(dir.path(), &trained).unwrap();
        assert_eq!(load_adapter(dir.path(), &base).unwrap(), trained);
        assert!(dir.path().join("fc1.lora_a.f64").exists());
    }
}
