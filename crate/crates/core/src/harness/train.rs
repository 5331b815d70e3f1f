use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adapters::{attach_adapter, save_adapter, AdaptedDenoiser, AdapterParams, AdapterSpec};
use crate::diffusion::{objective_bundle, Denoise, Denoiser, DiffusionError, OBJECTIVE_NAMES};
use crate::fair_moo::{
    aggregate_direction, gram, mpd_residual, mpd_weights_closed, pareto_stationarity, strategy_weights,
    update_step, FairWeights, Strategy, StrategyState,
};
use crate::numerics::io::write_tensor;
use crate::numerics::{value_and_grad, ParamVector, SymMatrix};
use crate::seeds::{self, Stream};

use super::eval::{evaluate, EvalSet, RegionMetrics};
use super::optim::Adam;
use super::{data, HarnessError, RunConfig};

/// Header of `metrics.csv`.
pub const METRICS_HEADER: [&str; 12] = [
    "step", "l_global", "l_face", "l_hand", "w1", "w2", "w3", "gn1", "gn2", "gn3", "pareto_stat",
    "cf_residual",
];

/// Header of `eval.csv`.
pub const EVAL_HEADER: [&str; 4] = ["step", "l_global", "l_face", "l_hand"];

/// Training-step diagnostics, taken before the update of that step.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub step: usize,
    pub losses: [f64; 3],
    pub weights: FairWeights,
    pub grad_norms: [f64; 3],
    pub pareto_stat: f64,
    /// Residual of the closed-form MPD weights on this step's Gram matrix;
    /// NaN when the closed form is undefined.
    pub cf_residual: f64,
    pub gram: SymMatrix,
}

/// Held-out metrics after `step` updates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub metrics: RegionMetrics,
}

/// Outcome of a fine-tuning run.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub config: RunConfig,
    pub metrics: Vec<MetricsRecord>,
    pub evals: Vec<EvalRecord>,
    /// Probe-set losses before the first and after the last update.
    pub initial_probe: RegionMetrics,
    pub final_probe: RegionMetrics,
    pub base: Denoiser,
    pub base_params: ParamVector,
    pub adapter: AdapterParams,
    /// Where the run was written, if it was.
    pub out_dir: Option<PathBuf>,
    pub duration_secs: f64,
}

impl RunRecord {
    pub fn final_eval(&self) -> Option<&RegionMetrics> {
        self.evals.last().map(|e| &e.metrics)
    }

    /// Steps in which the positivity floor raised at least one weight.
    pub fn floor_steps(&self) -> usize {
        self.metrics.iter().filter(|m| m.weights.floor_applied).count()
    }

    pub fn model(&self) -> Result<AdaptedDenoiser, HarnessError> {
        Ok(AdaptedDenoiser::new(
            self.base.clone(),
            self.base_params.clone(),
            self.adapter.spec.clone(),
        )?)
    }
}

/// Summary written to `run.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: String,
    pub steps: usize,
    pub initial_probe: RegionMetrics,
    pub final_probe: RegionMetrics,
    pub final_eval: Option<RegionMetrics>,
    pub floor_steps: usize,
    pub checkpoint: String,
    pub duration_secs: f64,
}

fn base_model(cfg: &RunConfig) -> Result<Denoiser, HarnessError> {
    let n = cfg.latent_size();
    Ok(Denoiser::new(n * n, cfg.hidden.clone())?)
}

fn non_finite(step: usize, e: DiffusionError) -> HarnessError {
    match e {
        DiffusionError::NonFiniteLoss { index, name, .. } | DiffusionError::NonFiniteGradient { index, name } => {
            HarnessError::NonFinite { step, index, name }
        }
        other => other.into(),
    }
}

/// Backbone trained on `l_global` alone with Adam, then frozen.
pub fn pretrain_base(cfg: &RunConfig) -> Result<(Denoiser, ParamVector), HarnessError> {
    cfg.validate()?;
    let base = base_model(cfg)?;
    let mut theta = base.init(seeds::derive(cfg.seed, Stream::BaseInit, 0));
    let schedule = data::schedule(cfg)?;
    let mut opt = Adam::new(theta.len(), cfg.pretrain.lr);
    for step in 0..cfg.pretrain.steps {
        let batch = data::minibatch(cfg, &schedule, Stream::Pretrain, step, cfg.pretrain.batch_size)?;
        let (loss, grad) = value_and_grad(
            |tape, p| Ok(batch.record_losses(tape, p, &base, cfg.normalization)?[0]),
            &theta,
        )?;
        if !loss.is_finite() || !grad.is_finite() {
            return Err(HarnessError::NonFinite {
                step,
                index: 0,
                name: OBJECTIVE_NAMES[0],
            });
        }
        opt.step(theta.data_mut(), grad.data());
    }
    Ok((base, theta))
}

/// Pretrains the backbone, fine-tunes the adapter and writes the run.
pub fn run_training(cfg: &RunConfig) -> Result<RunRecord, HarnessError> {
    let (base, base_params) = pretrain_base(cfg)?;
    let mut record = train_adapter(cfg, &base, &base_params)?;
    let dir = cfg.resolved_out_dir();
    write_run(&record, &dir)?;
    record.out_dir = Some(dir);
    Ok(record)
}

/// Adapter fine-tuning of a frozen backbone; no files are written.
///
/// Each step: sample a minibatch, compute the three losses and gradients,
/// weight them with the configured strategy, aggregate and update.
pub fn train_adapter(cfg: &RunConfig, base: &Denoiser, base_params: &ParamVector) -> Result<RunRecord, HarnessError> {
    cfg.validate()?;
    let started = Instant::now();
    let schedule = data::schedule(cfg)?;
    let spec = AdapterSpec {
        rank: cfg.adapter.rank,
        beta: cfg.adapter.beta,
        targets: cfg
            .adapter
            .targets
            .clone()
            .unwrap_or_else(|| base.layers().into_iter().map(|l| l.name).collect()),
    };
    let (model, adapter, _) = attach_adapter(base, base_params, &spec, seeds::derive(cfg.seed, Stream::Adapter, 0))?;
    let eval_set = EvalSet::held_out(cfg, &schedule)?;
    let probe_set = EvalSet::probe(cfg, &schedule)?;

    let mut theta = adapter.params.clone();
    let mut evals = vec![EvalRecord {
        step: 0,
        metrics: evaluate(&model, &theta, &eval_set, cfg.normalization)?,
    }];
    let initial_probe = evaluate(&model, &theta, &probe_set, cfg.normalization)?;

    let mut metrics = Vec::with_capacity(cfg.steps);
    let mut history: Vec<Vec<f64>> = Vec::new();
    let mut state = StrategyState::default();
    let mut rng = seeds::rng(seeds::derive(cfg.seed, Stream::Strategy, 0));
    for step in 0..cfg.steps {
        let batch = data::minibatch(cfg, &schedule, Stream::Train, step, cfg.batch_size)?;
        let bundle = objective_bundle(&batch, &model, &theta, cfg.normalization).map_err(|e| non_finite(step, e))?;
        let k = gram(&bundle);
        let closed = mpd_weights_closed(&k, &cfg.solver);
        let cf_residual = match &closed {
            Ok(w) => mpd_residual(&k, &w.w, &cfg.solver),
            Err(_) => f64::NAN,
        };
        let weights = match (&cfg.strategy, closed) {
            (Strategy::Mpd, closed) => closed?,
            // DWA has no loss ratios for its first two steps; it starts
            // from unit weights.
            (Strategy::Dwa { .. }, _) if history.len() < 2 => {
                FairWeights::new(vec![1.0; bundle.k()], cfg.strategy.tag())
            }
            (s, _) => strategy_weights(s, &bundle, &history, &mut state, &mut rng, &cfg.solver)?,
        };
        let d = aggregate_direction(&bundle, &weights)?;
        let norms = bundle.grad_norms();
        metrics.push(MetricsRecord {
            step,
            losses: [bundle.losses()[0], bundle.losses()[1], bundle.losses()[2]],
            grad_norms: [norms[0], norms[1], norms[2]],
            pareto_stat: pareto_stationarity(&bundle)?,
            cf_residual,
            gram: k.matrix().clone(),
            weights,
        });
        history.push(bundle.losses().to_vec());
        theta = update_step(&theta, &d, cfg.lr)?;
        if !theta.is_finite() {
            return Err(HarnessError::NonFiniteParameters { step });
        }
        let done = step + 1;
        if (cfg.eval_every > 0 && done % cfg.eval_every == 0) || done == cfg.steps {
            evals.push(EvalRecord {
                step: done,
                metrics: evaluate(&model, &theta, &eval_set, cfg.normalization)?,
            });
        }
    }
    let final_probe = evaluate(&model, &theta, &probe_set, cfg.normalization)?;
    Ok(RunRecord {
        config: cfg.clone(),
        metrics,
        evals,
        initial_probe,
        final_probe,
        base: base.clone(),
        base_params: base_params.clone(),
        adapter: adapter.with_params(theta)?,
        out_dir: None,
        duration_secs: started.elapsed().as_secs_f64(),
    })
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Rows of `metrics.csv`, header first.
pub fn metrics_csv(record: &RunRecord) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let p = Path::new("metrics.csv");
    w.write_record(METRICS_HEADER).map_err(|e| csv_err(p, e))?;
    for m in &record.metrics {
        let mut row = vec![m.step.to_string()];
        row.extend(m.losses.iter().map(f64::to_string));
        row.extend((0..3).map(|i| m.weights.w.get(i).map_or(String::new(), f64::to_string)));
        row.extend(m.grad_norms.iter().map(f64::to_string));
        row.push(m.pareto_stat.to_string());
        row.push(m.cf_residual.to_string());
        w.write_record(&row).map_err(|e| csv_err(p, e))?;
    }
    w.into_inner().map_err(|e| csv_err(p, e))
}

/// Rows of `eval.csv`, header first.
pub fn eval_csv(record: &RunRecord) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let p = Path::new("eval.csv");
    w.write_record(EVAL_HEADER).map_err(|e| csv_err(p, e))?;
    for e in &record.evals {
        let m = e.metrics;
        w.write_record([e.step.to_string(), m.l_global.to_string(), m.l_face.to_string(), m.l_hand.to_string()])
            .map_err(|err| csv_err(p, err))?;
    }
    w.into_inner().map_err(|e| csv_err(p, e))
}

/// One line of `gram.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramLine {
    pub step: usize,
    pub k: usize,
    pub entries: Vec<Vec<f64>>,
    pub w: Vec<f64>,
    pub floor_applied: bool,
}

pub fn gram_jsonl(record: &RunRecord) -> Vec<u8> {
    let mut out = Vec::new();
    for m in &record.metrics {
        let line = GramLine {
            step: m.step,
            k: m.gram.dim(),
            entries: m.gram.rows(),
            w: m.weights.w.clone(),
            floor_applied: m.weights.floor_applied,
        };
        serde_json::to_writer(&mut out, &line).expect("plain data serializes");
        out.push(b'\n');
    }
    out
}

/// Writes `config.json`, `metrics.csv`, `eval.csv`, `gram.jsonl`,
/// `run.json` and `checkpoint/` (adapter plus frozen base) into `dir`.
pub fn write_run(record: &RunRecord, dir: &Path) -> Result<(), HarnessError> {
    let write = |name: &str, bytes: &[u8]| -> Result<(), HarnessError> {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
        f.write_all(bytes).map_err(|e| HarnessError::io(&path, e))
    };
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    write("config.json", record.config.to_json().as_bytes())?;
    write("metrics.csv", &metrics_csv(record)?)?;
    write("eval.csv", &eval_csv(record)?)?;
    write("gram.jsonl", &gram_jsonl(record))?;
    let ckpt = dir.join("checkpoint");
    save_checkpoint(&ckpt, record)?;
    let summary = RunSummary {
        strategy: record.config.strategy.label(),
        steps: record.metrics.len(),
        initial_probe: record.initial_probe,
        final_probe: record.final_probe,
        final_eval: record.final_eval().copied(),
        floor_steps: record.floor_steps(),
        checkpoint: ckpt.display().to_string(),
        duration_secs: record.duration_secs,
    };
    write(
        "run.json",
        (serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n").as_bytes(),
    )
}

/// Adapter checkpoint in `dir`, frozen base tensors in `dir/base`.
pub fn save_checkpoint(dir: &Path, record: &RunRecord) -> Result<(), HarnessError> {
    save_adapter(dir, &record.adapter)?;
    let base_dir = dir.join("base");
    fs::create_dir_all(&base_dir).map_err(|e| HarnessError::io(&base_dir, e))?;
    for (name, t) in record.base_params.unflatten() {
        write_tensor(&base_dir, &name, &t)?;
    }
    Ok(())
}

/// Reads the base tensors of a checkpoint for `base`.
pub fn load_base(dir: &Path, base: &Denoiser) -> Result<ParamVector, HarnessError> {
    let base_dir = dir.join("base");
    let mut tensors = Vec::new();
    for l in base.layers() {
        for name in [format!("{}.weight", l.name), format!("{}.bias", l.name)] {
            let t = crate::numerics::io::read_tensor(&base_dir, &name)?;
            tensors.push((name, t));
        }
    }
    let theta = ParamVector::from_tensors(tensors)?;
    if !base.matches_layout(&theta) {
        return Err(HarnessError::Config(format!(
            "{}: base tensors do not match the configured denoiser",
            base_dir.display()
        )));
    }
    Ok(theta)
}

/// The denoiser a config describes.
pub fn denoiser_for(cfg: &RunConfig) -> Result<Denoiser, HarnessError> {
    base_model(cfg)
}

/// Evaluates any [`Denoise`] model on the config's held-out set.
pub fn evaluate_config<M: Denoise + ?Sized>(
    cfg: &RunConfig,
    model: &M,
    theta: &ParamVector,
) -> Result<RegionMetrics, HarnessError> {
    let schedule = data::schedule(cfg)?;
    evaluate(model, theta, &EvalSet::held_out(cfg, &schedule)?, cfg.normalization)
}
