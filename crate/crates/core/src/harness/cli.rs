//! Command-line surface. Each subcommand is a library function returning
//! the text it prints, so the binary only parses and dispatches.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::adapters::{load_adapter, AdaptedDenoiser};
use crate::diffusion::MaskRecord;
use crate::fair_moo::{mpd_residual, mpd_weights_closed, mpd_weights_oracle, GramMatrix, SolverConfig};
use crate::numerics::io::write_tensor;
use crate::numerics::{SymMatrix, Tensor};

use super::train::{denoiser_for, evaluate_config, load_base, run_training};
use super::{compare_strategies, data, random_gradcheck, HarnessError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "fairmoo", about = "Fairness-weighted multi-objective fine-tuning of a toy denoiser")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain the backbone, fine-tune the adapter and write the run.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a saved checkpoint on the config's held-out set.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Fine-tune several strategies from shared backbones and tabulate.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        configs: Vec<PathBuf>,
        /// Seeds to run over; defaults to the first config's seed.
        #[arg(long, num_args = 1..)]
        seeds: Vec<u64>,
        /// Also write every run below this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// MPD weights for a Gram matrix read from JSON.
    SolveWeights {
        #[arg(long)]
        gram: PathBuf,
        /// Use the numerical residual minimizer instead of the closed form.
        #[arg(long)]
        oracle: bool,
    },
    /// Export synthetic scenes.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        image_size: usize,
        #[arg(long, default_value_t = 1)]
        latent_factor: usize,
    },
    /// Check tape gradients of a random small denoiser against central
    /// differences; fails above the tolerance.
    Gradcheck {
        #[arg(long)]
        seed: u64,
    },
}

/// Output of a subcommand: printed text and whether it succeeded.
#[derive(Debug)]
pub struct Outcome {
    pub stdout: String,
    pub success: bool,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Self { stdout, success: true }
    }
}

pub fn run(cli: Cli) -> Result<Outcome, HarnessError> {
    match cli.command {
        Command::Train { config } => train(&config).map(Outcome::ok),
        Command::Eval { checkpoint, config } => eval(&checkpoint, &config).map(Outcome::ok),
        Command::Compare { configs, seeds, out } => compare(&configs, &seeds, out.as_deref()).map(Outcome::ok),
        Command::SolveWeights { gram, oracle } => solve_weights(&gram, oracle).map(Outcome::ok),
        Command::Synth {
            count,
            seed,
            out,
            image_size,
            latent_factor,
        } => synth(count, seed, &out, image_size, latent_factor).map(Outcome::ok),
        Command::Gradcheck { seed } => gradcheck(seed),
    }
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes") + "\n"
}

pub fn train(config: &Path) -> Result<String, HarnessError> {
    let cfg = RunConfig::load(config)?;
    let record = run_training(&cfg)?;
    let dir = record.out_dir.clone().unwrap_or_else(|| cfg.resolved_out_dir());
    std::fs::read_to_string(dir.join("run.json")).map_err(|e| HarnessError::io(&dir.join("run.json"), e))
}

pub fn eval(checkpoint: &Path, config: &Path) -> Result<String, HarnessError> {
    let cfg = RunConfig::load(config)?;
    let base = denoiser_for(&cfg)?;
    let base_params = load_base(checkpoint, &base)?;
    let adapter = load_adapter(checkpoint, &base)?;
    let model = AdaptedDenoiser::new(base, base_params, adapter.spec.clone())?;
    let metrics = evaluate_config(&cfg, &model, &adapter.params)?;
    Ok(pretty(&metrics))
}

pub fn compare(configs: &[PathBuf], seeds: &[u64], out: Option<&Path>) -> Result<String, HarnessError> {
    let cfgs = configs.iter().map(|p| RunConfig::load(p)).collect::<Result<Vec<_>, _>>()?;
    let seeds = match (seeds.is_empty(), cfgs.first()) {
        (false, _) => seeds.to_vec(),
        (true, Some(c)) => vec![c.seed],
        (true, None) => Vec::new(),
    };
    Ok(compare_strategies(&cfgs, &seeds, out)?.to_table())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GramFile {
    k: usize,
    entries: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct Solved {
    w: Vec<f64>,
    residual: f64,
    floor_applied: bool,
}

/// Reads `{"k": n, "entries": [[...]]}` and solves with default solver
/// settings.
pub fn solve_weights(gram: &Path, oracle: bool) -> Result<String, HarnessError> {
    let text = std::fs::read_to_string(gram).map_err(|e| HarnessError::io(gram, e))?;
    let file: GramFile =
        serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", gram.display())))?;
    if file.entries.len() != file.k {
        return Err(HarnessError::Config(format!(
            "{}: k = {} but {} rows",
            gram.display(),
            file.k,
            file.entries.len()
        )));
    }
    let k = GramMatrix::from_sym(
        SymMatrix::from_rows(&file.entries).map_err(|e| HarnessError::Config(format!("{}: {e}", gram.display())))?,
    );
    let cfg = SolverConfig::default();
    let solved = if oracle {
        let r = mpd_weights_oracle(&k, &cfg)?;
        Solved {
            residual: r.residual,
            floor_applied: r.weights.floor_applied,
            w: r.weights.w,
        }
    } else {
        let w = mpd_weights_closed(&k, &cfg)?;
        Solved {
            residual: mpd_residual(&k, &w.w, &cfg),
            floor_applied: w.floor_applied,
            w: w.w,
        }
    };
    Ok(serde_json::to_string(&solved).expect("plain data serializes") + "\n")
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SynthEntry {
    pub index: usize,
    pub seed: u64,
    pub cond: [f64; 4],
    #[serde(flatten)]
    pub masks: MaskRecord,
}

/// Writes `train.f64`/`train.json` (images `[N, S, S]`), `train_latent`
/// (`[N, L, L]`) and `masks.json`. Sample `i` is drawn from `seed ^ i`.
pub fn synth(count: usize, seed: u64, out: &Path, image_size: usize, latent_factor: usize) -> Result<String, HarnessError> {
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let mut images = Vec::new();
    let mut latents = Vec::new();
    let mut entries = Vec::with_capacity(count);
    for index in 0..count {
        let s = seed ^ index as u64;
        let sample = data::scene(s, image_size, latent_factor)?;
        images.extend_from_slice(sample.image.data());
        latents.extend_from_slice(sample.z0.data());
        entries.push(SynthEntry {
            index,
            seed: s,
            cond: sample.cond,
            masks: sample.masks.record(),
        });
    }
    let l = image_size / latent_factor;
    let tensor = |shape: Vec<usize>, v: Vec<f64>| Tensor::new(shape, v).map_err(HarnessError::from);
    write_tensor(out, "train", &tensor(vec![count, image_size, image_size], images)?)?;
    write_tensor(out, "train_latent", &tensor(vec![count, l, l], latents)?)?;
    let path = out.join("masks.json");
    std::fs::write(&path, pretty(&entries)).map_err(|e| HarnessError::io(&path, e))?;
    Ok(format!("wrote {count} samples to {}\n", out.display()))
}

pub fn gradcheck(seed: u64) -> Result<Outcome, HarnessError> {
    let report = random_gradcheck(seed)?;
    Ok(Outcome {
        success: report.passed,
        stdout: pretty(&report),
    })
}
