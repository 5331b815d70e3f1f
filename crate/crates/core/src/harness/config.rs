use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::Normalization;
use crate::fair_moo::{SolverConfig, Strategy};

use super::HarnessError;

/// Environment variable that overrides [`RunConfig::out_dir`].
pub const OUT_ENV: &str = "FAIRMOO_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterConfig {
    pub rank: usize,
    pub beta: f64,
    /// Adapted layers; every layer when absent.
    pub targets: Option<Vec<String>>,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            rank: 8,
            beta: 0.4,
            targets: None,
        }
    }
}

/// Training of the backbone on `l_global` before it is frozen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    /// Adam step size.
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            lr: 1e-3,
            batch_size: 16,
        }
    }
}

/// Everything that determines a run. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub image_size: usize,
    pub latent_factor: usize,
    pub schedule: ScheduleConfig,
    /// Hidden widths of the denoiser.
    pub hidden: Vec<usize>,
    pub pretrain: PretrainConfig,
    pub adapter: AdapterConfig,
    pub strategy: Strategy,
    pub solver: SolverConfig,
    /// Step size `η` of the fine-tuning update `θ ← θ − η·d`.
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Evaluation interval in steps; 0 evaluates only before and after training.
    pub eval_every: usize,
    pub eval_count: usize,
    /// Held-fixed training-distribution samples scored before and after
    /// training.
    pub probe_count: usize,
    pub normalization: Normalization,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            image_size: 32,
            latent_factor: 1,
            schedule: ScheduleConfig::default(),
            hidden: vec![256, 256],
            pretrain: PretrainConfig::default(),
            adapter: AdapterConfig::default(),
            strategy: Strategy::Mpd,
            solver: SolverConfig::default(),
            lr: 1e-3,
            steps: 2000,
            batch_size: 16,
            eval_every: 500,
            eval_count: 32,
            probe_count: 64,
            normalization: Normalization::FullCount,
            out_dir: PathBuf::from("fairmoo-run"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// `out_dir`, unless `FAIRMOO_OUT` is set.
    pub fn resolved_out_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.out_dir.clone(),
        }
    }

    pub fn latent_size(&self) -> usize {
        self.image_size / self.latent_factor.max(1)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(4..=256).contains(&self.image_size) {
            return bad(format!("image_size must lie in 4..=256, got {}", self.image_size));
        }
        if self.latent_factor == 0 || self.image_size % self.latent_factor != 0 {
            return bad(format!(
                "latent_factor {} must divide image_size {}",
                self.latent_factor, self.image_size
            ));
        }
        let s = &self.schedule;
        if s.steps < 4 || !(s.beta_start > 0.0 && s.beta_start <= s.beta_end && s.beta_end < 1.0) {
            return bad(format!(
                "schedule needs steps >= 4 and 0 < beta_start <= beta_end < 1, got {s:?}"
            ));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad(format!("hidden widths must be non-empty and positive, got {:?}", self.hidden));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and > 0, got {}", self.lr));
        }
        if self.batch_size == 0 || self.eval_count == 0 || self.probe_count == 0 {
            return bad("batch_size, eval_count and probe_count must be positive".into());
        }
        let p = &self.pretrain;
        if !(p.lr > 0.0 && p.lr.is_finite()) || p.batch_size == 0 {
            return bad(format!("pretrain needs lr > 0 and batch_size > 0, got {p:?}"));
        }
        if !self.adapter.beta.is_finite() || self.adapter.rank == 0 {
            return bad(format!("adapter needs rank >= 1 and finite beta, got {:?}", self.adapter));
        }
        self.solver.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    /// Whether `self` and `other` differ at most in strategy, seed and
    /// output directory.
    pub fn same_experiment(&self, other: &RunConfig) -> bool {
        let strip = |c: &RunConfig| RunConfig {
            strategy: Strategy::Mpd,
            seed: 0,
            out_dir: PathBuf::new(),
            ..c.clone()
        };
        strip(self) == strip(other)
    }
}
