//! Minimum-potential-delay (MPD) weighting of per-objective gradients.
//!
//! Given gradients `∇l_1 … ∇l_k` of `k` objectives at the current
//! parameters, the shared update direction is `d = Σ w_i ∇l_i` with
//! `W = (2λ)^{-1/3}·K^{-2/3}·1`, where `K_ij = ∇l_i·∇l_j` is the Gram
//! matrix and `λ = ½` by default. The weights come from the stationarity
//! condition of `min_d Σ 1/(∇l_i·d)`, which after substituting the linear
//! ansatz becomes the fixed-point system `K·W = (2λ)^{-1/2}·W^{-1/2}`.
//! The closed form solves that system exactly when `K` is diagonal; for
//! general `K` [`mpd_weights_oracle`] minimizes the system residual
//! numerically and [`mpd_residual`] reports how far the closed form is
//! from satisfying it.
//!
//! Baseline strategies (linear scalarization, scale-invariant, DWA, RLW,
//! uncertainty weighting) share the same [`FairWeights`] output so the
//! training loop can swap them freely.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{NumericsError, ParamVector};

mod baselines;
mod diagnostics;
mod direction;
mod gram;
mod mpd;
mod pareto;

pub use baselines::{baseline_weights, strategy_weights, StrategyState};
pub use diagnostics::{delay_diagnostics, DelayDiagnostics};
pub use direction::{aggregate_direction, update_step};
pub use gram::{gram, GramMatrix};
pub use mpd::{mpd_residual, mpd_weights_closed, mpd_weights_oracle, OracleReport};
pub use pareto::{pareto_stationarity, MAX_PARETO_OBJECTIVES};

#[derive(Debug, Error)]
pub enum FairMooError {
    #[error("objective bundle has no objectives")]
    EmptyBundle,
    #[error("bundle has {losses} losses but {grads} gradients")]
    CountMismatch { losses: usize, grads: usize },
    #[error("gradient {index} has a different parameter layout")]
    LayoutMismatch { index: usize },
    #[error("objective {index}: loss {value} is negative or not finite")]
    InvalidLoss { index: usize, value: f64 },
    #[error("objective {index}: gradient has non-finite entries")]
    NonFiniteGradient { index: usize },
    #[error("weight vector has {got} entries, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(
        "Gram matrix is indefinite (min eigenvalue {min}, max {max}); task gradients are not linearly independent"
    )]
    Indefinite { min: f64, max: f64 },
    #[error("{strategy}: objective {index} has non-positive loss {value}")]
    NonPositiveLoss {
        strategy: &'static str,
        index: usize,
        value: f64,
    },
    #[error("{strategy} needs {needed} past loss vectors, got {got}")]
    InsufficientHistory {
        strategy: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("update direction is zero")]
    ZeroDirection,
    #[error("weight oracle failed: {0}")]
    OracleFailed(String),
    #[error("learning rate must be positive and finite, got {0}")]
    InvalidLearningRate(f64),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("stationarity meter supports at most {max} objectives, got {got}")]
    TooManyObjectives { max: usize, got: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Losses and gradients of `k` objectives at one parameter point.
///
/// Row `i` of the gradient matrix `G` is `∇l_i`; all rows share the same
/// parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveBundle {
    losses: Vec<f64>,
    grads: Vec<ParamVector>,
}

impl ObjectiveBundle {
    pub fn new(losses: Vec<f64>, grads: Vec<ParamVector>) -> Result<Self, FairMooError> {
        if losses.is_empty() {
            return Err(FairMooError::EmptyBundle);
        }
        if losses.len() != grads.len() {
            return Err(FairMooError::CountMismatch {
                losses: losses.len(),
                grads: grads.len(),
            });
        }
        for (index, &value) in losses.iter().enumerate() {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(FairMooError::InvalidLoss { index, value });
            }
        }
        for (index, g) in grads.iter().enumerate() {
            if !g.same_layout(&grads[0]) {
                return Err(FairMooError::LayoutMismatch { index });
            }
            if !g.is_finite() {
                return Err(FairMooError::NonFiniteGradient { index });
            }
        }
        Ok(Self { losses, grads })
    }

    /// Bundle over a single flat parameter segment named `theta`.
    pub fn from_rows(losses: Vec<f64>, rows: Vec<Vec<f64>>) -> Result<Self, FairMooError> {
        let grads = rows
            .into_iter()
            .map(|r| ParamVector::from_flat("theta", r))
            .collect();
        Self::new(losses, grads)
    }

    pub fn k(&self) -> usize {
        self.losses.len()
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn grads(&self) -> &[ParamVector] {
        &self.grads
    }

    pub fn grad_norms(&self) -> Vec<f64> {
        self.grads.iter().map(ParamVector::norm).collect()
    }

    /// The same objectives in the order `perm` (`perm[new] = old`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            losses: perm.iter().map(|&i| self.losses[i]).collect(),
            grads: perm.iter().map(|&i| self.grads[i].clone()).collect(),
        }
    }
}

/// Weight-producing strategy, as written in run configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", try_from = "RawStrategy")]
pub enum Strategy {
    /// Closed-form MPD weights, recomputed every step.
    Mpd,
    /// MPD weights from the numerical residual minimizer.
    MpdOracle,
    /// Fixed weights (unit weights when omitted).
    Ls {
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    /// Train on the first objective only; LS with weights `[1, 0, …]`.
    GlobalOnly,
    /// Scale-invariant weighting `w_i = 1/l_i`.
    Si,
    /// Dynamic weight average with temperature `T`.
    Dwa { temperature: f64 },
    /// Random loss weighting: softmax of standard normal draws.
    Rlw,
    /// Uncertainty weighting with learnable per-objective log-σ.
    Uw { lr: f64 },
}

/// Flat on-disk form of [`Strategy`]; options foreign to `kind` are rejected.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStrategy {
    kind: StrategyTag,
    weights: Option<Vec<f64>>,
    temperature: Option<f64>,
    lr: Option<f64>,
}

impl TryFrom<RawStrategy> for Strategy {
    type Error = String;

    fn try_from(raw: RawStrategy) -> Result<Self, String> {
        let kind = raw.kind;
        let extra = |field: &str, present: bool| {
            if present {
                Err(format!("strategy {} takes no option `{field}`", kind.name()))
            } else {
                Ok(())
            }
        };
        if kind != StrategyTag::Ls {
            extra("weights", raw.weights.is_some())?;
        }
        if kind != StrategyTag::Dwa {
            extra("temperature", raw.temperature.is_some())?;
        }
        if kind != StrategyTag::Uw {
            extra("lr", raw.lr.is_some())?;
        }
        Ok(match kind {
            StrategyTag::Mpd => Strategy::Mpd,
            StrategyTag::MpdOracle => Strategy::MpdOracle,
            StrategyTag::Ls => Strategy::Ls {
                weights: raw.weights,
            },
            StrategyTag::GlobalOnly => Strategy::GlobalOnly,
            StrategyTag::Si => Strategy::Si,
            StrategyTag::Dwa => Strategy::Dwa {
                temperature: raw.temperature.unwrap_or(2.0),
            },
            StrategyTag::Rlw => Strategy::Rlw,
            StrategyTag::Uw => Strategy::Uw {
                lr: raw.lr.unwrap_or(1e-2),
            },
        })
    }
}

impl Strategy {
    pub fn tag(&self) -> StrategyTag {
        match self {
            Strategy::Mpd => StrategyTag::Mpd,
            Strategy::MpdOracle => StrategyTag::MpdOracle,
            Strategy::Ls { .. } => StrategyTag::Ls,
            Strategy::GlobalOnly => StrategyTag::GlobalOnly,
            Strategy::Si => StrategyTag::Si,
            Strategy::Dwa { .. } => StrategyTag::Dwa,
            Strategy::Rlw => StrategyTag::Rlw,
            Strategy::Uw { .. } => StrategyTag::Uw,
        }
    }

    /// Human-readable label, e.g. for comparison tables.
    pub fn label(&self) -> String {
        match self {
            Strategy::Ls {
                weights: Some(w), ..
            } => format!("ls{w:?}"),
            other => other.tag().name().to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyTag {
    Mpd,
    MpdOracle,
    Ls,
    GlobalOnly,
    Si,
    Dwa,
    Rlw,
    Uw,
}

impl StrategyTag {
    pub fn name(self) -> &'static str {
        match self {
            StrategyTag::Mpd => "mpd",
            StrategyTag::MpdOracle => "mpd-oracle",
            StrategyTag::Ls => "ls",
            StrategyTag::GlobalOnly => "global-only",
            StrategyTag::Si => "si",
            StrategyTag::Dwa => "dwa",
            StrategyTag::Rlw => "rlw",
            StrategyTag::Uw => "uw",
        }
    }
}

/// Per-objective weights and where they came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairWeights {
    pub w: Vec<f64>,
    pub strategy: StrategyTag,
    /// Set when at least one entry was raised to the positivity floor.
    pub floor_applied: bool,
}

impl FairWeights {
    pub fn new(w: Vec<f64>, strategy: StrategyTag) -> Self {
        Self {
            w,
            strategy,
            floor_applied: false,
        }
    }
}

/// Controls for the MPD weight solvers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Added to every Gram eigenvalue before the negative power.
    pub eps_reg: f64,
    /// Smallest admissible weight.
    pub w_floor: f64,
    /// Lagrange multiplier of the norm-ball constraint.
    pub lagrange_lambda: f64,
    pub oracle_iters: usize,
    /// Initial step of the oracle's backtracking line search.
    pub oracle_step: f64,
    /// The oracle stops once the residual norm falls below this.
    pub oracle_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps_reg: 1e-10,
            w_floor: 1e-8,
            lagrange_lambda: 0.5,
            oracle_iters: 20_000,
            oracle_step: 1.0,
            oracle_tol: 1e-14,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), FairMooError> {
        let bad = |m: &str| Err(FairMooError::InvalidConfig(m.to_string()));
        if !(self.eps_reg >= 0.0 && self.eps_reg.is_finite()) {
            return bad("eps_reg must be finite and >= 0");
        }
        if !(self.w_floor > 0.0 && self.w_floor.is_finite()) {
            return bad("w_floor must be finite and > 0");
        }
        if !(self.lagrange_lambda > 0.0 && self.lagrange_lambda.is_finite()) {
            return bad("lagrange_lambda must be finite and > 0");
        }
        if !(self.oracle_step > 0.0 && self.oracle_step.is_finite()) {
            return bad("oracle_step must be finite and > 0");
        }
        if !(self.oracle_tol >= 0.0) {
            return bad("oracle_tol must be >= 0");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundle_validation() {
        assert!(matches!(
            ObjectiveBundle::from_rows(vec![], vec![]),
            Err(FairMooError::EmptyBundle)
        ));
        assert!(matches!(
            ObjectiveBundle::from_rows(vec![1.0], vec![vec![1.0], vec![2.0]]),
            Err(FairMooError::CountMismatch { .. })
        ));
        assert!(matches!(
            ObjectiveBundle::from_rows(vec![-1.0], vec![vec![1.0]]),
            Err(FairMooError::InvalidLoss { index: 0, .. })
        ));
        assert!(matches!(
            ObjectiveBundle::from_rows(vec![1.0, 1.0], vec![vec![1.0], vec![f64::NAN]]),
            Err(FairMooError::NonFiniteGradient { index: 1 })
        ));
        assert!(matches!(
            ObjectiveBundle::from_rows(vec![1.0, 1.0], vec![vec![1.0], vec![1.0, 2.0]]),
            Err(FairMooError::LayoutMismatch { index: 1 })
        ));
    }

    #[test]
    fn strategy_json_shapes() {
        let s: Strategy = serde_json::from_str(r#"{"kind":"mpd"}"#).unwrap();
        assert_eq!(s, Strategy::Mpd);
        let s: Strategy = serde_json::from_str(r#"{"kind":"dwa"}"#).unwrap();
        assert_eq!(s, Strategy::Dwa { temperature: 2.0 });
        let s: Strategy = serde_json::from_str(r#"{"kind":"ls","weights":[1,0,0]}"#).unwrap();
        assert_eq!(s.label(), "ls[1.0, 0.0, 0.0]");
        assert!(serde_json::from_str::<Strategy>(r#"{"kind":"mpd","x":1}"#).is_err());
        assert!(serde_json::from_str::<Strategy>(r#"{"kind":"nash-mtl"}"#).is_err());
        assert!(serde_json::from_str::<Strategy>(r#"{"kind":"si","lr":1}"#).is_err());
        for s in [Strategy::Uw { lr: 0.5 }, Strategy::Ls { weights: None }, Strategy::Rlw] {
            let text = serde_json::to_string(&s).unwrap();
            assert_eq!(serde_json::from_str::<Strategy>(&text).unwrap(), s);
        }
    }

    #[test]
    fn solver_config_bounds() {
        assert!(SolverConfig::default().validate().is_ok());
        let cfg = SolverConfig {
            w_floor: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SolverConfig {
            eps_reg: -1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
