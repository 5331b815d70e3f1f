//! Baseline weighting strategies, in their standard formulations.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{
    gram, mpd_weights_closed, mpd_weights_oracle, FairMooError, FairWeights, ObjectiveBundle,
    SolverConfig, Strategy, StrategyTag,
};

/// Mutable per-run state of the stateful strategies.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StrategyState {
    /// Uncertainty weighting's `s_i = log σ_i`, created on first use at 0.
    pub uw_log_sigma: Option<Vec<f64>>,
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Weights of a non-MPD strategy.
///
/// `current` holds this step's losses; `history` holds the loss vectors of
/// earlier steps, oldest first. DWA needs two earlier steps. UW returns the
/// weights for the current `σ` and then advances `σ` by one gradient step
/// on `Σ l_i/(2σ_i²) + log σ_i`.
pub fn baseline_weights<R: Rng + ?Sized>(
    strategy: &Strategy,
    current: &[f64],
    history: &[Vec<f64>],
    state: &mut StrategyState,
    rng: &mut R,
) -> Result<FairWeights, FairMooError> {
    let k = current.len();
    if k == 0 {
        return Err(FairMooError::EmptyBundle);
    }
    let tag = strategy.tag();
    let w = match strategy {
        Strategy::Mpd | Strategy::MpdOracle => {
            return Err(FairMooError::InvalidConfig(format!(
                "{} weights come from the Gram matrix, not from losses",
                tag.name()
            )))
        }
        Strategy::Ls { weights: None } => vec![1.0; k],
        Strategy::Ls { weights: Some(w) } => {
            if w.len() != k {
                return Err(FairMooError::DimensionMismatch { expected: k, got: w.len() });
            }
            if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                return Err(FairMooError::InvalidConfig(format!(
                    "ls weights must be finite and >= 0, got {w:?}"
                )));
            }
            w.clone()
        }
        Strategy::GlobalOnly => {
            let mut w = vec![0.0; k];
            w[0] = 1.0;
            w
        }
        Strategy::Si => {
            positive(tag, current)?;
            current.iter().map(|l| 1.0 / l).collect()
        }
        Strategy::Dwa { temperature } => {
            if !(*temperature > 0.0 && temperature.is_finite()) {
                return Err(FairMooError::InvalidConfig(format!(
                    "dwa temperature must be finite and > 0, got {temperature}"
                )));
            }
            let n = history.len();
            if n < 2 {
                return Err(FairMooError::InsufficientHistory {
                    strategy: tag.name(),
                    needed: 2,
                    got: n,
                });
            }
            let (prev, prev2) = (&history[n - 1], &history[n - 2]);
            for h in [prev, prev2] {
                if h.len() != k {
                    return Err(FairMooError::DimensionMismatch { expected: k, got: h.len() });
                }
                positive(tag, h)?;
            }
            let r: Vec<f64> = prev.iter().zip(prev2).map(|(a, b)| a / b / temperature).collect();
            softmax(&r).iter().map(|p| k as f64 * p).collect()
        }
        Strategy::Rlw => {
            let z: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
            softmax(&z)
        }
        Strategy::Uw { lr } => {
            if !(*lr > 0.0 && lr.is_finite()) {
                return Err(FairMooError::InvalidLearningRate(*lr));
            }
            let s = state.uw_log_sigma.get_or_insert_with(|| vec![0.0; k]);
            if s.len() != k {
                return Err(FairMooError::DimensionMismatch { expected: k, got: s.len() });
            }
            let w: Vec<f64> = s.iter().map(|si| 0.5 * (-2.0 * si).exp()).collect();
            // ∂/∂s [l·e^{-2s}/2 + s] = 1 − l·e^{-2s}.
            for (si, l) in s.iter_mut().zip(current) {
                *si -= lr * (1.0 - l * (-2.0 * *si).exp());
            }
            w
        }
    };
    Ok(FairWeights::new(w, tag))
}

fn positive(tag: StrategyTag, losses: &[f64]) -> Result<(), FairMooError> {
    match losses.iter().position(|&l| !(l > 0.0 && l.is_finite())) {
        Some(index) => Err(FairMooError::NonPositiveLoss {
            strategy: tag.name(),
            index,
            value: losses[index],
        }),
        None => Ok(()),
    }
}

/// Weights of any strategy for `bundle`.
pub fn strategy_weights<R: Rng + ?Sized>(
    strategy: &Strategy,
    bundle: &ObjectiveBundle,
    history: &[Vec<f64>],
    state: &mut StrategyState,
    rng: &mut R,
    cfg: &SolverConfig,
) -> Result<FairWeights, FairMooError> {
    match strategy {
        Strategy::Mpd => mpd_weights_closed(&gram(bundle), cfg),
        Strategy::MpdOracle => Ok(mpd_weights_oracle(&gram(bundle), cfg)?.weights),
        other => baseline_weights(other, bundle.losses(), history, state, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng;

    fn run(s: &Strategy, cur: &[f64], hist: &[Vec<f64>]) -> Result<Vec<f64>, FairMooError> {
        baseline_weights(s, cur, hist, &mut StrategyState::default(), &mut rng(0)).map(|w| w.w)
    }

    #[test]
    fn fixed_strategies() {
        assert_eq!(run(&Strategy::Ls { weights: None }, &[1., 2., 3.], &[]).unwrap(), vec![1.; 3]);
        assert_eq!(run(&Strategy::GlobalOnly, &[1., 2., 3.], &[]).unwrap(), vec![1., 0., 0.]);
        assert!(run(&Strategy::Ls { weights: Some(vec![1., -1., 0.]) }, &[1.; 3], &[]).is_err());
        assert!(run(&Strategy::Mpd, &[1.; 3], &[]).is_err());
    }

    #[test]
    fn scale_invariant() {
        assert_eq!(run(&Strategy::Si, &[2., 4., 8.], &[]).unwrap(), vec![0.5, 0.25, 0.125]);
        assert!(matches!(
            run(&Strategy::Si, &[2., 0., 8.], &[]),
            Err(FairMooError::NonPositiveLoss { index: 1, .. })
        ));
    }

    #[test]
    fn dwa() {
        let dwa = Strategy::Dwa { temperature: 2.0 };
        let hist = vec![vec![2., 4., 8.], vec![1., 2., 4.]];
        let w = run(&dwa, &[1.; 3], &hist).unwrap();
        for x in w {
            assert!((x - 1.0).abs() < 1e-15);
        }
        assert!(matches!(
            run(&dwa, &[1.; 3], &hist[..1]),
            Err(FairMooError::InsufficientHistory { needed: 2, got: 1, .. })
        ));
        // A slower-decreasing objective gets more weight.
        let w = run(&dwa, &[1.; 2], &[vec![1., 1.], vec![0.5, 1.0]]).unwrap();
        assert!(w[1] > w[0]);
        assert!((w[0] + w[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn rlw_is_a_distribution() {
        let mut r = rng(3);
        let mut st = StrategyState::default();
        for _ in 0..50 {
            let w = baseline_weights(&Strategy::Rlw, &[1.; 3], &[], &mut st, &mut r).unwrap().w;
            assert!(w.iter().all(|&x| x > 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uw_moves_sigma_toward_loss() {
        let uw = Strategy::Uw { lr: 0.1 };
        let mut st = StrategyState::default();
        let mut r = rng(0);
        let w0 = baseline_weights(&uw, &[4.0, 0.25], &[], &mut st, &mut r).unwrap().w;
        assert_eq!(w0, vec![0.5, 0.5]);
        for _ in 0..2000 {
            baseline_weights(&uw, &[4.0, 0.25], &[], &mut st, &mut r).unwrap();
        }
        // Stationary point: σ² = l, so w = 1/(2l).
        let w = baseline_weights(&uw, &[4.0, 0.25], &[], &mut st, &mut r).unwrap().w;
        assert!((w[0] - 0.125).abs() < 1e-6, "{w:?}");
        assert!((w[1] - 2.0).abs() < 1e-6, "{w:?}");
    }
}
