use crate::numerics::linalg::frac_power_of;
use crate::numerics::{SymEigen, SymMatrix};

use super::{FairMooError, FairWeights, GramMatrix, SolverConfig, StrategyTag};

/// Right-hand-side scale `(2λ)^{-1/2}` of `K·W = c·W^{-1/2}`.
fn rhs_scale(cfg: &SolverConfig) -> f64 {
    (2.0 * cfg.lagrange_lambda).powf(-0.5)
}

fn residual_vec(k: &SymMatrix, w: &[f64], c: f64) -> Vec<f64> {
    k.mul_vec(w)
        .iter()
        .zip(w)
        .map(|(kw, &wi)| kw - c / wi.sqrt())
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn regularized(k: &GramMatrix, eps_reg: f64) -> SymMatrix {
    SymMatrix::from_upper(k.k(), |i, j| {
        k.matrix().get(i, j) + if i == j { eps_reg } else { 0.0 }
    })
}

/// `‖K_ε·W − (2λ)^{-1/2}·W^{-1/2}‖` with `K_ε = K + eps_reg·I`, the system
/// both solvers target; zero exactly at its fixed point.
pub fn mpd_residual(k: &GramMatrix, w: &[f64], cfg: &SolverConfig) -> f64 {
    if w.len() != k.k() || w.iter().any(|&x| !(x > 0.0)) {
        return f64::INFINITY;
    }
    norm(&residual_vec(&regularized(k, cfg.eps_reg), w, rhs_scale(cfg)))
}

fn floor_weights(mut w: Vec<f64>, floor: f64) -> (Vec<f64>, bool) {
    let mut fired = false;
    for x in &mut w {
        // NaN compares false, so it is floored too.
        if !(*x >= floor) {
            *x = floor;
            fired = true;
        }
    }
    (w, fired)
}

/// Closed-form MPD weights `W = (2λ)^{-1/3}·(K + eps_reg·I)^{-2/3}·1`,
/// floored at `w_floor`.
pub fn mpd_weights_closed(k: &GramMatrix, cfg: &SolverConfig) -> Result<FairWeights, FairMooError> {
    cfg.validate()?;
    let eig = k.checked_eig()?;
    // Tolerated negative eigenvalues are round-off; treat them as zero.
    let eig = SymEigen {
        values: eig.values.iter().map(|&l| l.max(0.0)).collect(),
        vectors: eig.vectors,
    };
    let power = frac_power_of(&eig, -2.0 / 3.0, cfg.eps_reg)?;
    let scale = (2.0 * cfg.lagrange_lambda).powf(-1.0 / 3.0);
    let ones = vec![1.0; k.k()];
    let raw: Vec<f64> = power.mul_vec(&ones).iter().map(|v| v * scale).collect();
    let (w, floor_applied) = floor_weights(raw, cfg.w_floor);
    Ok(FairWeights {
        w,
        strategy: StrategyTag::Mpd,
        floor_applied,
    })
}

/// Outcome of [`mpd_weights_oracle`].
#[derive(Clone, Debug, PartialEq)]
pub struct OracleReport {
    pub weights: FairWeights,
    pub residual: f64,
    /// Residual of the floored closed-form start.
    pub closed_form_residual: f64,
    /// Residual of the all-ones start.
    pub ones_residual: f64,
    pub iterations: usize,
}

/// Numerical minimizer of `‖K·W − (2λ)^{-1/2}·W^{-1/2}‖²` over `W ≥ w_floor`.
///
/// Projected gradient descent with a backtracking (Armijo) step, run from
/// the closed-form weights and from all-ones; the lower-residual result is
/// returned. Each run is monotone, so the returned residual never exceeds
/// the residual at either start.
pub fn mpd_weights_oracle(k: &GramMatrix, cfg: &SolverConfig) -> Result<OracleReport, FairMooError> {
    cfg.validate()?;
    k.checked_eig()?;
    let kk = k.k();
    let regularized = regularized(k, cfg.eps_reg);
    let c = rhs_scale(cfg);

    let closed = mpd_weights_closed(k, cfg)?.w;
    let ones = vec![1.0_f64.max(cfg.w_floor); kk];

    let from_closed = descend(&regularized, c, closed, true, cfg)?;
    let from_ones = descend(&regularized, c, ones, false, cfg)?;
    let (best, other) = if from_closed.residual <= from_ones.residual {
        (from_closed, from_ones)
    } else {
        (from_ones, from_closed)
    };
    let (w, floor_applied) = (best.w, best.at_floor);
    Ok(OracleReport {
        residual: best.residual,
        closed_form_residual: if best.from_closed {
            best.start_residual
        } else {
            other.start_residual
        },
        ones_residual: if best.from_closed {
            other.start_residual
        } else {
            best.start_residual
        },
        iterations: best.iterations + other.iterations,
        weights: FairWeights {
            w,
            strategy: StrategyTag::MpdOracle,
            floor_applied,
        },
    })
}

struct Descent {
    w: Vec<f64>,
    residual: f64,
    start_residual: f64,
    iterations: usize,
    at_floor: bool,
    from_closed: bool,
}

fn descend(
    k: &SymMatrix,
    c: f64,
    start: Vec<f64>,
    from_closed: bool,
    cfg: &SolverConfig,
) -> Result<Descent, FairMooError> {
    let objective = |w: &[f64]| {
        let r = residual_vec(k, w, c);
        r.iter().map(|x| x * x).sum::<f64>()
    };
    let mut w: Vec<f64> = start.iter().map(|&x| x.max(cfg.w_floor)).collect();
    let mut f = objective(&w);
    if !f.is_finite() {
        return Err(FairMooError::OracleFailed(format!(
            "residual is not finite at the starting point {w:?}"
        )));
    }
    let start_residual = f.sqrt();
    let tol_sq = cfg.oracle_tol * cfg.oracle_tol;
    let mut step = cfg.oracle_step;
    let mut iterations = 0;
    while iterations < cfg.oracle_iters && f > tol_sq {
        iterations += 1;
        // ∇‖r‖² = 2·(K·r + (c/2)·W^{-3/2}⊙r) for symmetric K.
        let r = residual_vec(k, &w, c);
        let kr = k.mul_vec(&r);
        let grad: Vec<f64> = (0..w.len())
            .map(|i| 2.0 * (kr[i] + 0.5 * c * w[i].powf(-1.5) * r[i]))
            .collect();
        let mut accepted = false;
        for _ in 0..80 {
            let cand: Vec<f64> = w
                .iter()
                .zip(&grad)
                .map(|(wi, gi)| (wi - step * gi).max(cfg.w_floor))
                .collect();
            let fc = objective(&cand);
            let decrease: f64 = grad.iter().zip(w.iter().zip(&cand)).map(|(g, (a, b))| g * (a - b)).sum();
            if fc.is_finite() && fc <= f - 1e-4 * decrease && fc < f {
                w = cand;
                f = fc;
                accepted = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let at_floor = w.iter().any(|&x| x <= cfg.w_floor);
    Ok(Descent {
        w,
        residual: f.sqrt(),
        start_residual,
        iterations,
        at_floor,
        from_closed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gram_of(rows: &[Vec<f64>]) -> GramMatrix {
        GramMatrix::from_sym(SymMatrix::from_rows(rows).unwrap())
    }

    #[test]
    fn identity_gives_unit_weights() {
        let cfg = SolverConfig::default();
        let k = GramMatrix::from_sym(SymMatrix::identity(3));
        let w = mpd_weights_closed(&k, &cfg).unwrap();
        for x in &w.w {
            assert!((x - 1.0).abs() < 1e-9);
        }
        assert!(!w.floor_applied);
        let o = mpd_weights_oracle(&k, &cfg).unwrap();
        assert!(o.residual <= 1e-10);
    }

    #[test]
    fn diagonal_closed_form() {
        let cfg = SolverConfig {
            eps_reg: 0.0,
            ..Default::default()
        };
        let k = GramMatrix::from_sym(SymMatrix::diagonal(&[1.0, 8.0, 64.0]));
        let w = mpd_weights_closed(&k, &cfg).unwrap();
        let expected = [1.0, 0.25, 1.0 / 16.0];
        for (a, b) in w.w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
        assert!(mpd_residual(&k, &w.w, &cfg) < 1e-13);
        let o = mpd_weights_oracle(&k, &cfg).unwrap();
        for (a, b) in o.weights.w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn oracle_improves_on_coupled_gram() {
        let cfg = SolverConfig::default();
        let k = gram_of(&[vec![2.0, 0.5, 0.3], vec![0.5, 1.0, 0.2], vec![0.3, 0.2, 0.7]]);
        let closed = mpd_weights_closed(&k, &cfg).unwrap();
        let cf_res = mpd_residual(&k, &closed.w, &cfg);
        let o = mpd_weights_oracle(&k, &cfg).unwrap();
        assert!(o.residual <= cf_res + 1e-8);
        assert!((o.closed_form_residual - cf_res).abs() < 1e-9);
        // The fixed-point system has a unique positive root for SPD K.
        assert!(o.residual < 1e-8, "oracle residual {}", o.residual);
        assert!(cf_res > 1e-3, "closed form is exact only for diagonal K");
    }

    #[test]
    fn negative_entries_are_floored() {
        let cfg = SolverConfig::default();
        // Strongly aligned gradients of unequal norm push an entry of
        // K^{-2/3}·1 below zero.
        let k = gram_of(&[vec![1.0, 1.9], vec![1.9, 4.0]]);
        let w = mpd_weights_closed(&k, &cfg).unwrap();
        assert!(w.floor_applied);
        assert_eq!(w.w[1], cfg.w_floor);
        assert!((w.w[0] - 2.46347665).abs() < 1e-6);
        let k = gram_of(&[vec![1.0, -0.9], vec![-0.9, 1.0]]);
        let w = mpd_weights_closed(&k, &cfg).unwrap();
        assert!(!w.floor_applied);
    }

    #[test]
    fn lambda_rescales_weights() {
        let base = SolverConfig::default();
        let k = gram_of(&[vec![2.0, 0.5], vec![0.5, 1.0]]);
        let w_half = mpd_weights_closed(&k, &base).unwrap().w;
        let cfg = SolverConfig {
            lagrange_lambda: 4.0,
            ..base
        };
        let w4 = mpd_weights_closed(&k, &cfg).unwrap().w;
        for (a, b) in w_half.iter().zip(&w4) {
            assert!((b / a - 8f64.powf(-1.0 / 3.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_without_regularization_is_an_error() {
        let cfg = SolverConfig {
            eps_reg: 0.0,
            ..Default::default()
        };
        let k = gram_of(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(mpd_weights_closed(&k, &cfg).is_err());
        assert!(mpd_weights_closed(&k, &SolverConfig::default()).is_ok());
    }
}
